//! Scalar abstraction with a forward-mode dual number implementation.
//!
//! The closed-form error expressions are written once against [`Real`] and
//! evaluated either on plain `f64` or on [`Dual`], which carries the gradient
//! with respect to up to [`MAX_PARAMS`] inputs.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of partial derivatives tracked by [`Dual`].
pub const MAX_PARAMS: usize = 32;

/// Arithmetic needed by the closed-form error expressions.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Lifts a constant.
    fn cst(x: f64) -> Self;
    /// Primal value.
    fn val(self) -> f64;
    /// Square root.
    fn sqrt(self) -> Self;
    /// Natural logarithm.
    fn ln(self) -> Self;
    /// `ln(1 + x)`.
    fn ln_1p(self) -> Self;
    /// `exp(x) - 1`.
    fn exp_m1(self) -> Self;
}

impl Real for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn val(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
}

/// Value plus gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    /// Primal value.
    pub v: f64,
    /// Partial derivatives.
    pub d: [f64; MAX_PARAMS],
}

impl Dual {
    /// Independent variable number `index` with value `v`.
    pub fn var(v: f64, index: usize) -> Self {
        assert!(index < MAX_PARAMS, "dual index {index} out of range");
        let mut d = [0.0; MAX_PARAMS];
        d[index] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, slope: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= slope;
        }
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(mut self, o: Dual) -> Dual {
        self += o;
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(mut self, o: Dual) -> Dual {
        self -= o;
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(mut self, o: Dual) -> Dual {
        self *= o;
        self
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let v = self.v / o.v;
        let mut d = [0.0; MAX_PARAMS];
        for (i, x) in d.iter_mut().enumerate() {
            *x = (self.d[i] - v * o.d[i]) / o.v;
        }
        Dual { v, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.v += o.v;
        for (x, y) in self.d.iter_mut().zip(o.d) {
            *x += y;
        }
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, o: Dual) {
        self.v -= o.v;
        for (x, y) in self.d.iter_mut().zip(o.d) {
            *x -= y;
        }
    }
}

impl MulAssign for Dual {
    fn mul_assign(&mut self, o: Dual) {
        for (x, y) in self.d.iter_mut().zip(o.d) {
            *x = *x * o.v + self.v * y;
        }
        self.v *= o.v;
    }
}

impl Real for Dual {
    fn cst(x: f64) -> Self {
        Dual {
            v: x,
            d: [0.0; MAX_PARAMS],
        }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }
    fn exp_m1(self) -> Self {
        self.chain(self.v.exp_m1(), self.v.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives() {
        let x = 0.37;
        let cases: Vec<(fn(Dual) -> Dual, fn(f64) -> f64)> = vec![
            (|a| a.sqrt(), f64::sqrt),
            (|a| a.ln(), f64::ln),
            (|a| a.ln_1p(), f64::ln_1p),
            (|a| a.exp_m1(), f64::exp_m1),
            (|a| a * a / (Dual::cst(1.0) - a), |a| a * a / (1.0 - a)),
            (|a| -(a - Dual::cst(2.0)) * a, |a| -(a - 2.0) * a),
        ];
        for (fd_dual, ff) in cases {
            let out = fd_dual(Dual::var(x, 3));
            assert!((out.v - ff(x)).abs() < 1e-15);
            assert!((out.d[3] - fd(ff, x)).abs() < 1e-8);
            assert_eq!(out.d[0], 0.0);
        }
    }

    #[test]
    fn two_variables() {
        let a = Dual::var(1.5, 0);
        let b = Dual::var(-0.25, 1);
        let mut c = a * b + a / b;
        c -= b;
        c += Dual::cst(1.0);
        c *= a;
        // c = a(ab + a/b - b + 1)
        let (av, bv) = (1.5, -0.25);
        assert!((c.v - av * (av * bv + av / bv - bv + 1.0)).abs() < 1e-14);
        let dca = 2.0 * av * bv + 2.0 * av / bv - bv + 1.0;
        let dcb = av * (av - av / (bv * bv) - 1.0);
        assert!((c.d[0] - dca).abs() < 1e-12);
        assert!((c.d[1] - dcb).abs() < 1e-12);
    }
}
