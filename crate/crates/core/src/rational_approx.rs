//! Explicit rational approximation of `√(1-x)` on the closed unit disc and
//! the factorization built from it.
//!
//! The approximant is
//! `r̃(x) = (2h√2/π) Σ_{k=-d₋}^{d₊} [e^{hk} - 2e^{3hk} / (1 + 2e^{2hk} - x)]`
//! with `d₊ = ⌊(d-1)/2⌋`, `d₋ = ⌈(d-1)/2⌉` and `h = π/√(2d₊)`. Each term is a
//! simple pole at `a_k = 1 + 2e^{2hk} > 1`, i.e. a decay rate `θ_k = 1/a_k`.

use num_complex::Complex64;

use crate::blt_params::{BltFactorization, Method, RationalBlt};
use crate::error::{Error, Result};

/// One summand `offset - weight / (pole - x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewmanTerm {
    /// Node index `k`.
    pub k: i64,
    /// Pole location `1 + 2e^{2hk}`.
    pub pole: f64,
    /// Constant part `c·e^{hk}`.
    pub offset: f64,
    /// Numerator `c·2e^{3hk}`.
    pub weight: f64,
}

/// Terms of the approximant for one degree.
#[derive(Clone, Debug, PartialEq)]
pub struct SqrtApproxTerms {
    /// Number of nodes with `k > 0`.
    pub d_plus: usize,
    /// Number of nodes with `k < 0`.
    pub d_minus: usize,
    /// Node spacing.
    pub h: f64,
    /// One entry per node, ordered by `k`.
    pub terms: Vec<NewmanTerm>,
}

impl SqrtApproxTerms {
    /// Degree `d₊ + d₋ + 1`.
    pub fn degree(&self) -> usize {
        self.d_plus + self.d_minus + 1
    }

    /// `r̃(x)` for complex `x` away from the poles.
    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.offset - t.weight / (t.pole - x))
            .sum()
    }

    /// `r̃(0) = c Σ e^{hk} / (1 + 2e^{2hk})`, summed without cancellation.
    pub fn value_at_zero(&self) -> f64 {
        self.terms.iter().map(|t| t.offset / t.pole).sum()
    }

    /// `r̃ / r̃(0)` in pole/residue form with exactly coinciding poles merged.
    pub fn normalized_generator(&self) -> RationalBlt {
        let r0 = self.value_at_zero();
        let mut theta: Vec<f64> = Vec::with_capacity(self.terms.len());
        let mut omega: Vec<f64> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let th = 1.0 / t.pole;
            let w = -(t.weight / t.pole) * th / r0;
            match theta.iter().position(|&x| x == th) {
                Some(i) => omega[i] += w,
                None => {
                    theta.push(th);
                    omega.push(w);
                }
            }
        }
        RationalBlt { theta, omega }
    }
}

/// `8·exp(-(π/2)√(d-2))`, the uniform error guarantee on the unit disc.
pub fn approx_error_bound(d: usize) -> f64 {
    8.0 * (-std::f64::consts::FRAC_PI_2 * (d as f64 - 2.0).sqrt()).exp()
}

/// Terms of `√2·r_{d₊,d₋,h}((1-x)/2)` for an arbitrary spacing `h`.
pub fn newman_sqrt_general(d_plus: usize, d_minus: usize, h: f64) -> Result<SqrtApproxTerms> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "must be positive and finite"));
    }
    let c = 2.0 * h * std::f64::consts::SQRT_2 / std::f64::consts::PI;
    let terms = (-(d_minus as i64)..=d_plus as i64)
        .map(|k| {
            let e1 = (h * k as f64).exp();
            let e2 = (2.0 * h * k as f64).exp();
            NewmanTerm {
                k,
                pole: 1.0 + 2.0 * e2,
                offset: c * e1,
                weight: c * 2.0 * e1 * e2,
            }
        })
        .collect();
    Ok(SqrtApproxTerms {
        d_plus,
        d_minus,
        h,
        terms,
    })
}

/// The degree-`d` approximant with `h = π/√(2d₊)`.
pub fn newman_sqrt(d: usize) -> Result<SqrtApproxTerms> {
    if d < 3 {
        return Err(Error::invalid("d", "must be at least 3"));
    }
    let d_plus = (d - 1) / 2;
    let d_minus = d - 1 - d_plus;
    let h = std::f64::consts::PI / (2.0 * d_plus as f64).sqrt();
    newman_sqrt_general(d_plus, d_minus, h)
}

/// `r_{d₊,d₋,h}(x) = (2h/π) Σ x e^{hk} / (x + e^{2hk})`, approximating `√x` on `Re x ≥ 0`.
pub fn sqrt_approx_unscaled(d_plus: usize, d_minus: usize, h: f64, x: Complex64) -> Complex64 {
    let c = 2.0 * h / std::f64::consts::PI;
    (-(d_minus as i64)..=d_plus as i64)
        .map(|k| {
            let kf = k as f64;
            x * (h * kf).exp() / (x + (2.0 * h * kf).exp())
        })
        .sum::<Complex64>()
        * c
}

/// Right-hand side of the error decomposition for `r_{d₊,d₋,h}` at `x` with `Re x ≥ 0`.
pub fn sqrt_approx_error_bound(d_plus: usize, d_minus: usize, h: f64, x: Complex64) -> f64 {
    let pi = std::f64::consts::PI;
    let c = x.arg() / pi;
    let quad = 2.0
        * x.norm().sqrt()
        * (1.0 / (((1.0 - c) * pi * pi / h).exp() - 1.0) + 1.0 / (((1.0 + c) * pi * pi / h).exp() - 1.0));
    let trunc = 2.0 * h / (pi * h.exp_m1())
        * (x.norm() * (-h * d_plus as f64).exp() + (-h * d_minus as f64).exp());
    quad + trunc
}

/// Smallest degree meeting both `d ≥ 2 + ((12 + 4 ln n)/π)²` and
/// `16√n·exp(-(π/2)√(d-2)) ≤ μ/(4 + ln n)`.
pub fn degree_for_error(n: usize, mu: f64) -> Result<usize> {
    if n < 5 {
        return Err(Error::invalid("n", "must be at least 5"));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::invalid("mu", "must lie in (0, 1)"));
    }
    let pi = std::f64::consts::PI;
    let ln_n = (n as f64).ln();
    let first = 2.0 + ((12.0 + 4.0 * ln_n) / pi).powi(2);
    let root = (2.0 / pi) * (16.0 * (n as f64).sqrt() * (4.0 + ln_n) / mu).ln();
    let second = 2.0 + root.max(0.0).powi(2);
    Ok((first.max(second).ceil() as usize).max(3))
}

/// The factorization whose `C⁻¹` generator is `r̃/r̃(0)`.
///
/// Only the generator is stored; `C`'s coefficients come from series
/// division of it.
pub fn ra_blt_build(d: usize, n: usize) -> Result<BltFactorization> {
    let terms = newman_sqrt(d)?;
    BltFactorization::from_generator(terms.normalized_generator(), n, Method::Ra)
}

/// Trapezoid estimate of `(1/2π)∫|f - g|²` on `|x| = e^{-τ}` next to
/// `Σ_k |f_k - g_k|² e^{-2τk}`.
pub fn weighted_parseval_check(
    f: impl Fn(Complex64) -> Complex64,
    g: impl Fn(Complex64) -> Complex64,
    f_coeffs: &[f64],
    g_coeffs: &[f64],
    tau: f64,
    m: usize,
) -> Result<(f64, f64)> {
    if m < 16 {
        return Err(Error::invalid("m", "at least 16 quadrature points are required"));
    }
    if f_coeffs.len() != g_coeffs.len() {
        return Err(Error::LengthMismatch {
            left: f_coeffs.len(),
            right: g_coeffs.len(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    let radius = (-tau).exp();
    let integral = (0..m)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let x = Complex64::from_polar(radius, phi);
            (f(x) - g(x)).norm_sqr()
        })
        .sum::<f64>()
        / m as f64;
    let weight = (-2.0 * tau).exp();
    let mut w = 1.0;
    let mut sum = 0.0;
    for (a, b) in f_coeffs.iter().zip(g_coeffs) {
        sum += (a - b).powi(2) * w;
        w *= weight;
    }
    Ok((integral, sum))
}
