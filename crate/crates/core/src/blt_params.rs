//! Rational generating functions of degree `d` and their representations.
//!
//! Three forms are used throughout the crate:
//!
//! * pole/residue: `r(x) = 1 + x Σ ω_i / (1 - θ_i x)`, so `r_0 = 1` and
//!   `r_k = Σ ω_i θ_i^{k-1}` for `k ≥ 1` ([`RationalBlt`]);
//! * matrix power: `r_k = uᵀ W^k v + t·[k = 0]` ([`MatrixPowerForm`]);
//! * root pairs: `r = ∏(1 - θ̂_i x) / ∏(1 - θ_i x)`, the `2d` numbers a
//!   factorization is stored as ([`BltFactorization`]).
//!
//! A factorization of the all-ones lower-triangular matrix `A = BC` is built
//! from one generator `r`: `C⁻¹` has generator `r`, `B = A C⁻¹` has generator
//! `r/(1-x)` and `C` has generator `s = 1/r`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::seq_core::{cauchy_product, Matrix, ToeplitzSeq};

/// Pole/residue form `r(x) = 1 + x Σ ω_i / (1 - θ_i x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalBlt {
    /// Reciprocal poles, i.e. per-buffer decay rates.
    pub theta: Vec<f64>,
    /// Residues, i.e. per-buffer output weights.
    pub omega: Vec<f64>,
}

impl RationalBlt {
    /// Validates lengths and finiteness.
    pub fn new(theta: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if theta.len() != omega.len() {
            return Err(Error::LengthMismatch {
                left: theta.len(),
                right: omega.len(),
            });
        }
        if let Some(index) = theta.iter().chain(&omega).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                index: index % theta.len().max(1),
            });
        }
        Ok(Self { theta, omega })
    }

    /// The constant generator `r = 1`.
    pub fn one() -> Self {
        Self {
            theta: Vec::new(),
            omega: Vec::new(),
        }
    }

    /// Number of buffers.
    pub fn degree(&self) -> usize {
        self.theta.len()
    }

    /// `r_0, …, r_{n-1}` in `O(n d)`.
    pub fn coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        let mut out = Vec::with_capacity(n);
        out.push(1.0);
        let mut pw: Vec<f64> = self.omega.clone();
        for _ in 1..n {
            out.push(pw.iter().sum());
            for (p, th) in pw.iter_mut().zip(&self.theta) {
                *p *= th;
            }
        }
        ToeplitzSeq::new(out)
    }

    /// Coefficients of `1/r` in `O(n d)`.
    ///
    /// Uses `s_k = -Σ_i ω_i a_i(k)` with `a_i(k) = s_{k-1} + θ_i a_i(k-1)`,
    /// the long-division recurrence with the inner convolution kept in `d`
    /// geometric accumulators.
    pub fn reciprocal_coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        let mut acc = vec![0.0; self.degree()];
        let mut out = Vec::with_capacity(n);
        out.push(1.0);
        for k in 1..n {
            let prev = out[k - 1];
            let mut s = 0.0;
            for ((a, th), w) in acc.iter_mut().zip(&self.theta).zip(&self.omega) {
                *a = prev + th * *a;
                s -= w * *a;
            }
            out.push(s);
        }
        ToeplitzSeq::new(out)
    }

    /// Additive constant of the diagonal matrix form, `1 - Σ ω_i/θ_i`.
    pub fn t(&self) -> f64 {
        1.0 - self
            .omega
            .iter()
            .zip(&self.theta)
            .map(|(w, th)| w / th)
            .sum::<f64>()
    }

    /// Diagonal matrix form `u = 1`, `W = diag θ`, `v = ω/θ`, `t = 1 - Σ ω/θ`.
    pub fn matrix_form(&self) -> Result<MatrixPowerForm> {
        if let Some(index) = self.theta.iter().position(|&t| t == 0.0) {
            return Err(Error::ZeroRoot { index });
        }
        let v = self
            .omega
            .iter()
            .zip(&self.theta)
            .map(|(w, th)| w / th)
            .collect();
        Ok(MatrixPowerForm {
            u: vec![1.0; self.degree()],
            w: Transition::Diagonal(self.theta.clone()),
            v,
            t: self.t(),
        })
    }
}

/// `r_0, …, r_{n-1}` of a pole/residue generator.
pub fn blt_coeffs(b: &RationalBlt, n: usize) -> Result<ToeplitzSeq> {
    b.coeffs(n)
}

/// State transition matrix of a matrix-power form.
#[derive(Clone, Debug, PartialEq)]
pub enum Transition {
    /// `W = diag(θ)`.
    Diagonal(Vec<f64>),
    /// Arbitrary square `W`.
    Dense(Matrix),
}

impl Transition {
    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Transition::Diagonal(t) => t.len(),
            Transition::Dense(m) => m.rows(),
        }
    }

    /// `W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Transition::Diagonal(t) => t.iter().zip(x).map(|(a, b)| a * b).collect(),
            Transition::Dense(m) => (0..m.rows())
                .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// `Wᵀ x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Transition::Diagonal(_) => self.apply(x),
            Transition::Dense(m) => {
                let mut out = vec![0.0; m.cols()];
                for (i, xi) in x.iter().enumerate() {
                    for (o, a) in out.iter_mut().zip(m.row(i)) {
                        *o += a * xi;
                    }
                }
                out
            }
        }
    }

    /// Dense copy of `W`.
    pub fn to_dense(&self) -> Matrix {
        match self {
            Transition::Diagonal(t) => {
                let mut m = Matrix::zeros(t.len(), t.len());
                for (i, x) in t.iter().enumerate() {
                    m[(i, i)] = *x;
                }
                m
            }
            Transition::Dense(m) => m.clone(),
        }
    }
}

/// `r_k = uᵀ W^k v + t·[k = 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPowerForm {
    /// Read-out vector.
    pub u: Vec<f64>,
    /// Transition matrix.
    pub w: Transition,
    /// Input vector.
    pub v: Vec<f64>,
    /// Additive constant at `k = 0`.
    pub t: f64,
}

impl MatrixPowerForm {
    /// Checks that `u`, `W` and `v` agree in dimension.
    pub fn new(u: Vec<f64>, w: Transition, v: Vec<f64>, t: f64) -> Result<Self> {
        let d = w.dim();
        if let Transition::Dense(m) = &w {
            if m.rows() != m.cols() {
                return Err(Error::ShapeMismatch {
                    expected: "square W".into(),
                    got: format!("{}x{}", m.rows(), m.cols()),
                });
            }
        }
        for len in [u.len(), v.len()] {
            if len != d {
                return Err(Error::LengthMismatch { left: d, right: len });
            }
        }
        Ok(Self { u, w, v, t })
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    /// `r_0, …, r_{n-1}` by repeated application of `W`.
    pub fn coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        let mut x = self.v.clone();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut rk: f64 = self.u.iter().zip(&x).map(|(a, b)| a * b).sum();
            if k == 0 {
                rk += self.t;
            }
            out.push(rk);
            x = self.w.apply(&x);
        }
        ToeplitzSeq::new(out)
    }

    /// Folds `t` into the state by appending a zero row and column.
    pub fn padded(&self) -> MatrixPowerForm {
        let d = self.dim();
        let mut w = Matrix::zeros(d + 1, d + 1);
        let old = self.w.to_dense();
        for i in 0..d {
            for j in 0..d {
                w[(i, j)] = old[(i, j)];
            }
        }
        let mut u = self.u.clone();
        u.push(1.0);
        let mut v = self.v.clone();
        v.push(self.t);
        MatrixPowerForm {
            u,
            w: Transition::Dense(w),
            v,
            t: 0.0,
        }
    }
}

/// Companion form of `p̄/q` with `q_0 = 1`.
///
/// When `deg p̄ = deg q` the leading part is split off as the additive
/// constant `t = p̄_d / q_d`, leaving a numerator of degree `< d`.
pub fn companion_form(p_bar: &[f64], q: &[f64]) -> Result<MatrixPowerForm> {
    if q.first() != Some(&1.0) {
        return Err(Error::invalid("q", "constant term must be 1"));
    }
    let mut q = q.to_vec();
    let mut d = (q.len() - 1).max(p_bar.len().saturating_sub(1));
    q.resize(d + 1, 0.0);
    let mut p = p_bar.to_vec();
    p.resize(d + 1, 0.0);
    let mut t = 0.0;
    if p[d] != 0.0 {
        if d > 0 && q[d] != 0.0 {
            t = p[d] / q[d];
            for (pi, qi) in p.iter_mut().zip(&q) {
                *pi -= t * qi;
            }
        } else if d == 0 {
            t = p[0];
            p[0] = 0.0;
        } else {
            d += 1;
            q.push(0.0);
            p.push(0.0);
        }
    }
    p.truncate(d);
    let mut w = Matrix::zeros(d, d);
    for i in 0..d {
        w[(i, 0)] = -q[i + 1];
        if i + 1 < d {
            w[(i, i + 1)] = 1.0;
        }
    }
    let mut u = vec![0.0; d];
    if d > 0 {
        u[0] = 1.0;
    }
    MatrixPowerForm::new(u, Transition::Dense(w), p, t)
}

/// Matrix form of `1/r` (`beta = 0`) or `1/(r(x)(1-x))` (`beta = 1`).
///
/// A nonzero additive constant is first folded into the state. The input is
/// rescaled to `⟨u, v⟩ = 1` and the scale restored on the output.
pub fn reciprocal_matrix_form(f: &MatrixPowerForm, beta: u8) -> Result<MatrixPowerForm> {
    if beta > 1 {
        return Err(Error::invalid("beta", "must be 0 or 1"));
    }
    let f = if f.t != 0.0 { f.padded() } else { f.clone() };
    let d = f.dim();
    let r0: f64 = f.u.iter().zip(&f.v).map(|(a, b)| a * b).sum();
    if r0 == 0.0 {
        return Err(Error::ZeroConstantTerm);
    }
    let v: Vec<f64> = f.v.iter().map(|x| x / r0).collect();
    let w = f.w.to_dense();
    let wt_u = f.w.apply_transpose(&f.u);
    // W - v (uᵀ W) = W - v (Wᵀ u)ᵀ
    let mut big = Matrix::zeros(d + 1, d + 1);
    big[(0, 0)] = beta as f64;
    for i in 0..d {
        big[(i + 1, 0)] = v[i];
        for j in 0..d {
            big[(i + 1, j + 1)] = w[(i, j)] - v[i] * wt_u[j];
        }
    }
    let mut u = Vec::with_capacity(d + 1);
    u.push(1.0);
    u.extend(wt_u.iter().map(|x| -x));
    let mut v_out = vec![0.0; d + 1];
    v_out[0] = 1.0 / r0;
    MatrixPowerForm::new(u, Transition::Dense(big), v_out, 0.0)
}

/// Residues of `∏(1 - θ̂_k x) / ∏(1 - θ_i x)` in the form `1 + x Σ ω_i/(1 - θ_i x)`.
///
/// Uses `ω_i = ∏_k (θ_i - θ̂_k) / ∏_{j≠i} (θ_i - θ_j)`, which is the Lagrange
/// interpolation solution after clearing the `θ_i` powers. Both arguments
/// must have the same length; roots are not validated here.
pub fn residues<T: Real>(poles: &[T], zeros: &[T]) -> Vec<T> {
    poles
        .iter()
        .enumerate()
        .map(|(i, &ti)| {
            let mut num = T::cst(1.0);
            for &z in zeros {
                num *= ti - z;
            }
            let mut den = T::cst(1.0);
            for (j, &tj) in poles.iter().enumerate() {
                if j != i {
                    den *= ti - tj;
                }
            }
            num / den
        })
        .collect()
}

/// Residues of `r = p/q` and of `s = q/p` from the reciprocal roots of `q` (θ) and `p` (θ̂).
pub fn residues_from_roots(theta: &[f64], theta_hat: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.len() != theta_hat.len() {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: theta_hat.len(),
        });
    }
    check_roots(theta)?;
    check_roots(theta_hat)?;
    Ok((residues(theta, theta_hat), residues(theta_hat, theta)))
}

/// Rejects non-finite, zero, or repeated roots.
pub fn check_roots(roots: &[f64]) -> Result<()> {
    for (i, &a) in roots.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if a == 0.0 {
            return Err(Error::ZeroRoot { index: i });
        }
        if let Some(j) = roots[i + 1..].iter().position(|&b| b == a) {
            return Err(Error::RepeatedRoot {
                value: a,
                first: i,
                second: i + 1 + j,
            });
        }
    }
    Ok(())
}

/// Coefficients `c_0..c_d` of `∏(1 - ρ_i x)`.
pub fn poly_from_reciprocal_roots(roots: &[f64]) -> Vec<f64> {
    let mut c = vec![1.0];
    for &rho in roots {
        c.push(0.0);
        for k in (1..c.len()).rev() {
            c[k] -= rho * c[k - 1];
        }
    }
    c
}

/// How a factorization was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Explicit rational approximation of `√(1-x)`.
    Ra,
    /// Numerically optimized roots.
    Opt,
    /// The closed-form single-buffer construction.
    Degree1,
    /// `C = I`, `B = A`.
    Identity,
}

impl Method {
    /// Lower-case name used in files and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ra => "ra",
            Method::Opt => "opt",
            Method::Degree1 => "degree1",
            Method::Identity => "identity",
        }
    }
}

/// A factorization `A = BC` defined by the generator `r` of `C⁻¹`.
///
/// `C` is described in pole form when its roots are known; otherwise its
/// coefficients are obtained from `r` by series division.
#[derive(Clone, Debug, PartialEq)]
pub struct BltFactorization {
    inverse: RationalBlt,
    c_side: Option<RationalBlt>,
    n: usize,
    method: Method,
}

impl BltFactorization {
    /// Builds from the reciprocal roots of `q` (θ, B side) and `p` (θ̂, C side).
    pub fn from_roots(theta: Vec<f64>, theta_hat: Vec<f64>, n: usize, method: Method) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        let (omega, omega_hat) = residues_from_roots(&theta, &theta_hat)?;
        let inverse = RationalBlt::new(theta, omega)?;
        let c_side = RationalBlt::new(theta_hat, omega_hat)?;
        Ok(Self {
            inverse,
            c_side: Some(c_side),
            n,
            method,
        })
    }

    /// Builds from the generator of `C⁻¹` alone.
    pub fn from_generator(r: RationalBlt, n: usize, method: Method) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        Ok(Self {
            inverse: r,
            c_side: None,
            n,
            method,
        })
    }

    /// `C = I`, `B = A`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_roots(Vec::new(), Vec::new(), n, Method::Identity)
    }

    /// Number of buffers.
    pub fn degree(&self) -> usize {
        self.inverse.degree()
    }

    /// Target step count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Construction method.
    pub fn method(&self) -> Method {
        self.method
    }

    /// Reciprocal poles of `r` (B side).
    pub fn theta(&self) -> &[f64] {
        &self.inverse.theta
    }

    /// Residues of `r` (B side).
    pub fn omega(&self) -> &[f64] {
        &self.inverse.omega
    }

    /// Reciprocal zeros of `r` (C side); empty when only the generator is known.
    pub fn theta_hat(&self) -> &[f64] {
        self.c_side.as_ref().map_or(&[], |c| &c.theta)
    }

    /// Residues of `1/r` (C side); empty when only the generator is known.
    pub fn omega_hat(&self) -> &[f64] {
        self.c_side.as_ref().map_or(&[], |c| &c.omega)
    }

    /// Generator of `C⁻¹`.
    pub fn inverse_generator(&self) -> &RationalBlt {
        &self.inverse
    }

    /// Pole form of the generator of `C`, when known.
    pub fn c_generator(&self) -> Option<&RationalBlt> {
        self.c_side.as_ref()
    }

    /// Coefficients of `C⁻¹`.
    pub fn c_inverse_coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        self.inverse.coeffs(n)
    }

    /// Coefficients of `C`.
    pub fn c_coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        match &self.c_side {
            Some(c) => c.coeffs(n),
            None => self.inverse.reciprocal_coeffs(n),
        }
    }

    /// Coefficients of `B`, the running sums of those of `C⁻¹`.
    pub fn b_coeffs(&self, n: usize) -> Result<ToeplitzSeq> {
        Ok(self.inverse.coeffs(n)?.prefix_sums())
    }

    /// Returns a copy targeting a different step count.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        Ok(Self { n, ..self.clone() })
    }

    /// Largest entry of `|B C - A|` over the leading `n × n` block (dense, test scale).
    pub fn validity_residual(&self, n: usize) -> Result<f64> {
        let bc = cauchy_product(&self.b_coeffs(n)?, &self.c_coeffs(n)?)?;
        Ok(bc.coeffs().iter().map(|c| (c - 1.0).abs()).fold(0.0, f64::max))
    }
}

/// Parameters of the single-buffer construction `c(x) = 1 + a² x / (1 - λ x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degree1 {
    /// Decay `λ = 1 - n^{-2/3}`.
    pub lambda: f64,
    /// Weight `a² = n^{-1/3}(1 - n^{-1/3})`.
    pub a2: f64,
}

impl Degree1 {
    /// Generator of `C`.
    pub fn c_generator(&self) -> RationalBlt {
        RationalBlt {
            theta: vec![self.lambda],
            omega: vec![self.a2],
        }
    }

    /// Generator of `C⁻¹`, `1 - a² x / (1 - (λ - a²) x)`.
    pub fn c_inverse_generator(&self) -> RationalBlt {
        RationalBlt {
            theta: vec![self.lambda - self.a2],
            omega: vec![-self.a2],
        }
    }

    /// Upper bound `1 + a⁴/(1 - λ²)` on the squared sensitivity.
    pub fn sensitivity_sq_bound(&self) -> f64 {
        1.0 + self.a2 * self.a2 / (1.0 - self.lambda * self.lambda)
    }

    /// The factorization with `θ = λ - a²` and `θ̂ = λ`.
    pub fn factorization(&self, n: usize) -> Result<BltFactorization> {
        BltFactorization::from_roots(
            vec![self.lambda - self.a2],
            vec![self.lambda],
            n,
            Method::Degree1,
        )
    }
}

/// `λ` and `a²` for horizon `n ≥ 2`.
pub fn degree1_closed_form(n: usize) -> Result<Degree1> {
    if n < 2 {
        return Err(Error::invalid("n", "must be at least 2"));
    }
    let cube_root = (n as f64).cbrt();
    Ok(Degree1 {
        lambda: 1.0 - 1.0 / (cube_root * cube_root),
        a2: (1.0 - 1.0 / cube_root) / cube_root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq_core::series_reciprocal;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-300
    }

    /// Series of `p/q` by polynomial long division.
    fn ratio_series(p: &[f64], q: &[f64], n: usize) -> Vec<f64> {
        let mut pp = p.to_vec();
        pp.resize(n, 0.0);
        let mut qq = q.to_vec();
        qq.resize(n, 0.0);
        let qinv = series_reciprocal(&ToeplitzSeq::new(qq).unwrap()).unwrap();
        cauchy_product(&ToeplitzSeq::new(pp).unwrap(), &qinv)
            .unwrap()
            .into_vec()
    }

    #[test]
    fn residues_single_pole() {
        let (w, wh) = residues_from_roots(&[0.5], &[0.25]).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15);
        assert!((wh[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn residues_equal_lists_vanish() {
        let th = [0.9, 0.4, 0.1];
        let (w, wh) = residues_from_roots(&th, &th).unwrap();
        assert!(w.iter().chain(&wh).all(|x| *x == 0.0));
    }

    #[test]
    fn residues_reject_bad_roots() {
        assert!(matches!(
            residues_from_roots(&[0.5, 0.5], &[0.1, 0.2]),
            Err(Error::RepeatedRoot { .. })
        ));
        assert!(matches!(
            residues_from_roots(&[0.5, 0.0], &[0.1, 0.2]),
            Err(Error::ZeroRoot { .. })
        ));
        assert!(residues_from_roots(&[0.5], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn residues_reproduce_polynomial_ratio() {
        let theta = [0.93, 0.61, 0.2];
        let theta_hat = [0.97, 0.75, 0.33];
        let (w, wh) = residues_from_roots(&theta, &theta_hat).unwrap();
        let p = poly_from_reciprocal_roots(&theta_hat);
        let q = poly_from_reciprocal_roots(&theta);
        let r_oracle = ratio_series(&p, &q, 64);
        let s_oracle = ratio_series(&q, &p, 64);
        let r = RationalBlt::new(theta.to_vec(), w).unwrap().coeffs(64).unwrap();
        let s = RationalBlt::new(theta_hat.to_vec(), wh).unwrap().coeffs(64).unwrap();
        for k in 0..64 {
            assert!(rel_close(r[k], r_oracle[k], 1e-9), "r_{k}");
            assert!(rel_close(s[k], s_oracle[k], 1e-9), "s_{k}");
        }
    }

    #[test]
    fn coeff_examples() {
        let r = RationalBlt::new(vec![0.5], vec![0.5]).unwrap();
        assert_eq!(r.coeffs(4).unwrap().coeffs(), &[1.0, 0.5, 0.25, 0.125]);
        let ones = RationalBlt::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(ones.coeffs(3).unwrap().coeffs(), &[1.0, 1.0, 1.0]);
        assert!(r.coeffs(0).is_err());
    }

    #[test]
    fn coeffs_match_matrix_power_form() {
        let r = RationalBlt::new(vec![0.8, -0.3], vec![-0.4, 0.7]).unwrap();
        let direct = r.coeffs(40).unwrap();
        let via_form = r.matrix_form().unwrap().coeffs(40).unwrap();
        for k in 0..40 {
            assert!(rel_close(direct[k], via_form[k], 1e-12), "k={k}");
        }
    }

    #[test]
    fn reciprocal_coeffs_match_series_division() {
        let r = RationalBlt::new(vec![0.9, 0.5, 0.1], vec![-0.3, -0.1, 0.05]).unwrap();
        let fast = r.reciprocal_coeffs(100).unwrap();
        let slow = series_reciprocal(&r.coeffs(100).unwrap()).unwrap();
        for k in 0..100 {
            assert!((fast[k] - slow[k]).abs() < 1e-12 * (1.0 + slow[k].abs()));
        }
    }

    #[test]
    fn companion_examples() {
        let f = companion_form(&[1.0], &[1.0, -0.5]).unwrap();
        assert_eq!(f.u, vec![1.0]);
        assert_eq!(f.w.to_dense().as_slice(), &[0.5]);
        assert_eq!(f.v, vec![1.0]);
        assert_eq!(f.t, 0.0);

        let q = [1.0, -0.7, 0.1];
        let f = companion_form(&q, &q).unwrap();
        assert_eq!(f.t, 1.0);
        assert!(f.v.iter().all(|x| *x == 0.0));
        assert_eq!(f.coeffs(5).unwrap().coeffs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);

        assert!(companion_form(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn companion_matches_long_division() {
        let p = [0.4, -1.2, 0.3, 0.9];
        let q = [1.0, -1.1, 0.35, -0.02];
        let f = companion_form(&p, &q).unwrap();
        let oracle = ratio_series(&p, &q, 64);
        let got = f.coeffs(64).unwrap();
        for k in 0..64 {
            assert!(rel_close(got[k], oracle[k], 1e-10), "k={k}");
        }
        // Numerator of lower degree and denominator shorter than numerator.
        let f = companion_form(&[1.0, 2.0, 3.0], &[1.0, -0.5]).unwrap();
        let oracle = ratio_series(&[1.0, 2.0, 3.0], &[1.0, -0.5], 20);
        let got = f.coeffs(20).unwrap();
        for k in 0..20 {
            assert!(rel_close(got[k], oracle[k], 1e-12), "k={k}");
        }
    }

    #[test]
    fn companion_spectrum_is_reciprocal_roots() {
        let roots = [0.9, 0.45, -0.2];
        let q = poly_from_reciprocal_roots(&roots);
        let f = companion_form(&[1.0, 0.5], &q).unwrap();
        let w = f.w.to_dense();
        let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
        let mut eig: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (e, r) in eig.iter().zip(roots) {
            assert!((e - r).abs() < 1e-8);
        }
        // q_d = 0 contributes a zero eigenvalue.
        let f = companion_form(&[1.0, 0.0, 0.0], &[1.0, -0.5]).unwrap();
        let w = f.w.to_dense();
        let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
        let mut eig: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((eig[0] - 0.5).abs() < 1e-8 && eig[1].abs() < 1e-8);
    }

    #[test]
    fn reciprocal_form_examples() {
        let geo = MatrixPowerForm::new(vec![1.0], Transition::Diagonal(vec![1.0]), vec![1.0], 0.0).unwrap();
        let inv = reciprocal_matrix_form(&geo, 0).unwrap();
        let c = inv.coeffs(6).unwrap();
        assert_eq!(c.coeffs(), &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);

        let one = MatrixPowerForm::new(vec![], Transition::Diagonal(vec![]), vec![], 1.0).unwrap();
        let inv = reciprocal_matrix_form(&one, 0).unwrap();
        assert_eq!(inv.coeffs(4).unwrap().coeffs(), &[1.0, 0.0, 0.0, 0.0]);

        let zero = MatrixPowerForm::new(vec![1.0], Transition::Diagonal(vec![0.5]), vec![0.0], 0.0).unwrap();
        assert!(reciprocal_matrix_form(&zero, 0).is_err());
        assert!(reciprocal_matrix_form(&geo, 2).is_err());
    }

    #[test]
    fn reciprocal_form_matches_series() {
        let r = RationalBlt::new(vec![0.85, 0.3], vec![-0.25, -0.05]).unwrap();
        let form = r.matrix_form().unwrap();
        let series = series_reciprocal(&r.coeffs(64).unwrap()).unwrap();
        let c0 = reciprocal_matrix_form(&form, 0).unwrap().coeffs(64).unwrap();
        let c1 = reciprocal_matrix_form(&form, 1).unwrap().coeffs(64).unwrap();
        let prefix = series.prefix_sums();
        for k in 0..64 {
            assert!(rel_close(c0[k], series[k], 1e-9), "beta=0 k={k}");
            assert!(rel_close(c1[k], prefix[k], 1e-9), "beta=1 k={k}");
        }
        // A form with r_0 != 1 is rescaled internally.
        let scaled = MatrixPowerForm::new(vec![2.0], Transition::Diagonal(vec![0.5]), vec![1.5], 0.0).unwrap();
        let inv = reciprocal_matrix_form(&scaled, 0).unwrap().coeffs(30).unwrap();
        let oracle = series_reciprocal(&scaled.coeffs(30).unwrap()).unwrap();
        for k in 0..30 {
            assert!(rel_close(inv[k], oracle[k], 1e-9));
        }
    }

    #[test]
    fn degree1_examples() {
        let p = degree1_closed_form(64).unwrap();
        assert!((p.lambda - 0.9375).abs() < 1e-15);
        assert!((p.a2 - 0.1875).abs() < 1e-15);
        let cinv = p.c_inverse_generator().coeffs(3).unwrap();
        assert!((cinv[2] + 0.140625).abs() < 1e-15);
        let f = p.factorization(64).unwrap();
        assert!((f.omega()[0] + p.a2).abs() < 1e-15);
        assert!((f.omega_hat()[0] - p.a2).abs() < 1e-15);
        assert!(degree1_closed_form(1).is_err());
    }

    #[test]
    fn identity_factorization() {
        let f = BltFactorization::identity(5).unwrap();
        assert_eq!(f.degree(), 0);
        assert_eq!(f.c_coeffs(5).unwrap().coeffs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.b_coeffs(5).unwrap().coeffs(), &[1.0; 5]);
    }

    fn arb_roots(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..0.99, d).prop_filter("distinct", |v| {
            v.iter().enumerate().all(|(i, a)| v[i + 1..].iter().all(|b| (a - b).abs() > 1e-3))
        })
    }

    proptest! {
        #[test]
        fn factorization_reproduces_all_ones(
            (theta, theta_hat) in (1usize..=5).prop_flat_map(|d| (arb_roots(d), arb_roots(d)))
        ) {
            let f = BltFactorization::from_roots(theta, theta_hat, 64, Method::Opt).unwrap();
            let n = 64;
            let b = f.b_coeffs(n).unwrap().to_dense().unwrap();
            let c = f.c_coeffs(n).unwrap().to_dense().unwrap();
            let scale = b.max_row_norm() * c.max_col_norm();
            let bc = b.matmul(&c).unwrap();
            prop_assert!(bc.max_abs_diff(&Matrix::all_ones_lower(n)) <= 1e-8 * scale.max(1.0));
        }

        #[test]
        fn reciprocal_pair_multiplies_to_unit(
            (theta, theta_hat) in (1usize..=5).prop_flat_map(|d| (arb_roots(d), arb_roots(d)))
        ) {
            let f = BltFactorization::from_roots(theta, theta_hat, 128, Method::Opt).unwrap();
            let e = cauchy_product(&f.c_inverse_coeffs(128).unwrap(), &f.c_coeffs(128).unwrap()).unwrap();
            let scale = f.c_inverse_coeffs(128).unwrap().sum_squares().sqrt()
                * f.c_coeffs(128).unwrap().sum_squares().sqrt();
            for (k, c) in e.coeffs().iter().enumerate() {
                let want = if k == 0 { 1.0 } else { 0.0 };
                prop_assert!((c - want).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
