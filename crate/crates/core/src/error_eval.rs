//! Closed-form sensitivity, row norm and MaxErr, plus reference bounds.
//!
//! With `b = r/(1-x)` the last row of `B` has entries
//! `t_k = 1 + Σ_j ω_j γ_k(θ_j)`, so its squared norm is
//! `n + 2 Σ_j ω_j G1_n(θ_j) + Σ_{j,k} ω_j ω_k G2_n(θ_j, θ_k)` where
//! `G1_n(a) = Σ_{k<n} γ_k(a)` and `G2_n(a, b) = Σ_{k<n} γ_k(a) γ_k(b)`.
//! Poles with `n(1-θ) ≥ 1` are rewritten as `ω γ_k(θ) = c - c θ^k` with
//! `c = ω/(1-θ)`, which keeps the terms of the expansion `O(c²)` rather
//! than `O(n ω²)` when large residues cancel.
//! The first column of `C` gives the squared sensitivity
//! `1 + Σ_{j,k} ω̂_j ω̂_k γ_{n-1}(θ̂_j θ̂_k)`.
//!
//! Everything is generic over [`Real`] so the optimizer can differentiate it.

use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::blt_params::BltFactorization;
use crate::error::{Error, Result};
use crate::seq_core::ToeplitzSeq;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this value of `n(1-θ)` the closed form `(1-θⁿ)/(1-θ)` loses digits.
const SERIES_THRESHOLD: f64 = 1e-3;

/// Below this value of `n(1-θ)` the sums of geometric sums use doubling.
const DOUBLING_THRESHOLD: f64 = 1.0;

/// `x^n` by binary powering.
fn powi<T: Real>(x: T, mut n: usize) -> T {
    let mut base = x;
    let mut acc = T::cst(1.0);
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base = base * base;
        n >>= 1;
    }
    acc
}

/// `γ_n(θ) = Σ_{i<n} θ^i`.
///
/// Near `θ = 1` a binomial series in `ε = 1 - θ` is used, elsewhere
/// `-expm1(n·ln(1-ε))/ε`, and for `θ ≤ 1/2` the direct quotient.
pub fn geometric_prefix<T: Real>(theta: T, n: usize) -> T {
    if n == 0 {
        return T::cst(0.0);
    }
    let eps = T::cst(1.0) - theta;
    let nf = n as f64;
    if theta.val() <= 0.5 {
        return (T::cst(1.0) - powi(theta, n)) / eps;
    }
    if (eps.val() * nf).abs() < SERIES_THRESHOLD {
        // Σ_k C(n, k+1) (-ε)^k
        let mut term = T::cst(nf);
        let mut sum = term;
        for k in 1..n {
            term = term * (-eps) * T::cst((nf - k as f64) / (k as f64 + 1.0));
            sum += term;
            if term.val().abs() <= 1e-18 * sum.val().abs() {
                break;
            }
        }
        return sum;
    }
    -(T::cst(nf) * (-eps).ln_1p()).exp_m1() / eps
}

/// `γ_n(θ)` together with its arguments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricSum {
    /// Ratio.
    pub theta: f64,
    /// Number of terms.
    pub n: usize,
    /// `Σ_{i<n} θ^i`.
    pub value: f64,
}

impl GeometricSum {
    /// Evaluates `γ_n(θ)`.
    pub fn new(theta: f64, n: usize) -> Self {
        Self {
            theta,
            n,
            value: geometric_prefix(theta, n),
        }
    }
}

/// Running quantities for the doubling recurrence over `m`.
#[derive(Clone, Copy)]
struct Doubling<T> {
    pa: T,
    pb: T,
    ga: T,
    gb: T,
    g1a: T,
    g1b: T,
    g2: T,
    m: usize,
}

impl<T: Real> Doubling<T> {
    fn run(a: T, b: T, n: usize) -> Self {
        let zero = T::cst(0.0);
        let mut s = Doubling {
            pa: T::cst(1.0),
            pb: T::cst(1.0),
            ga: zero,
            gb: zero,
            g1a: zero,
            g1b: zero,
            g2: zero,
            m: 0,
        };
        if n == 0 {
            return s;
        }
        for bit in (0..usize::BITS - n.leading_zeros()).rev() {
            if s.m > 0 {
                s.double();
            }
            if (n >> bit) & 1 == 1 {
                s.increment(a, b);
            }
        }
        s
    }

    fn double(&mut self) {
        let m = T::cst(self.m as f64);
        self.g2 = self.g2
            + m * self.ga * self.gb
            + self.ga * self.pb * self.g1b
            + self.gb * self.pa * self.g1a
            + self.pa * self.pb * self.g2;
        self.g1a = self.g1a * (T::cst(1.0) + self.pa) + m * self.ga;
        self.g1b = self.g1b * (T::cst(1.0) + self.pb) + m * self.gb;
        self.ga = self.ga * (T::cst(1.0) + self.pa);
        self.gb = self.gb * (T::cst(1.0) + self.pb);
        self.pa = self.pa * self.pa;
        self.pb = self.pb * self.pb;
        self.m *= 2;
    }

    fn increment(&mut self, a: T, b: T) {
        self.g1a += self.ga;
        self.g1b += self.gb;
        self.g2 += self.ga * self.gb;
        self.ga += self.pa;
        self.gb += self.pb;
        self.pa *= a;
        self.pb *= b;
        self.m += 1;
    }
}

fn near_one<T: Real>(x: T, n: usize) -> bool {
    ((1.0 - x.val()) * n as f64).abs() < DOUBLING_THRESHOLD
}

/// `G1_n(a) = Σ_{k<n} γ_k(a)`.
pub fn geometric_sum_of_sums<T: Real>(a: T, n: usize) -> T {
    if near_one(a, n) || a.val() <= 0.0 {
        return Doubling::run(a, a, n).g1a;
    }
    (T::cst(n as f64) - geometric_prefix(a, n)) / (T::cst(1.0) - a)
}

/// `G2_n(a, b) = Σ_{k<n} γ_k(a) γ_k(b)`.
pub fn geometric_cross_sum<T: Real>(a: T, b: T, n: usize) -> T {
    if near_one(a, n) || near_one(b, n) || a.val() <= 0.0 || b.val() <= 0.0 {
        return Doubling::run(a, b, n).g2;
    }
    let num = T::cst(n as f64) - geometric_prefix(a, n) - geometric_prefix(b, n)
        + geometric_prefix(a * b, n);
    num / ((T::cst(1.0) - a) * (T::cst(1.0) - b))
}

/// Squared sensitivity `1 + Σ_{j,k} ω̂_j ω̂_k γ_{n-1}(θ̂_j θ̂_k)`.
pub fn sensitivity_sq<T: Real>(omega_hat: &[T], theta_hat: &[T], n: usize) -> T {
    let mut acc = T::cst(1.0);
    let m = n.saturating_sub(1);
    for j in 0..theta_hat.len() {
        for k in j..theta_hat.len() {
            let w = if j == k { 1.0 } else { 2.0 };
            acc += T::cst(w) * omega_hat[j] * omega_hat[k] * geometric_prefix(theta_hat[j] * theta_hat[k], m);
        }
    }
    acc
}

/// `G3_n(a, b) = Σ_{k<n} γ_k(a) b^k = b/(1-b)·(γ_{n-1}(ab) - b^{n-1} γ_{n-1}(a))` for `b ≠ 1`.
fn geometric_mixed_sum<T: Real>(a: T, b: T, n: usize) -> T {
    if n < 2 {
        return T::cst(0.0);
    }
    let m = n - 1;
    b / (T::cst(1.0) - b) * (geometric_prefix(a * b, m) - powi(b, m) * geometric_prefix(a, m))
}

/// Squared norm of the last row of `B`.
pub fn rownorm_sq<T: Real>(omega: &[T], theta: &[T], n: usize) -> T {
    let near: Vec<bool> = theta.iter().map(|&t| near_one(t, n)).collect();
    // Entries are `α + Σ_near ω_j γ_k(θ_j) - Σ_far c_j θ_j^k`.
    let c: Vec<T> = omega
        .iter()
        .zip(theta)
        .map(|(&w, &t)| w / (T::cst(1.0) - t))
        .collect();
    let mut alpha = T::cst(1.0);
    for j in (0..theta.len()).filter(|&j| !near[j]) {
        alpha += c[j];
    }
    let mut acc = T::cst(n as f64) * alpha * alpha;
    for j in 0..theta.len() {
        acc += if near[j] {
            T::cst(2.0) * alpha * omega[j] * geometric_sum_of_sums(theta[j], n)
        } else {
            -(T::cst(2.0) * alpha * c[j] * geometric_prefix(theta[j], n))
        };
        for k in j..theta.len() {
            let w = T::cst(if j == k { 1.0 } else { 2.0 });
            let term = match (near[j], near[k]) {
                (true, true) => omega[j] * omega[k] * geometric_cross_sum(theta[j], theta[k], n),
                (false, false) => c[j] * c[k] * geometric_prefix(theta[j] * theta[k], n),
                (true, false) => -(omega[j] * c[k] * geometric_mixed_sum(theta[j], theta[k], n)),
                (false, true) => -(c[j] * omega[k] * geometric_mixed_sum(theta[k], theta[j], n)),
            };
            acc += w * term;
        }
    }
    acc
}

fn checked_sqrt(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    if x < 0.0 {
        return Err(Error::NegativeRadicand { value: x });
    }
    Ok(x.sqrt())
}

fn check_pair(omega: &[f64], theta: &[f64]) -> Result<()> {
    if omega.len() != theta.len() {
        return Err(Error::LengthMismatch {
            left: omega.len(),
            right: theta.len(),
        });
    }
    if let Some(index) = omega.iter().chain(theta).position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// `‖C‖₁→₂` from the pole form of `C`'s generator in `O(d² log n)`.
pub fn sensitivity_closed(omega_hat: &[f64], theta_hat: &[f64], n: usize) -> Result<f64> {
    check_pair(omega_hat, theta_hat)?;
    if n == 0 {
        return Err(Error::Empty { what: "n" });
    }
    checked_sqrt(sensitivity_sq(omega_hat, theta_hat, n))
}

/// `‖B‖₂→∞` from the pole form of `C⁻¹`'s generator in `O(d² log n)`.
pub fn rownorm_closed(omega: &[f64], theta: &[f64], n: usize) -> Result<f64> {
    check_pair(omega, theta)?;
    if n == 0 {
        return Err(Error::Empty { what: "n" });
    }
    if let Some(&bad) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid("theta", format!("{bad} is outside [0, 1]")));
    }
    checked_sqrt(rownorm_sq(omega, theta, n))
}

/// `‖C‖₁→₂` by summing the coefficients of `C` directly.
pub fn sensitivity_series(c: &ToeplitzSeq) -> f64 {
    c.sum_squares().sqrt()
}

/// `‖B‖₂→∞` by summing the coefficients of `B` directly.
pub fn rownorm_series(b: &ToeplitzSeq) -> f64 {
    b.sum_squares().sqrt()
}

/// Reference values for a horizon `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Best MaxErr over Toeplitz factorizations, `Σ_{k<n} f_k²`.
    pub opt_lt_toe: f64,
    /// Upper bound on the optimum over all factorizations.
    pub mathias_ub: f64,
    /// Lower bound on the optimum over all factorizations.
    pub matousek_lb: f64,
    /// MaxErr of the binary tree mechanism.
    pub bintree: f64,
}

/// Error of one factorization at one horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxErrReport {
    /// Horizon.
    pub n: usize,
    /// `‖C‖₁→₂`.
    pub sensitivity: f64,
    /// `‖B‖₂→∞`.
    pub row_norm: f64,
    /// `sensitivity · row_norm`.
    pub max_err: f64,
    /// Reference values at `n`.
    pub bounds: Bounds,
}

impl MaxErrReport {
    /// `max_err / opt_lt_toe`.
    pub fn ratio(&self) -> f64 {
        self.max_err / self.bounds.opt_lt_toe
    }
}

/// Sensitivity of a factorization at horizon `n`.
///
/// Uses the closed form when `C`'s poles are known and direct summation of
/// `1/r` otherwise.
pub fn factorization_sensitivity(fact: &BltFactorization, n: usize) -> Result<f64> {
    match fact.c_generator() {
        Some(c) => sensitivity_closed(&c.omega, &c.theta, n),
        None => Ok(sensitivity_series(&fact.c_coeffs(n)?)),
    }
}

/// MaxErr of `fact` at horizon `n` with all reference bounds.
pub fn max_err(fact: &BltFactorization, n: usize) -> Result<MaxErrReport> {
    let sensitivity = factorization_sensitivity(fact, n)?;
    let row_norm = rownorm_closed(fact.omega(), fact.theta(), n)?;
    Ok(MaxErrReport {
        n,
        sensitivity,
        row_norm,
        max_err: sensitivity * row_norm,
        bounds: bounds_table(n)?,
    })
}

/// Largest `n` whose `f_k²` running sums are cached.
const CACHE_CAP: usize = 1 << 22;

/// Prefix sums `Σ_{k≤i} f_k²` and the last coefficient they include.
struct OptCache {
    sums: Vec<f64>,
    last_f: f64,
}

impl OptCache {
    fn extend(&mut self, upto: usize) {
        let mut k = self.sums.len();
        let mut s = *self.sums.last().expect("cache starts non-empty");
        while k < upto {
            self.last_f *= 1.0 - 0.5 / k as f64;
            s += self.last_f * self.last_f;
            self.sums.push(s);
            k += 1;
        }
    }
}

fn opt_cache() -> &'static Mutex<OptCache> {
    static CACHE: OnceLock<Mutex<OptCache>> = OnceLock::new();
    CACHE.get_or_init(|| {
        Mutex::new(OptCache {
            sums: vec![1.0],
            last_f: 1.0,
        })
    })
}

/// `OptLTToe(n) = Σ_{k<n} f_k²`, memoized up to a cap.
pub fn opt_lt_toe(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Empty { what: "n" });
    }
    let mut cache = opt_cache().lock().unwrap_or_else(|e| e.into_inner());
    let upto = n.min(CACHE_CAP);
    if cache.sums.len() < upto {
        cache.extend(upto);
    }
    if n <= CACHE_CAP {
        return Ok(cache.sums[n - 1]);
    }
    let mut f = cache.last_f;
    let mut s = cache.sums[CACHE_CAP - 1];
    drop(cache);
    let mut c = 0.0;
    for k in CACHE_CAP..n {
        f *= 1.0 - 0.5 / k as f64;
        let y = f * f - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    Ok(s)
}

/// `½ + (1/2n) Σ_{j=1}^n 1/sin(π(2j-1)/(2n))`.
pub fn mathias_ub(n: usize) -> f64 {
    let nf = n as f64;
    let s: f64 = (1..=n)
        .map(|j| 1.0 / (std::f64::consts::PI * (2 * j - 1) as f64 / (2.0 * nf)).sin())
        .sum();
    0.5 + s / (2.0 * nf)
}

/// `(1/2n) Σ_{j=1}^n 1/sin(π(2j-1)/(4n+2))`.
pub fn matousek_lb(n: usize) -> f64 {
    let nf = n as f64;
    let s: f64 = (1..=n)
        .map(|j| 1.0 / (std::f64::consts::PI * (2 * j - 1) as f64 / (4.0 * nf + 2.0)).sin())
        .sum();
    s / (2.0 * nf)
}

/// `⌈log₂ n⌉ + 1`.
pub fn bintree(n: usize) -> f64 {
    let ceil_log2 = if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    };
    ceil_log2 as f64 + 1.0
}

/// All reference values at `n`.
pub fn bounds_table(n: usize) -> Result<Bounds> {
    Ok(Bounds {
        opt_lt_toe: opt_lt_toe(n)?,
        mathias_ub: mathias_ub(n),
        matousek_lb: matousek_lb(n),
        bintree: bintree(n),
    })
}

/// Coefficient of the linear growth of the squared row norm,
/// `1 + 2Σ_j ω_j/(1-θ_j) + Σ_{j,k} ω_jω_k/((1-θ_j)(1-θ_k))`.
pub fn alpha1(omega: &[f64], theta: &[f64]) -> f64 {
    let mut a = 1.0;
    for j in 0..theta.len() {
        let xj = omega[j] / (1.0 - theta[j]);
        a += 2.0 * xj;
        for k in 0..theta.len() {
            a += xj * omega[k] / (1.0 - theta[k]);
        }
    }
    a
}
