//! Direct minimization of MaxErr over the `2d` roots `(θ, θ̂)` at a fixed horizon.
//!
//! The objective is `‖B‖₂→∞·‖C‖₁→₂` plus the barrier
//! `w·Σ_i (-ln θ̂_i - ln ω̂_i)` on the `C`-side roots and residues. Roots are
//! optimized as logits, and gradients come from forward-mode dual numbers
//! pushed through the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Dual, Real, MAX_PARAMS};
use crate::blt_params::{residues, BltFactorization, Method};
use crate::error::{Error, Result};
use crate::error_eval::{bounds_table, max_err, rownorm_sq, sensitivity_sq};
use crate::lbfgs::{minimize, LbfgsConfig};

/// Largest supported degree.
pub const MAX_DEGREE: usize = MAX_PARAMS / 2;

/// Starting point of the optimization.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Interlaced roots on a geometric ladder of time scales.
    GeometricLadder,
    /// The ladder with each `1 - θ` scaled by a seeded factor in `[0.8, 1.25]`.
    JitteredLadder {
        /// RNG seed.
        seed: u64,
    },
    /// Explicit roots.
    Explicit {
        /// `B`-side roots.
        theta: Vec<f64>,
        /// `C`-side roots.
        theta_hat: Vec<f64>,
    },
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    /// Number of buffers `d`.
    pub degree: usize,
    /// Target horizon.
    pub n: usize,
    /// Iteration cap.
    pub max_iters: usize,
    /// Stop once every partial derivative in `(θ, θ̂)` is below this.
    pub grad_tol: f64,
    /// Barrier weight `w`.
    pub barrier_weight: f64,
    /// Starting point.
    pub init: Init,
    /// Minimum separation enforced between roots on one side.
    pub collision_eps: f64,
}

impl OptConfig {
    /// Defaults for degree `d` and horizon `n`.
    pub fn new(degree: usize, n: usize) -> Self {
        Self {
            degree,
            n,
            max_iters: 500,
            grad_tol: 1e-9,
            barrier_weight: 1e-7,
            init: Init::GeometricLadder,
            collision_eps: 1e-9,
        }
    }
}

/// Outcome of [`optimize_blt`].
#[derive(Clone, Debug)]
pub struct OptResult {
    /// Best factorization found.
    pub factorization: BltFactorization,
    /// Objective at the start.
    pub initial_loss: f64,
    /// Objective at the returned point.
    pub final_loss: f64,
    /// MaxErr at the target horizon.
    pub final_max_err: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Whether the gradient tolerance was met.
    pub converged: bool,
}

/// Objective, or `None` outside the domain.
fn objective<T: Real>(theta: &[T], theta_hat: &[T], n: usize, w: f64) -> Option<T> {
    let inside = |v: &[T]| {
        v.iter().all(|x| x.val() > 0.0 && x.val() < 1.0)
            && v.iter().enumerate().all(|(i, a)| v[i + 1..].iter().all(|b| b.val() != a.val()))
    };
    if theta.len() != theta_hat.len() || !inside(theta) || !inside(theta_hat) {
        return None;
    }
    let omega = residues(theta, theta_hat);
    let omega_hat = residues(theta_hat, theta);
    if omega_hat.iter().any(|x| !(x.val() > 0.0)) {
        return None;
    }
    let sens = sensitivity_sq(&omega_hat, theta_hat, n);
    let row = rownorm_sq(&omega, theta, n);
    if !(sens.val() > 0.0 && row.val() > 0.0) {
        return None;
    }
    let mut out = sens.sqrt() * row.sqrt();
    if w > 0.0 {
        out += barrier(theta_hat, &omega_hat, w);
    }
    out.val().is_finite().then_some(out)
}

/// `w·Σ(-ln θ̂_i - ln ω̂_i)`.
pub fn barrier<T: Real>(theta_hat: &[T], omega_hat: &[T], w: f64) -> T {
    let mut acc = T::cst(0.0);
    for (t, o) in theta_hat.iter().zip(omega_hat) {
        acc -= t.ln() + o.ln();
    }
    acc * T::cst(w)
}

/// MaxErr at `n` plus the barrier; `+∞` outside the domain.
///
/// The domain is `θ, θ̂ ∈ (0,1)` with distinct entries on each side and
/// positive `C`-side residues.
pub fn loss(theta: &[f64], theta_hat: &[f64], n: usize, barrier_weight: f64) -> f64 {
    objective(theta, theta_hat, n, barrier_weight).unwrap_or(f64::INFINITY)
}

fn loss_and_gradient(theta: &[f64], theta_hat: &[f64], n: usize, w: f64) -> Option<(f64, Vec<f64>)> {
    let d = theta.len();
    if 2 * d > MAX_PARAMS {
        return None;
    }
    let th: Vec<Dual> = theta.iter().enumerate().map(|(i, &x)| Dual::var(x, i)).collect();
    let th_hat: Vec<Dual> = theta_hat.iter().enumerate().map(|(i, &x)| Dual::var(x, d + i)).collect();
    let out = objective(&th, &th_hat, n, w)?;
    Some((out.v, out.d[..2 * d].to_vec()))
}

/// Gradient of [`loss`] in `(θ, θ̂)`, stacked as `θ` then `θ̂`.
pub fn gradient(theta: &[f64], theta_hat: &[f64], n: usize, barrier_weight: f64) -> Result<Vec<f64>> {
    if theta.len() != theta_hat.len() {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: theta_hat.len(),
        });
    }
    if theta.len() > MAX_DEGREE {
        return Err(Error::invalid("degree", format!("at most {MAX_DEGREE} is supported")));
    }
    loss_and_gradient(theta, theta_hat, n, barrier_weight)
        .map(|(_, g)| g)
        .ok_or_else(|| Error::invalid("roots", "outside the domain of the loss"))
}

/// Interlaced starting roots `θ̂_{i} > θ_{i} > θ̂_{i-1}`.
///
/// `1 - θ̂_i` runs geometrically from `1/2` down to `1/n`, and each `1 - θ_i`
/// sits at the geometric mean of its neighbours. For `d = 1` this is the
/// single-buffer closed form.
pub fn ladder_init(degree: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    if degree == 1 {
        return (vec![1.0 - nf.powf(-1.0 / 3.0)], vec![1.0 - nf.powf(-2.0 / 3.0)]);
    }
    let hi: f64 = 0.5;
    let lo = 1.0 / nf;
    let rho = (lo / hi).powf(1.0 / (degree as f64 - 1.0));
    let mut theta = Vec::with_capacity(degree);
    let mut theta_hat = Vec::with_capacity(degree);
    for i in 0..degree {
        let eps_hat = hi * rho.powi(i as i32);
        let eps = (eps_hat / rho.sqrt()).min(0.5 + eps_hat / 2.0);
        theta_hat.push(1.0 - eps_hat);
        theta.push(1.0 - eps);
    }
    (theta, theta_hat)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Moves later roots that sit within `eps` of an earlier one on the same side.
fn separate(roots: &mut [f64], eps: f64) -> bool {
    let mut moved = false;
    for i in 1..roots.len() {
        for j in 0..i {
            if (roots[i] - roots[j]).abs() < eps {
                let down = roots[j] - eps;
                roots[i] = if down > 0.0 { down } else { roots[j] + eps };
                moved = true;
            }
        }
    }
    moved
}

/// Minimizes MaxErr at `cfg.n` with L-BFGS over logits of the roots.
pub fn optimize_blt(cfg: &OptConfig) -> Result<OptResult> {
    let d = cfg.degree;
    if d == 0 || d > MAX_DEGREE {
        return Err(Error::invalid("degree", format!("must be in 1..={MAX_DEGREE}")));
    }
    if cfg.n < 2 {
        return Err(Error::invalid("n", "must be at least 2"));
    }
    if !(cfg.barrier_weight >= 0.0) {
        return Err(Error::invalid("barrier_weight", "must be nonnegative"));
    }
    let (theta0, theta_hat0) = match &cfg.init {
        Init::GeometricLadder => ladder_init(d, cfg.n),
        Init::JitteredLadder { seed } => {
            let (t, th) = ladder_init(d, cfg.n);
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let mut jitter = |v: Vec<f64>| -> Vec<f64> {
                v.into_iter()
                    .map(|x| 1.0 - (1.0 - x) * rng.random_range(0.8..1.25))
                    .map(|x: f64| x.clamp(1e-6, 1.0 - 1e-12))
                    .collect()
            };
            let t = jitter(t);
            (t, jitter(th))
        }
        Init::Explicit { theta, theta_hat } => {
            if theta.len() != d || theta_hat.len() != d {
                return Err(Error::LengthMismatch {
                    left: d,
                    right: theta.len().min(theta_hat.len()),
                });
            }
            (theta.clone(), theta_hat.clone())
        }
    };
    let n = cfg.n;
    let w = cfg.barrier_weight;
    let split = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        (p[..d].to_vec(), p[d..].to_vec())
    };
    let fg = |x: &[f64]| {
        let (t, th) = split(x);
        let (f, g) = loss_and_gradient(&t, &th, n, w)?;
        let p: Vec<f64> = t.iter().chain(&th).copied().collect();
        let gx = g.iter().zip(&p).map(|(gi, pi)| gi * pi * (1.0 - pi)).collect();
        Some((f, gx))
    };
    let done = |x: &[f64], gx: &[f64]| {
        gx.iter()
            .zip(x)
            .all(|(g, &xi)| {
                let p = sigmoid(xi);
                (g / (p * (1.0 - p))).abs() <= cfg.grad_tol
            })
    };
    let eps = cfg.collision_eps;
    let repair = |x: &mut [f64]| {
        let (mut t, mut th) = split(x);
        let moved = separate(&mut t, eps) | separate(&mut th, eps);
        if moved {
            for (xi, p) in x.iter_mut().zip(t.iter().chain(&th)) {
                *xi = logit(*p);
            }
        }
        moved
    };
    let x0: Vec<f64> = theta0.iter().chain(&theta_hat0).map(|&p| logit(p)).collect();
    let lb = LbfgsConfig {
        max_iters: cfg.max_iters,
        ..LbfgsConfig::default()
    };
    let res = minimize(x0, fg, done, repair, &lb)
        .ok_or_else(|| Error::invalid("init", "starting roots are outside the domain of the loss"))?;
    let (theta, theta_hat) = split(&res.x);
    let factorization = BltFactorization::from_roots(theta, theta_hat, n, Method::Opt)?;
    let report = max_err(&factorization, n)?;
    let lb_check = bounds_table(n)?.matousek_lb;
    if report.max_err < lb_check - 1e-9 || factorization.validity_residual(n.min(64))? > 1e-8 {
        return Err(Error::invalid("result", "optimized factorization failed validation"));
    }
    Ok(OptResult {
        factorization,
        initial_loss: res.f0,
        final_loss: res.f,
        final_max_err: report.max_err,
        iterations: res.iterations,
        converged: res.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blt_params::degree1_closed_form;

    #[test]
    fn loss_domain() {
        assert_eq!(loss(&[1.0], &[0.5], 10, 1e-7), f64::INFINITY);
        assert_eq!(loss(&[0.5, 0.5], &[0.9, 0.2], 10, 1e-7), f64::INFINITY);
        // θ̂ < θ makes the C-side residue negative.
        assert_eq!(loss(&[0.9], &[0.5], 10, 1e-7), f64::INFINITY);
        assert!(loss(&[0.5], &[0.9], 10, 1e-7).is_finite());
        assert!(gradient(&[0.9], &[0.5], 10, 1e-7).is_err());
    }

    #[test]
    fn loss_is_max_err_plus_barrier() {
        let (t, th) = (vec![0.8, 0.3], vec![0.95, 0.6]);
        let f = BltFactorization::from_roots(t.clone(), th.clone(), 500, Method::Opt).unwrap();
        let me = max_err(&f, 500).unwrap().max_err;
        assert!((loss(&t, &th, 500, 0.0) - me).abs() < 1e-12 * me);
        let b: f64 = th.iter().zip(f.omega_hat()).map(|(a, o)| -a.ln() - o.ln()).sum();
        assert!((loss(&t, &th, 500, 1e-3) - me - 1e-3 * b).abs() < 1e-12);
    }

    #[test]
    fn barrier_derivative_in_theta_hat() {
        let th = [Dual::var(0.7, 0), Dual::var(0.4, 1)];
        let om = [Dual::cst(0.3), Dual::cst(0.2)];
        let b = barrier(&th, &om, 2e-3);
        assert!((b.d[0] + 2e-3 / 0.7).abs() < 1e-15);
        assert!((b.d[1] + 2e-3 / 0.4).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = [0.5];
        let th = [0.75];
        let g = gradient(&t, &th, 100, 1e-7).unwrap();
        let h = 1e-6;
        let fd0 = (loss(&[0.5 + h], &th, 100, 1e-7) - loss(&[0.5 - h], &th, 100, 1e-7)) / (2.0 * h);
        let fd1 = (loss(&t, &[0.75 + h], 100, 1e-7) - loss(&t, &[0.75 - h], 100, 1e-7)) / (2.0 * h);
        assert!((g[0] - fd0).abs() <= 1e-4 * fd0.abs());
        assert!((g[1] - fd1).abs() <= 1e-4 * fd1.abs());
    }

    #[test]
    fn ladder_is_interlaced_with_positive_c_residues() {
        for d in 1..=8 {
            for n in [100usize, 10_000, 10_000_000] {
                let (t, th) = ladder_init(d, n);
                assert!(loss(&t, &th, n, 1e-7).is_finite(), "d={d} n={n}");
                let mut all: Vec<(f64, bool)> = t.iter().map(|&x| (x, false)).chain(th.iter().map(|&x| (x, true))).collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                assert!(all.iter().enumerate().all(|(i, (_, hat))| *hat == (i % 2 == 1)));
            }
        }
    }

    #[test]
    fn separate_moves_later_root() {
        let mut v = vec![0.5, 0.5 + 1e-12, 0.3];
        assert!(separate(&mut v, 1e-9));
        assert_eq!(v[0], 0.5);
        assert!((v[1] - (0.5 - 1e-9)).abs() < 1e-15);
        assert!(!separate(&mut v, 1e-9));
    }

    #[test]
    fn degree_one_improves_on_closed_form() {
        let n = 1000;
        let closed = degree1_closed_form(n).unwrap().factorization(n).unwrap();
        let before = max_err(&closed, n).unwrap().max_err;
        let res = optimize_blt(&OptConfig::new(1, n)).unwrap();
        assert!(res.final_loss <= res.initial_loss);
        assert!(res.final_max_err <= before);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(optimize_blt(&OptConfig::new(0, 100)).is_err());
        assert!(optimize_blt(&OptConfig::new(2, 1)).is_err());
        assert!(optimize_blt(&OptConfig::new(MAX_DEGREE + 1, 100)).is_err());
        let mut cfg = OptConfig::new(1, 100);
        cfg.init = Init::Explicit {
            theta: vec![0.9],
            theta_hat: vec![0.5],
        };
        assert!(optimize_blt(&cfg).is_err());
    }
}
