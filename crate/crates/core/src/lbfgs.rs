//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Only strict decreases of the objective are accepted, so the returned
//! value never exceeds the starting one.

use std::collections::VecDeque;

/// Tuning knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Iteration cap.
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Step halvings before the line search gives up.
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            c1: 1e-4,
            max_backtracks: 60,
        }
    }
}

/// Outcome of a minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub f: f64,
    /// Objective at the start.
    pub f0: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Whether the convergence test fired.
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `fg`, which returns the value and gradient or `None` outside the domain.
///
/// `done(x, g)` is the convergence test. `repair(x)` may move an accepted
/// iterate and returns whether it did, in which case the curvature memory is
/// discarded. Returns `None` if `x0` is outside the domain.
pub fn minimize(
    x0: Vec<f64>,
    mut fg: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    done: impl Fn(&[f64], &[f64]) -> bool,
    mut repair: impl FnMut(&mut [f64]) -> bool,
    cfg: &LbfgsConfig,
) -> Option<LbfgsResult> {
    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    let f0 = f;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = done(&x, &g);
    while !converged && iterations < cfg.max_iters {
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map_or(1.0 / dot(&g, &g).sqrt().max(1e-300), |(s, y, _)| dot(s, y) / dot(y, y));
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            mem.clear();
            dir = g.iter().map(|v| -v / dot(&g, &g).sqrt().max(1e-300)).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if let Some((fnew, gnew)) = fg(&xn) {
                if fnew.is_finite() && fnew < f && fnew <= f + cfg.c1 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((mut xn, mut fnew, mut gnew)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        if repair(&mut xn) {
            match fg(&xn) {
                Some((fr, gr)) if fr < f => {
                    fnew = fr;
                    gnew = gr;
                }
                _ => break,
            }
            mem.clear();
        } else {
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                if mem.len() == cfg.memory {
                    mem.pop_front();
                }
                mem.push_back((s, y, 1.0 / sy));
            }
        }
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
        converged = done(&x, &g);
    }
    Some(LbfgsResult {
        x,
        f,
        f0,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((f, g))
        };
        let done = |_: &[f64], g: &[f64]| g.iter().all(|v| v.abs() < 1e-10);
        let r = minimize(vec![-1.2, 1.0], fg, done, |_| false, &LbfgsConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
        assert!(r.f <= r.f0);
    }

    #[test]
    fn respects_domain() {
        // f = (ln x)² on x > 0, minimum at 1.
        let fg = |x: &[f64]| (x[0] > 0.0).then(|| (x[0].ln().powi(2), vec![2.0 * x[0].ln() / x[0]]));
        let done = |_: &[f64], g: &[f64]| g[0].abs() < 1e-12;
        let r = minimize(vec![30.0], fg, done, |_| false, &LbfgsConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9);
        assert!(minimize(vec![-1.0], fg, done, |_| false, &LbfgsConfig::default()).is_none());
    }
}
