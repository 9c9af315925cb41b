//! Limited-memory BFGS with a monotone backtracking line search.

use std::collections::VecDeque;

use ndarray::Array1;

/// Sufficient-decrease constant of the Armijo condition.
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iter: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The line search could not decrease the objective any further.
    NoProgress,
    /// The objective was not finite at some trial point; the last finite
    /// iterate is returned.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Array1<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian.
fn direction(g: &Array1<f64>, hist: &VecDeque<(Array1<f64>, Array1<f64>, f64)>) -> Array1<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * s.dot(&q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.scaled_add(a - b, s);
    }
    q.mapv_inplace(|v| -v);
    q
}

/// Minimizes `f`, which returns the objective and its gradient.
///
/// Every accepted step satisfies the Armijo condition, so the returned value
/// never exceeds the initial one.
pub fn minimize<F>(mut f: F, x0: Array1<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx];
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            trace,
            termination: Termination::NonFinite,
        };
    }
    let mut hist = VecDeque::with_capacity(cfg.history);
    let mut iterations = 0;
    let mut saw_non_finite = false;

    let termination = loop {
        if max_abs(&g) < cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }
        let mut d = direction(&g, &hist);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.mapv(|v| -v);
            slope = g.dot(&d);
        }
        let mut step = if hist.is_empty() {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &(&d * step);
            let (ft, gt) = f(&trial);
            let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
            saw_non_finite |= !finite;
            if finite && ft <= fx + ARMIJO_C1 * step * slope && ft < fx {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break if saw_non_finite {
                Termination::NonFinite
            } else {
                Termination::NoProgress
            };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.dot(&s).sqrt() * y.dot(&y).sqrt() && sy > 0.0 {
            if hist.len() == cfg.history.max(1) {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        trace.push(fx);
    };

    Minimum {
        x,
        value: fx,
        iterations,
        trace,
        termination,
    }
}
