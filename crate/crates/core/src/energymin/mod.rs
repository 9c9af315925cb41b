//! Per-frame energy minimization.
//!
//! For a normalized mixture frame `y` the unknowns are two spectral
//! estimates `x1`, `x2` and their gains `u`, `v`. The energy
//!
//! ```text
//! E = E1(x1) + E2(x2) + lambda * ||u x1 + v x2 - y||^2 + beta * sum_i min(theta_i, 0)^2
//! ```
//!
//! rewards estimates the classifier assigns to the right source, that add up
//! to the mixture and that stay nonnegative. With stacked context frames the
//! classifier sees the whole of `x1`/`x2` while the mixture term uses only
//! their center frame.

pub mod lbfgs;

use ndarray::{s, Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dnn::{forward, input_gradient, DnnModel};
use crate::error::shape_err;
use crate::{Error, Result, Source};

pub use lbfgs::{LbfgsConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub beta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub history: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 5.0,
            beta: 3.0,
            max_iter: 200,
            grad_tol: 1e-6,
            history: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("lambda and beta must be nonnegative".into()));
        }
        if self.history == 0 || !(self.grad_tol > 0.0) {
            return Err(Error::Config(
                "history and grad_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            history: self.history,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
        }
    }
}

/// Unknowns and data of one frame. `x1`/`x2` have the classifier's input
/// size; `y` is one frame and lines up with their center slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProblem {
    pub y: Array1<f64>,
    pub x1: Array1<f64>,
    pub x2: Array1<f64>,
    pub u: f64,
    pub v: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl FrameProblem {
    fn check(&self, model: &DnnModel) -> Result<()> {
        let d = model.input_dim();
        if self.x1.len() != d || self.x2.len() != d {
            return Err(shape_err(format!(
                "estimates have {}/{} entries, classifier expects {d}",
                self.x1.len(),
                self.x2.len()
            )));
        }
        if self.y.len() * model.context_frames != d {
            return Err(shape_err(format!(
                "mixture frame has {} entries, classifier frame size is {}",
                self.y.len(),
                model.frame_dim()
            )));
        }
        Ok(())
    }

    /// Offset of the center frame inside `x1`/`x2`.
    pub fn center_offset(&self) -> usize {
        (self.x1.len() - self.y.len()) / 2
    }

    pub fn x1_center(&self) -> ArrayView1<'_, f64> {
        let o = self.center_offset();
        self.x1.slice(s![o..o + self.y.len()])
    }

    pub fn x2_center(&self) -> ArrayView1<'_, f64> {
        let o = self.center_offset();
        self.x2.slice(s![o..o + self.y.len()])
    }

    /// `theta = [x1, x2, u, v]`.
    pub fn theta(&self) -> Array1<f64> {
        let d = self.x1.len();
        let mut t = Array1::zeros(2 * d + 2);
        t.slice_mut(s![..d]).assign(&self.x1);
        t.slice_mut(s![d..2 * d]).assign(&self.x2);
        t[2 * d] = self.u;
        t[2 * d + 1] = self.v;
        t
    }

    pub fn set_theta(&mut self, theta: &Array1<f64>) {
        let d = self.x1.len();
        self.x1.assign(&theta.slice(s![..d]));
        self.x2.assign(&theta.slice(s![d..2 * d]));
        self.u = theta[2 * d];
        self.v = theta[2 * d + 1];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub e1: f64,
    pub e2: f64,
    pub e_err: f64,
    pub e_neg: f64,
    /// `e1 + e2 + lambda * e_err + beta * e_neg`
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(e1: f64, e2: f64, e_err: f64, e_neg: f64, lambda: f64, beta: f64) -> Self {
        EnergyBreakdown {
            e1,
            e2,
            e_err,
            e_neg,
            total: e1 + e2 + lambda * e_err + beta * e_neg,
        }
    }
}

/// Squared distance of the classifier output from `source`'s indicator.
fn fitness_from_output(f: [f64; 2], source: Source) -> f64 {
    match source {
        Source::One => (1.0 - f[0]).powi(2) + f[1].powi(2),
        Source::Two => f[0].powi(2) + (1.0 - f[1]).powi(2),
    }
}

/// `E1(x) = (1 - f1)^2 + f2^2` or `E2(x) = f1^2 + (1 - f2)^2`.
pub fn fitness_energy(model: &DnnModel, x: ArrayView1<f64>, source: Source) -> Result<f64> {
    Ok(fitness_from_output(forward(model, x)?.output(), source))
}

/// `||u x1 + v x2 - y||^2`.
pub fn error_energy(
    x1: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    y: ArrayView1<f64>,
    u: f64,
    v: f64,
) -> f64 {
    x1.iter()
        .zip(x2)
        .zip(y)
        .map(|((a, b), c)| (u * a + v * b - c).powi(2))
        .sum()
}

/// `sum_i min(theta_i, 0)^2`.
pub fn negativity_penalty(theta: ArrayView1<f64>) -> f64 {
    theta.iter().map(|&t| t.min(0.0).powi(2)).sum()
}

/// Value and gradient of the fitness energy for `source` at `x`.
fn fitness_with_gradient(
    model: &DnnModel,
    x: ArrayView1<f64>,
    source: Source,
) -> Result<(f64, Array1<f64>)> {
    let fwd = forward(model, x)?;
    let f = fwd.output();
    let jac = input_gradient(model, &fwd)?;
    let target = match source {
        Source::One => [1.0, 0.0],
        Source::Two => [0.0, 1.0],
    };
    let grad = &jac.row(0) * (2.0 * (f[0] - target[0])) + &jac.row(1) * (2.0 * (f[1] - target[1]));
    Ok((fitness_from_output(f, source), grad))
}

pub fn total_energy(model: &DnnModel, prob: &FrameProblem) -> Result<EnergyBreakdown> {
    prob.check(model)?;
    let e1 = fitness_energy(model, prob.x1.view(), Source::One)?;
    let e2 = fitness_energy(model, prob.x2.view(), Source::Two)?;
    let e_err = error_energy(
        prob.x1_center(),
        prob.x2_center(),
        prob.y.view(),
        prob.u,
        prob.v,
    );
    let e_neg = negativity_penalty(prob.theta().view());
    Ok(EnergyBreakdown::new(
        e1,
        e2,
        e_err,
        e_neg,
        prob.lambda,
        prob.beta,
    ))
}

/// Energy and analytic gradient with respect to `theta = [x1, x2, u, v]`.
pub fn energy_and_gradient(
    model: &DnnModel,
    prob: &FrameProblem,
) -> Result<(EnergyBreakdown, Array1<f64>)> {
    prob.check(model)?;
    let d = prob.x1.len();
    let (e1, g1) = fitness_with_gradient(model, prob.x1.view(), Source::One)?;
    let (e2, g2) = fitness_with_gradient(model, prob.x2.view(), Source::Two)?;

    let x1c = prob.x1_center();
    let x2c = prob.x2_center();
    let residual = &x1c * prob.u + &x2c * prob.v - &prob.y;
    let e_err = residual.dot(&residual);
    let theta = prob.theta();
    let e_neg = negativity_penalty(theta.view());

    let mut grad = Array1::zeros(2 * d + 2);
    grad.slice_mut(s![..d]).assign(&g1);
    grad.slice_mut(s![d..2 * d]).assign(&g2);
    let o = prob.center_offset();
    let n = prob.y.len();
    let lam2 = 2.0 * prob.lambda;
    grad.slice_mut(s![o..o + n])
        .scaled_add(lam2 * prob.u, &residual);
    grad.slice_mut(s![d + o..d + o + n])
        .scaled_add(lam2 * prob.v, &residual);
    grad[2 * d] += lam2 * x1c.dot(&residual);
    grad[2 * d + 1] += lam2 * x2c.dot(&residual);
    grad.zip_mut_with(&theta, |g, &t| *g += 2.0 * prob.beta * t.min(0.0));

    Ok((
        EnergyBreakdown::new(e1, e2, e_err, e_neg, prob.lambda, prob.beta),
        grad,
    ))
}

pub fn total_gradient(model: &DnnModel, prob: &FrameProblem) -> Result<Array1<f64>> {
    Ok(energy_and_gradient(model, prob)?.1)
}

#[derive(Debug, Clone)]
pub struct FrameSolution {
    /// Solved unknowns, nonnegative.
    pub problem: FrameProblem,
    pub initial: EnergyBreakdown,
    /// Energy of the returned (clamped) unknowns.
    pub final_energy: EnergyBreakdown,
    /// Total energy after every accepted solver step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// True when the mixture frame was silent and nothing was solved.
    pub skipped: bool,
}

fn clamp_nonnegative(prob: &mut FrameProblem) {
    prob.x1.mapv_inplace(|x| x.max(0.0));
    prob.x2.mapv_inplace(|x| x.max(0.0));
    prob.u = prob.u.max(0.0);
    prob.v = prob.v.max(0.0);
}

/// Minimizes the frame energy from `init` with L-BFGS, then zeroes any
/// negative unknowns.
///
/// If zeroing negatives pushes the energy above the starting energy the
/// starting point is returned instead, so the result never scores worse than
/// the initialization. A silent frame (`y == 0`) returns all zeros unsolved.
pub fn solve_frame(
    model: &DnnModel,
    init: FrameProblem,
    cfg: &SolverConfig,
) -> Result<FrameSolution> {
    cfg.validate()?;
    init.check(model)?;
    if init.y.iter().all(|&v| v == 0.0) {
        let mut problem = init;
        problem.x1.fill(0.0);
        problem.x2.fill(0.0);
        problem.u = 0.0;
        problem.v = 0.0;
        let e = total_energy(model, &problem)?;
        return Ok(FrameSolution {
            problem,
            initial: e,
            final_energy: e,
            trace: vec![e.total],
            iterations: 0,
            termination: Termination::GradientTolerance,
            skipped: true,
        });
    }

    let initial = total_energy(model, &init)?;
    let mut scratch = init.clone();
    let objective = |theta: &Array1<f64>| {
        scratch.set_theta(theta);
        match energy_and_gradient(model, &scratch) {
            Ok((e, g)) => (e.total, g),
            Err(_) => (f64::NAN, Array1::from_elem(theta.len(), f64::NAN)),
        }
    };
    let min = lbfgs::minimize(objective, init.theta(), &cfg.lbfgs());

    let mut solved = init.clone();
    solved.set_theta(&min.x);
    clamp_nonnegative(&mut solved);
    let mut final_energy = total_energy(model, &solved)?;
    if !(final_energy.total <= initial.total) {
        solved = init;
        clamp_nonnegative(&mut solved);
        final_energy = total_energy(model, &solved)?;
    }
    Ok(FrameSolution {
        problem: solved,
        initial,
        final_energy,
        trace: min.trace,
        iterations: min.iterations,
        termination: min.termination,
        skipped: false,
    })
}
