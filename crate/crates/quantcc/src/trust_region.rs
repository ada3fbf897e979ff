//! Trust-region minimization of the sampled merit function for fixed penalty
//! and multipliers: quadratic local models with a neighborhood-fit Hessian, a
//! dogleg subproblem solve with a fraction-of-Cauchy decrease guarantee, and
//! ratio-based radius management. One fresh scenario batch per iteration is
//! shared by the model build and both sides of the ratio test.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::merit::{merit_gradient_estimate, merit_value, ConstraintVector, MeritParams};
use crate::problems::ProblemSpec;
use crate::quantile::{
    fd_quantile_gradient, quantile_of_constraint, smoothing_quantile_gradient, QuantileQuery,
};
use crate::sampling::{draw_batch, SampleBatch};

/// Finite-difference step policy for the quantile gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// One step size for the whole run (the setting used for the benchmark
    /// tables).
    Constant(f64),
    /// Radius-proportional step `beta = r0 * delta`.
    RadiusScaled { r0: f64 },
}

impl BetaMode {
    fn value(&self, delta: f64) -> f64 {
        match self {
            BetaMode::Constant(beta) => *beta,
            BetaMode::RadiusScaled { r0 } => r0 * delta,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            BetaMode::Constant(beta) if !(*beta > 0.0) => {
                Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")))
            }
            BetaMode::RadiusScaled { r0 } if !(*r0 > 0.0 && *r0 < 1.0) => {
                Err(Error::InvalidArgument(format!("r0 must lie in (0,1), got {r0}")))
            }
            _ => Ok(()),
        }
    }
}

/// Per-iteration sample-size policy. The scenario pool for one inner solve
/// is drawn once; growth mode consumes a widening prefix of it, so samples
/// accumulate instead of being replaced (resampling every iteration leaves
/// the iterate random-walking at the sampling-noise floor and the radius
/// never collapses to its termination value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSchedule {
    /// Fixed batch size every iteration (default; the theoretical
    /// radius-coupled growth is impractical).
    Fixed(usize),
    /// `N_k = min(max, initial * ceil(delta^-2))`.
    Growth { initial: usize, max: usize },
}

impl SampleSchedule {
    fn size(&self, delta: f64) -> usize {
        match self {
            SampleSchedule::Fixed(n) => *n,
            SampleSchedule::Growth { initial, max } => {
                let factor = (1.0 / (delta * delta)).ceil().max(1.0);
                let grown = (*initial as f64 * factor).min(*max as f64);
                (grown as usize).max(*initial).min(*max)
            }
        }
    }

    /// Largest size the schedule can request (the pool size).
    fn pool_size(&self) -> usize {
        match self {
            SampleSchedule::Fixed(n) => *n,
            SampleSchedule::Growth { max, .. } => *max,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SampleSchedule::Fixed(n) => *n >= 1,
            SampleSchedule::Growth { initial, max } => *initial >= 1 && max >= initial,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("sample schedule sizes must be positive".into()))
        }
    }
}

/// Which quantile-gradient estimator drives the model gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientEstimator {
    /// Central finite differences on the empirical quantile (common random
    /// numbers across all perturbations).
    FiniteDifference,
    /// Kernel-smoothing average of per-scenario gradients; `None` selects
    /// the adaptive `0.1 x IQR` bandwidth.
    Smoothing { epsilon: Option<f64> },
}

/// Tunables of the inner trust-region solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrParams {
    /// Minimum model decrease, relative to `min(delta, delta^2)`, required to
    /// even consider a step.
    pub eta1: f64,
    /// Acceptance threshold on the realized-vs-predicted decrease ratio.
    pub eta2: f64,
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    /// Initial radius.
    pub delta_init: f64,
    pub beta: BetaMode,
    pub samples: SampleSchedule,
    pub estimator: GradientEstimator,
    /// Number of neighborhood points for the Hessian fit; `None` selects
    /// `min((n+1)(n+2)/2, 2n+1)` for decision dimension `n`.
    pub fit_points: Option<usize>,
    /// Safety valve; the radius test is the intended stopping rule.
    pub max_iterations: usize,
}

impl Default for TrParams {
    fn default() -> Self {
        TrParams {
            eta1: 0.1,
            eta2: 0.25,
            gamma_inc: 2.0,
            gamma_dec: 0.5,
            delta_init: 1.0,
            beta: BetaMode::Constant(1e-3),
            samples: SampleSchedule::Fixed(10_000),
            estimator: GradientEstimator::FiniteDifference,
            fit_points: None,
            max_iterations: 10_000,
        }
    }
}

impl TrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta1 < 1.0 && self.eta2 > 0.0 && self.eta2 < 1.0) {
            return Err(Error::InvalidArgument("eta1 and eta2 must lie in (0,1)".into()));
        }
        if !(self.gamma_dec > 0.0 && self.gamma_dec < 1.0 && self.gamma_inc > 1.0) {
            return Err(Error::InvalidArgument(
                "radius factors must satisfy 0 < gamma_dec < 1 < gamma_inc".into(),
            ));
        }
        if !(self.delta_init > 0.0) {
            return Err(Error::InvalidArgument("delta_init must be positive".into()));
        }
        self.beta.validate()?;
        self.samples.validate()
    }

    fn fit_point_count(&self, n: usize) -> usize {
        self.fit_points
            .unwrap_or_else(|| (((n + 1) * (n + 2)) / 2).min(2 * n + 1))
    }
}

/// Quadratic model of the sampled merit function around a base point.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub base: DVector<f64>,
    /// Sampled merit value at the base point.
    pub value: f64,
    /// Sampled merit gradient estimate at the base point.
    pub gradient: DVector<f64>,
    /// Symmetric Hessian from the neighborhood fit (zero on fit failure).
    pub hessian: DMatrix<f64>,
    /// Sampled quantile-constraint value at the base point.
    pub g0: f64,
}

impl LocalModel {
    /// Model value at `base + s`.
    pub fn predict(&self, s: &DVector<f64>) -> f64 {
        self.value + self.gradient.dot(s) + 0.5 * s.dot(&(&self.hessian * s))
    }

    /// Model decrease `m(base) - m(base + s)`.
    pub fn decrease(&self, s: &DVector<f64>) -> f64 {
        -(self.gradient.dot(s) + 0.5 * s.dot(&(&self.hessian * s)))
    }
}

/// Sampled merit value and quantile-constraint value at `x` on one batch.
pub(crate) fn merit_estimate(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    batch: &SampleBatch,
    params: &MeritParams,
) -> Result<(f64, f64)> {
    let g0 = quantile_of_constraint(problem.chance_fn(), x, batch, problem.alpha)?;
    let g = ConstraintVector::new(g0, problem.det_values(x));
    Ok((merit_value(problem.objective(x), &g, params), g0))
}

fn quantile_gradient(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    batch: &SampleBatch,
    beta: f64,
    estimator: &GradientEstimator,
) -> Result<DVector<f64>> {
    match estimator {
        GradientEstimator::FiniteDifference => {
            let query = QuantileQuery::new(problem.alpha, beta)?;
            fd_quantile_gradient(problem.chance_fn(), x, batch, &query)
        }
        GradientEstimator::Smoothing { epsilon } => {
            let grad = problem
                .chance_gradient_fn()
                .ok_or(Error::MissingScenarioGradient)?;
            smoothing_quantile_gradient(problem.chance_fn(), grad, x, batch, problem.alpha, *epsilon)
        }
    }
}

/// Neighborhood displacement pattern for the Hessian fit: all `2n` axis
/// points on the radius, then mixed two-coordinate diagonals, then
/// half-radius axis points as fillers, truncated to `count`.
fn fit_displacements(n: usize, count: usize, delta: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(count);
    let axis = |k: usize, scale: f64| {
        let mut d = DVector::zeros(n);
        d[k] = scale;
        d
    };
    for sign in [1.0, -1.0] {
        for k in 0..n {
            if out.len() == count {
                return out;
            }
            out.push(axis(k, sign * delta));
        }
    }
    let diag = delta / 2.0_f64.sqrt();
    for sign in [1.0, -1.0] {
        for k in 0..n {
            for l in (k + 1)..n {
                if out.len() == count {
                    return out;
                }
                let mut d = DVector::zeros(n);
                d[k] = diag;
                d[l] = sign * diag;
                out.push(d);
            }
        }
    }
    let mut halving = delta / 2.0;
    while out.len() < count && halving > f64::MIN_POSITIVE {
        for sign in [1.0, -1.0] {
            for k in 0..n {
                if out.len() == count {
                    return out;
                }
                out.push(axis(k, sign * halving));
            }
        }
        halving /= 2.0;
    }
    out
}

/// Builds the local quadratic model at `x0`: sampled merit value, merit
/// gradient with the selected quantile-gradient estimator, and a symmetric
/// Hessian from a minimum-Frobenius-norm / ridge least-squares fit to merit
/// values sampled at neighborhood points inside the radius. The one batch is
/// reused for every evaluation.
///
/// A failed fit degrades to `H = 0`; the model is then linear, which the
/// algorithm tolerates (only a bounded Hessian norm is assumed).
pub fn build_local_model(
    problem: &ProblemSpec,
    x0: &DVector<f64>,
    batch: &SampleBatch,
    params: &MeritParams,
    delta: f64,
    beta: f64,
    estimator: &GradientEstimator,
    fit_points: usize,
) -> Result<LocalModel> {
    let (value, g0) = merit_estimate(problem, x0, batch, params)?;
    let g = ConstraintVector::new(g0, problem.det_values(x0));

    // The quantile-gradient estimate is only needed when its penalty term is
    // active; otherwise its coefficient in the merit gradient is zero.
    let coef0 = (g0 + params.mu_bar[0] / params.rho).max(0.0);
    let grad_g0 = if coef0 > 0.0 {
        quantile_gradient(problem, x0, batch, beta, estimator)?
    } else {
        DVector::zeros(x0.len())
    };
    let gradient = merit_gradient_estimate(
        &problem.objective_gradient(x0),
        &g,
        &grad_g0,
        &problem.det_gradients(x0),
        params,
    );

    let displacements = fit_displacements(x0.len(), fit_points, delta);
    let residuals: Vec<f64> = displacements
        .par_iter()
        .map(|d| -> Result<f64> {
            let y = x0 + d;
            let (phi, _) = merit_estimate(problem, &y, batch, params)?;
            Ok(phi - value - gradient.dot(d))
        })
        .collect::<Result<Vec<f64>>>()?;

    let hessian = fit_hessian(&displacements, &residuals)
        .unwrap_or_else(|| DMatrix::zeros(x0.len(), x0.len()));

    Ok(LocalModel { base: x0.clone(), value, gradient, hessian, g0 })
}

/// Minimum-Frobenius-norm solve of `1/2 d_i' H d_i = r_i` through the Gram
/// system `(G + tau I) lambda = r`, `G_ij = (d_i . d_j)^2 / 4`,
/// `H = 1/2 sum_i lambda_i d_i d_i'`. The ridge handles both the
/// underdetermined (fewer points than Hessian entries) and the inconsistent
/// overdetermined case.
fn fit_hessian(displacements: &[DVector<f64>], residuals: &[f64]) -> Option<DMatrix<f64>> {
    let p = displacements.len();
    if p == 0 {
        return None;
    }
    let n = displacements[0].len();
    let mut gram = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let dot = displacements[i].dot(&displacements[j]);
            let v = 0.25 * dot * dot;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let ridge = 1e-10 * (gram.trace() / p as f64).max(1e-300);
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let rhs = DVector::from_column_slice(residuals);
    if !rhs.iter().all(|r| r.is_finite()) {
        return None;
    }
    let lambda = Cholesky::new(gram)?.solve(&rhs);
    let mut hessian = DMatrix::zeros(n, n);
    for (l, d) in lambda.iter().zip(displacements) {
        hessian.ger(0.5 * l, d, d, 1.0);
    }
    Some(hessian)
}

/// Minimizes the model on the ball of radius `delta`: the Newton step when
/// the Hessian is positive definite and the step is interior, the dogleg
/// boundary point otherwise, and a Cauchy (steepest-descent) step for
/// indefinite or degenerate Hessians. Every branch achieves at least the
/// classical fraction-of-Cauchy decrease
/// `1/2 ||g|| min(delta, ||g|| / (1 + ||H||))`.
pub fn solve_tr_subproblem(model: &LocalModel, delta: f64) -> DVector<f64> {
    let g = &model.gradient;
    let g_norm = g.norm();
    if g_norm == 0.0 || !g_norm.is_finite() {
        return DVector::zeros(g.len());
    }
    let hg = &model.hessian * g;
    let ghg = g.dot(&hg);

    if let Some(chol) = Cholesky::new(model.hessian.clone()) {
        let newton = -chol.solve(g);
        if newton.norm() <= delta {
            return newton;
        }
        let t_unconstrained = g_norm * g_norm / ghg;
        if t_unconstrained * g_norm >= delta {
            return g * (-delta / g_norm);
        }
        let cauchy = g * (-t_unconstrained);
        let leg = &newton - &cauchy;
        let a = leg.dot(&leg);
        let b = 2.0 * cauchy.dot(&leg);
        let c = cauchy.dot(&cauchy) - delta * delta;
        let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
        return cauchy + leg * tau.clamp(0.0, 1.0);
    }

    let t = if ghg > 0.0 {
        (g_norm * g_norm / ghg).min(delta / g_norm)
    } else {
        delta / g_norm
    };
    g * (-t)
}

/// Lower bound the subproblem solution must beat (checked in debug builds).
fn cauchy_decrease_bound(model: &LocalModel, delta: f64) -> f64 {
    let g_norm = model.gradient.norm();
    0.5 * g_norm * delta.min(g_norm / (1.0 + model.hessian.norm()))
}

/// One row of the replayable inner-solver audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct TrIteration {
    pub iteration: usize,
    pub delta: f64,
    pub model_decrease: f64,
    /// Realized / predicted decrease; `None` when the model decrease was too
    /// small to attempt a step.
    pub ratio: Option<f64>,
    pub accepted: bool,
    /// Sampled merit value at the incumbent.
    pub merit: f64,
    pub grad_norm: f64,
}

/// Result of one inner trust-region solve.
#[derive(Debug, Clone)]
pub struct TrResult {
    pub x: DVector<f64>,
    pub delta: f64,
    pub trace: Vec<TrIteration>,
    /// False when the iteration cap truncated the solve before the radius
    /// test fired.
    pub converged: bool,
}

/// Writes the trace as CSV: `iter,delta,model_decrease,ratio,accepted,merit,grad_norm`.
pub fn write_trace_csv<W: Write>(trace: &[TrIteration], mut out: W) -> Result<()> {
    writeln!(out, "iter,delta,model_decrease,ratio,accepted,merit,grad_norm")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.iteration,
            row.delta,
            row.model_decrease,
            row.ratio.map_or(String::new(), |r| r.to_string()),
            row.accepted,
            row.merit,
            row.grad_norm
        )?;
    }
    Ok(())
}

/// Minimizes the sampled merit function for fixed `(rho, mu_bar)`, starting
/// at `x_init`, until the radius drops to `r_term`. One scenario pool is
/// drawn for the whole solve (seeded from `seed`); every iteration's model
/// build and both merit values in the ratio test share it, so the inner
/// minimization is a deterministic run on that empirical measure. Callers
/// refresh scenarios between solves.
pub fn tr_minimize(
    problem: &ProblemSpec,
    x_init: &DVector<f64>,
    params: &MeritParams,
    r_term: f64,
    seed: u64,
    config: &TrParams,
) -> Result<TrResult> {
    config.validate()?;
    params.validate()?;
    if !(r_term > 0.0 && r_term < config.delta_init) {
        return Err(Error::InvalidArgument(format!(
            "r_term must lie in (0, delta_init), got {r_term} vs {}",
            config.delta_init
        )));
    }
    if params.n_constraints() != 1 + problem.n_det() {
        return Err(Error::InvalidArgument(format!(
            "expected {} multipliers, got {}",
            1 + problem.n_det(),
            params.n_constraints()
        )));
    }

    let fit_points = config.fit_point_count(problem.decision_len());
    let pool = draw_batch(&problem.dist, config.samples.pool_size(), seed)?;
    let mut x = x_init.clone();
    let mut delta = config.delta_init;
    let mut trace = Vec::new();

    for iteration in 0..config.max_iterations {
        let n_k = config.samples.size(delta);
        let prefix;
        let batch = if n_k >= pool.len() {
            &pool
        } else {
            prefix = pool.truncated(n_k);
            &prefix
        };
        let beta = config.beta.value(delta);
        let model = build_local_model(problem, &x, batch, params, delta, beta, &config.estimator, fit_points)?;
        let step = solve_tr_subproblem(&model, delta);
        let predicted = model.decrease(&step);
        debug_assert!(
            step.norm() <= delta * (1.0 + 1e-9),
            "subproblem step left the trust region"
        );
        debug_assert!(
            predicted >= cauchy_decrease_bound(&model, delta) - 1e-9 * (1.0 + predicted.abs()),
            "subproblem violated the Cauchy decrease contract"
        );

        let threshold = config.eta1 * delta.min(delta * delta);
        let mut ratio = None;
        let mut accepted = false;
        if predicted >= threshold {
            let trial = &x + &step;
            let (phi_trial, _) = merit_estimate(problem, &trial, batch, params)?;
            let r = (model.value - phi_trial) / predicted;
            ratio = Some(r);
            if r >= config.eta2 {
                accepted = true;
                x = trial;
            }
        }
        trace.push(TrIteration {
            iteration,
            delta,
            model_decrease: predicted,
            ratio,
            accepted,
            merit: model.value,
            grad_norm: model.gradient.norm(),
        });
        delta = if accepted { config.gamma_inc * delta } else { config.gamma_dec * delta };
        if delta <= r_term {
            return Ok(TrResult { x, delta, trace, converged: true });
        }
    }
    Ok(TrResult { x, delta, trace, converged: false })
}
