//! Outer augmented Lagrangian loop: repeated inner trust-region solves with
//! first-order multiplier updates, safeguarding, and geometric penalty growth
//! whenever the feasibility measure stalls above its tolerance.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::merit::{feasibility_sigma, update_multipliers, update_penalty, ConstraintVector, MeritParams};
use crate::problems::ProblemSpec;
use crate::quantile::quantile_of_constraint;
use crate::sampling::{derive_seed, draw_batch};
use crate::trust_region::{tr_minimize, TrParams};

/// Per-outer-iteration schedule for a tolerance or radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// The same value at every outer iteration (the benchmark setting).
    Fixed(f64),
    /// `max(floor, initial * factor^(k-1))` at outer iteration `k`.
    Geometric { initial: f64, factor: f64, floor: f64 },
}

impl Schedule {
    pub fn value(&self, outer_iteration: usize) -> f64 {
        match self {
            Schedule::Fixed(v) => *v,
            Schedule::Geometric { initial, factor, floor } => {
                (initial * factor.powi(outer_iteration.saturating_sub(1) as i32)).max(*floor)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Schedule::Fixed(v) => *v > 0.0,
            Schedule::Geometric { initial, factor, floor } => {
                *initial > 0.0 && *factor > 0.0 && *factor < 1.0 && *floor > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("schedule values must be positive (factor in (0,1))".into()))
        }
    }
}

/// Configuration of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmConfig {
    /// Penalty growth factor, > 1.
    pub theta_rho: f64,
    /// Multiplier safeguard bound.
    pub mu_max: f64,
    /// Initial penalty parameter.
    pub rho_init: f64,
    /// Penalty ceiling. The feasibility measure carries sampling noise, so
    /// its tolerance can stay unmet for many iterations; unbounded doubling
    /// would amplify that noise until the inner solver cannot track the
    /// merit function at all.
    pub rho_max: f64,
    /// Inner termination radii r^k.
    pub r_schedule: Schedule,
    /// Feasibility tolerances eta^k.
    pub eta_schedule: Schedule,
    /// Fresh-sample count for the multiplier update and feasibility measure.
    pub validation_samples: usize,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Relative movement below which an outer iterate counts as stalled.
    pub stall_tol: f64,
    /// Model-confidence parameter; accepted for provenance, not consulted at
    /// runtime.
    pub epsilon: f64,
    /// Legacy tuning knobs accepted for provenance; no runtime role.
    pub theta_r: f64,
    pub theta_mu: f64,
    /// Inner trust-region settings.
    pub trust_region: TrParams,
    /// Master seed; all batches in the run derive from it (streams `2k` and
    /// `2k + 1` for outer iteration `k`).
    pub seed: u64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            theta_rho: 2.0,
            mu_max: 1e4,
            rho_init: 10.0,
            rho_max: 1e4,
            r_schedule: Schedule::Fixed(1e-5),
            eta_schedule: Schedule::Fixed(1e-5),
            validation_samples: 10_000,
            max_outer: 50,
            stall_tol: 1e-6,
            epsilon: 0.1,
            theta_r: 0.5,
            theta_mu: 0.5,
            trust_region: TrParams::default(),
            seed: 0,
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_rho > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "theta_rho must exceed 1, got {}",
                self.theta_rho
            )));
        }
        if !(self.mu_max > 0.0 && self.rho_init > 0.0) {
            return Err(Error::InvalidArgument("mu_max and rho_init must be positive".into()));
        }
        if self.rho_max < self.rho_init {
            return Err(Error::InvalidArgument("rho_max must be at least rho_init".into()));
        }
        if self.validation_samples < 1 || self.max_outer < 1 {
            return Err(Error::InvalidArgument("sample and iteration counts must be positive".into()));
        }
        self.r_schedule.validate()?;
        self.eta_schedule.validate()?;
        self.trust_region.validate()
    }
}

/// One row of the outer-loop audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Objective value (internal minimization sense).
    pub objective: f64,
    /// Fresh-sample quantile-constraint estimate at the iterate.
    pub g0: f64,
    pub sigma: f64,
    pub rho: f64,
    pub mu_norm: f64,
    pub inner_iterations: usize,
    pub delta_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlmStatus {
    /// Feasibility tolerance met with stalled iterates on two consecutive
    /// outer iterations.
    Converged,
    /// Outer iteration cap reached.
    MaxOuter,
    /// An inner solve hit its iteration cap.
    InnerFailure,
}

/// Result of the outer solve.
#[derive(Debug, Clone)]
pub struct AlmResult {
    pub x: DVector<f64>,
    /// Final multiplier/penalty state.
    pub params: MeritParams,
    pub outer_trace: Vec<OuterRecord>,
    pub status: AlmStatus,
}

impl AlmResult {
    /// Feasibility measure at the last outer iteration.
    pub fn final_sigma(&self) -> f64 {
        self.outer_trace.last().map_or(f64::NAN, |r| r.sigma)
    }
}

/// Runs the outer augmented Lagrangian method from `x0`.
///
/// Every multiplier starts at 1. Outer iteration `k` (1-based) performs the
/// inner trust-region solve from the previous iterate with the safeguarded
/// multipliers, draws a fresh batch to estimate `g0` at the new iterate,
/// applies the first-order multiplier update, and grows the penalty (up to
/// `rho_max`) if the feasibility measure still exceeds its tolerance.
///
/// The loop stops once the measure is within tolerance and the iterate has
/// stalled (relative movement below `stall_tol`) on two consecutive
/// iterations, or once the measure is within tolerance on three consecutive
/// iterations — under resampling the iterate keeps jittering at the sampling
/// noise scale, so a persistent feasibility certificate is the reachable
/// form of the stopping target.
///
/// Later inner solves start from a radius warmed by the previous inner
/// solve's final radius instead of `delta_init`; the inner loop re-expands it
/// when the multiplier update moved the merit minimizer far.
pub fn alm_solve(problem: &ProblemSpec, x0: &DVector<f64>, config: &AlmConfig) -> Result<AlmResult> {
    config.validate()?;
    if x0.len() != problem.decision_len() {
        return Err(Error::InvalidArgument(format!(
            "x0 has length {}, problem expects {}",
            x0.len(),
            problem.decision_len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("x0 must be finite".into()));
    }

    let n_constraints = 1 + problem.n_det();
    let mut params = MeritParams::new(config.rho_init, n_constraints, config.mu_max)?;
    let mut x = x0.clone();
    let mut trace: Vec<OuterRecord> = Vec::new();
    let mut delta_init = config.trust_region.delta_init;
    let mut feasible_stalls = 0usize;
    let mut feasible_streak = 0usize;

    for k in 1..=config.max_outer {
        let r_k = config.r_schedule.value(k);
        let eta_k = config.eta_schedule.value(k);

        let mut tr_config = config.trust_region;
        tr_config.delta_init = delta_init.max(r_k * 64.0);
        let inner_seed = derive_seed(config.seed, 2 * k as u64);
        let inner = tr_minimize(problem, &x, &params, r_k, inner_seed, &tr_config)?;
        let moved = (&inner.x - &x).norm();
        let x_new = inner.x;

        // Fresh scenarios for the multiplier update and feasibility measure.
        let val_seed = derive_seed(config.seed, 2 * k as u64 + 1);
        let batch = draw_batch(&problem.dist, config.validation_samples, val_seed)?;
        let g0 = quantile_of_constraint(problem.chance_fn(), &x_new, &batch, problem.alpha)?;
        let g = ConstraintVector::new(g0, problem.det_values(&x_new));

        let updated = update_multipliers(&g, &params);
        let sigma = feasibility_sigma(&g, &updated.mu);
        params = update_penalty(sigma, eta_k, &updated, config.theta_rho);
        params.rho = params.rho.min(config.rho_max);

        trace.push(OuterRecord {
            iteration: k,
            objective: problem.objective(&x_new),
            g0,
            sigma,
            rho: params.rho,
            mu_norm: params.mu.norm(),
            inner_iterations: inner.trace.len(),
            delta_final: inner.delta,
        });
        x = x_new;

        if !inner.converged {
            return Ok(AlmResult { x, params, outer_trace: trace, status: AlmStatus::InnerFailure });
        }

        // Warm-start the next inner radius near where this solve finished,
        // but keep a moderate re-exploration floor: the multiplier update
        // moves the merit minimizer, and a collapsed radius would freeze the
        // iterate into a purely local polish.
        let explore_floor = (0.1 * config.trust_region.delta_init).min(config.trust_region.delta_init);
        delta_init = (inner.delta * 8.0)
            .max(explore_floor)
            .min(config.trust_region.delta_init);

        let stalled = moved <= config.stall_tol * (1.0 + x.norm());
        if sigma <= eta_k {
            feasible_streak += 1;
            feasible_stalls = if stalled { feasible_stalls + 1 } else { 0 };
        } else {
            feasible_streak = 0;
            feasible_stalls = 0;
        }
        if feasible_stalls >= 2 || feasible_streak >= 3 {
            return Ok(AlmResult { x, params, outer_trace: trace, status: AlmStatus::Converged });
        }
    }
    Ok(AlmResult { x, params, outer_trace: trace, status: AlmStatus::MaxOuter })
}

/// Out-of-sample check of a candidate solution on a fresh batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// Objective in reported (table) sense.
    pub objective: f64,
    /// Fraction of scenarios with `c1(x, xi) > 0`.
    pub violation: f64,
    /// Empirical quantile of the constraint at `x`.
    pub quantile: f64,
}

/// Draws `n_val` fresh scenarios and reports the empirical violation
/// probability and constraint quantile at `x`.
pub fn validate_solution(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    n_val: usize,
    alpha: f64,
    seed: u64,
) -> Result<ValidationReport> {
    if n_val < 1_000 {
        return Err(Error::InvalidArgument(format!(
            "validation needs at least 1000 scenarios, got {n_val}"
        )));
    }
    let batch = draw_batch(&problem.dist, n_val, seed)?;
    let mut violations = 0usize;
    for scenario in batch.iter() {
        if problem.chance_value(x, scenario) > 0.0 {
            violations += 1;
        }
    }
    let quantile = quantile_of_constraint(problem.chance_fn(), x, &batch, alpha)?;
    Ok(ValidationReport {
        objective: problem.reported_objective(x),
        violation: violations as f64 / n_val as f64,
        quantile,
    })
}
