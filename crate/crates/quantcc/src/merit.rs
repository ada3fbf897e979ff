//! Augmented Lagrangian merit function for inequality constraints
//! (Powell-Hestenes-Rockafellar form), its sampled gradient estimator, the
//! feasibility measure, and the multiplier/penalty update rules.
//!
//! Constraints are indexed `0..=l2`: slot 0 is the (sampled) quantile
//! constraint, slots `1..=l2` are the deterministic constraints.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Penalty and multiplier state shared by the inner and outer solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct MeritParams {
    /// Penalty parameter, strictly positive.
    pub rho: f64,
    /// Multiplier estimates, nonnegative, indexed as described above.
    pub mu: DVector<f64>,
    /// Safeguarded multipliers used inside the merit function, clipped to
    /// `[0, mu_max]`.
    pub mu_bar: DVector<f64>,
    /// Safeguard bound, strictly positive.
    pub mu_max: f64,
}

impl MeritParams {
    /// Fresh parameters with every multiplier (and safeguard) set to 1, the
    /// outer solver's starting state.
    pub fn new(rho: f64, n_constraints: usize, mu_max: f64) -> Result<Self> {
        let p = MeritParams {
            rho,
            mu: DVector::from_element(n_constraints, 1.0),
            mu_bar: DVector::from_element(n_constraints, 1.0),
            mu_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.mu_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mu_max must be positive, got {}",
                self.mu_max
            )));
        }
        if self.mu.len() != self.mu_bar.len() {
            return Err(Error::InvalidArgument("mu and mu_bar lengths differ".into()));
        }
        if self.mu.iter().any(|m| *m < 0.0) {
            return Err(Error::InvalidArgument("mu must be nonnegative".into()));
        }
        if self.mu_bar.iter().any(|m| *m < 0.0 || *m > self.mu_max) {
            return Err(Error::InvalidArgument("mu_bar must lie in [0, mu_max]".into()));
        }
        Ok(())
    }

    pub fn n_constraints(&self) -> usize {
        self.mu.len()
    }
}

/// Constraint values at a point: the sampled quantile constraint `g0` plus
/// the deterministic constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintVector {
    pub g0: f64,
    pub g_det: Vec<f64>,
}

impl ConstraintVector {
    pub fn new(g0: f64, g_det: Vec<f64>) -> Self {
        ConstraintVector { g0, g_det }
    }

    pub fn len(&self) -> usize {
        1 + self.g_det.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values in multiplier order: `g0` first, then the deterministic ones.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.g0).chain(self.g_det.iter().copied())
    }
}

/// Merit value `f + (rho/2) sum_i max{0, g_i + mu_bar_i / rho}^2`.
///
/// With a sampled `g0` this is the N-sample merit estimate; with the exact
/// quantile it is the exact merit function. The safeguarded multipliers are
/// the ones that enter here.
pub fn merit_value(f_val: f64, g: &ConstraintVector, p: &MeritParams) -> f64 {
    let mut penalty = 0.0;
    for (gi, mu_bar) in g.iter().zip(p.mu_bar.iter()) {
        let shifted = gi + mu_bar / p.rho;
        if shifted > 0.0 {
            penalty += shifted * shifted;
        }
    }
    f_val + 0.5 * p.rho * penalty
}

/// Gradient estimator for the merit function:
/// `grad f + rho max{0, g0 + mu_bar_0/rho} G + rho sum_i max{0, g_i + mu_bar_i/rho} grad g_i`,
/// where `G` estimates the quantile gradient.
pub fn merit_gradient_estimate(
    grad_f: &DVector<f64>,
    g: &ConstraintVector,
    grad_g0_est: &DVector<f64>,
    grad_g_det: &[DVector<f64>],
    p: &MeritParams,
) -> DVector<f64> {
    debug_assert_eq!(g.g_det.len(), grad_g_det.len());
    debug_assert_eq!(g.len(), p.n_constraints());
    let mut grad = grad_f.clone();
    let coef0 = (g.g0 + p.mu_bar[0] / p.rho).max(0.0);
    if coef0 > 0.0 {
        grad += grad_g0_est * (p.rho * coef0);
    }
    for (i, grad_gi) in grad_g_det.iter().enumerate() {
        let coef = (g.g_det[i] + p.mu_bar[1 + i] / p.rho).max(0.0);
        if coef > 0.0 {
            grad += grad_gi * (p.rho * coef);
        }
    }
    grad
}

/// Feasibility-and-complementarity measure
/// `sqrt( sum_i min{-g_i, mu_i}^2 )`; zero exactly when every constraint is
/// feasible with a complementary multiplier.
pub fn feasibility_sigma(g: &ConstraintVector, mu: &DVector<f64>) -> f64 {
    debug_assert_eq!(g.len(), mu.len());
    g.iter()
        .zip(mu.iter())
        .map(|(gi, mi)| {
            let t = (-gi).min(*mi);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// First-order multiplier update `mu_i <- max{0, mu_bar_i + rho g_i}`
/// followed by the safeguard clip `mu_bar_i <- min{mu_max, mu_i}`. The
/// penalty parameter is left untouched.
pub fn update_multipliers(g: &ConstraintVector, p: &MeritParams) -> MeritParams {
    debug_assert_eq!(g.len(), p.n_constraints());
    let mut updated = p.clone();
    for (i, gi) in g.iter().enumerate() {
        let mu = (p.mu_bar[i] + p.rho * gi).max(0.0);
        updated.mu[i] = mu;
        updated.mu_bar[i] = mu.min(p.mu_max);
    }
    updated
}

/// Multiplies the penalty by `theta_rho` when the feasibility measure still
/// exceeds the tolerance, otherwise leaves it unchanged.
pub fn update_penalty(sigma: f64, eta: f64, p: &MeritParams, theta_rho: f64) -> MeritParams {
    debug_assert!(theta_rho > 1.0);
    let mut updated = p.clone();
    if sigma > eta {
        updated.rho *= theta_rho;
    }
    updated
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(rho: f64, mu: Vec<f64>, mu_max: f64) -> MeritParams {
        let mu = DVector::from_vec(mu);
        MeritParams { rho, mu: mu.clone(), mu_bar: mu, mu_max }
    }

    #[test]
    fn inactive_penalty_returns_objective() {
        let p = params(2.0, vec![0.5, 0.0], 100.0);
        let g = ConstraintVector::new(-1.0, vec![-3.0]);
        // g0 + mu/rho = -1 + 0.25 < 0 and -3 + 0 < 0: both clamp to zero.
        assert_eq!(merit_value(7.5, &g, &p), 7.5);
    }

    #[test]
    fn single_active_constraint() {
        let p = params(2.0, vec![0.0], 100.0);
        let g = ConstraintVector::new(1.0, vec![]);
        assert_relative_eq!(merit_value(0.0, &g, &p), 1.0);
    }

    #[test]
    fn mixed_active_inactive() {
        // f=1, rho=4, g=(0.5,-3), mu=(2,8):
        // 1 + 2*[(0.5+0.5)^2 + max{0,-3+2}^2] = 3.
        let p = params(4.0, vec![2.0, 8.0], 100.0);
        let g = ConstraintVector::new(0.5, vec![-3.0]);
        assert_relative_eq!(merit_value(1.0, &g, &p), 3.0);
    }

    #[test]
    fn gradient_inactive_is_grad_f() {
        let p = params(1.5, vec![0.1, 0.2], 100.0);
        let g = ConstraintVector::new(-1.0, vec![-2.0]);
        let grad_f = DVector::from_vec(vec![3.0, -4.0]);
        let out = merit_gradient_estimate(
            &grad_f,
            &g,
            &DVector::from_vec(vec![9.0, 9.0]),
            &[DVector::from_vec(vec![5.0, 5.0])],
            &p,
        );
        assert_eq!(out, grad_f);
    }

    #[test]
    fn gradient_single_active() {
        // grad f = 0, rho = 1, g = 1, mu = 0, grad g = (1,0) -> (1,0).
        let p = params(1.0, vec![0.0], 100.0);
        let g = ConstraintVector::new(1.0, vec![]);
        let out = merit_gradient_estimate(
            &DVector::zeros(2),
            &g,
            &DVector::from_vec(vec![1.0, 0.0]),
            &[],
            &p,
        );
        assert_eq!(out, DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn sigma_direct_formula() {
        let g = ConstraintVector::new(-2.0, vec![0.5]);
        let mu = DVector::from_vec(vec![1.0, 1.0]);
        // sqrt(min{2,1}^2 + min{-0.5,1}^2) = sqrt(1.25)
        assert_relative_eq!(feasibility_sigma(&g, &mu), 1.25f64.sqrt());
    }

    #[test]
    fn sigma_zero_at_kkt_consistent_points() {
        let g = ConstraintVector::new(0.0, vec![0.0]);
        let mu = DVector::zeros(2);
        assert_eq!(feasibility_sigma(&g, &mu), 0.0);
        // Feasible point with zero multipliers.
        let g = ConstraintVector::new(-1.0, vec![-0.5, -2.0]);
        let mu = DVector::zeros(3);
        assert_eq!(feasibility_sigma(&g, &mu), 0.0);
    }

    #[test]
    fn multiplier_update_examples() {
        // mu_bar=1, rho=10, g=-0.5 -> mu = max{0, 1-5} = 0.
        let p = params(10.0, vec![1.0], 100.0);
        let upd = update_multipliers(&ConstraintVector::new(-0.5, vec![]), &p);
        assert_eq!(upd.mu[0], 0.0);
        assert_eq!(upd.mu_bar[0], 0.0);
        // g = 0.2 -> mu = 3 under the bound.
        let upd = update_multipliers(&ConstraintVector::new(0.2, vec![]), &p);
        assert_eq!(upd.mu[0], 3.0);
        assert_eq!(upd.mu_bar[0], 3.0);
        // g = 20 -> mu = 201, safeguard binds at 100.
        let upd = update_multipliers(&ConstraintVector::new(20.0, vec![]), &p);
        assert_eq!(upd.mu[0], 201.0);
        assert_eq!(upd.mu_bar[0], 100.0);
        // rho untouched.
        assert_eq!(upd.rho, 10.0);
    }

    #[test]
    fn penalty_update_rule() {
        let p = params(10.0, vec![1.0], 100.0);
        assert_eq!(update_penalty(0.5, 1e-5, &p, 2.0).rho, 20.0);
        assert_eq!(update_penalty(0.0, 1e-5, &p, 2.0).rho, 10.0);
        // Five consecutive infeasible iterations from rho = 1 reach 32.
        let mut q = params(1.0, vec![1.0], 100.0);
        for _ in 0..5 {
            q = update_penalty(1.0, 1e-5, &q, 2.0);
        }
        assert_eq!(q.rho, 32.0);
    }

    #[test]
    fn gradient_matches_central_differences_on_smooth_point() {
        // Deterministic two-constraint toy; both penalty branches active or
        // inactive away from the kink, so the merit function is smooth there.
        let p = params(3.0, vec![0.7, 0.4], 50.0);
        let f = |x: &DVector<f64>| x[0] * x[0] + 2.0 * x[1] * x[1] + x[0] * x[1];
        let grad_f = |x: &DVector<f64>| DVector::from_vec(vec![2.0 * x[0] + x[1], 4.0 * x[1] + x[0]]);
        let g0 = |x: &DVector<f64>| x[0] + x[1] - 0.3;
        let grad_g0 = DVector::from_vec(vec![1.0, 1.0]);
        let g1 = |x: &DVector<f64>| 0.5 * x[0] - x[1] + 0.1;
        let grad_g1 = DVector::from_vec(vec![0.5, -1.0]);

        let x = DVector::from_vec(vec![0.4, 0.2]);
        let gv = ConstraintVector::new(g0(&x), vec![g1(&x)]);
        let analytic = merit_gradient_estimate(&grad_f(&x), &gv, &grad_g0, &[grad_g1.clone()], &p);

        let phi = |x: &DVector<f64>| {
            merit_value(f(x), &ConstraintVector::new(g0(x), vec![g1(x)]), &p)
        };
        let h = 1e-6;
        let mut fd = DVector::zeros(2);
        for k in 0..2 {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            fd[k] = (phi(&xp) - phi(&xm)) / (2.0 * h);
        }
        let tol = 1e-6 * (1.0 + analytic.norm());
        assert!((&analytic - &fd).norm() <= tol, "analytic {analytic:?} fd {fd:?}");
    }

    proptest! {
        #[test]
        fn updated_multipliers_stay_in_bounds(
            g0 in -1e6..1e6f64,
            g1 in -1e6..1e6f64,
            mu0 in 0.0..1e4f64,
            mu1 in 0.0..1e4f64,
            rho in 0.001..1e4f64,
        ) {
            let mu_max = 1e4;
            let p = MeritParams {
                rho,
                mu: DVector::from_vec(vec![mu0, mu1]),
                mu_bar: DVector::from_vec(vec![mu0.min(mu_max), mu1.min(mu_max)]),
                mu_max,
            };
            let upd = update_multipliers(&ConstraintVector::new(g0, vec![g1]), &p);
            for i in 0..2 {
                prop_assert!(upd.mu[i] >= 0.0);
                prop_assert!(upd.mu_bar[i] >= 0.0 && upd.mu_bar[i] <= mu_max);
            }
        }

        #[test]
        fn merit_never_below_objective(
            f in -1e6..1e6f64,
            g0 in -1e3..1e3f64,
            g1 in -1e3..1e3f64,
            mu0 in 0.0..100.0f64,
            mu1 in 0.0..100.0f64,
            rho in 0.01..100.0f64,
        ) {
            let p = MeritParams {
                rho,
                mu: DVector::from_vec(vec![mu0, mu1]),
                mu_bar: DVector::from_vec(vec![mu0, mu1]),
                mu_max: 1e4,
            };
            let g = ConstraintVector::new(g0, vec![g1]);
            prop_assert!(merit_value(f, &g, &p) >= f);
        }

        #[test]
        fn sigma_zero_iff_feasible_and_complementary(
            g0 in -10.0..10.0f64,
            g1 in -10.0..10.0f64,
            mu0 in 0.0..10.0f64,
            mu1 in 0.0..10.0f64,
        ) {
            let g = ConstraintVector::new(g0, vec![g1]);
            let mu = DVector::from_vec(vec![mu0, mu1]);
            let sigma = feasibility_sigma(&g, &mu);
            let characterization = [(g0, mu0), (g1, mu1)]
                .iter()
                .all(|(gi, mi)| *gi <= 0.0 && (*mi == 0.0 || *gi == 0.0));
            prop_assert_eq!(sigma == 0.0, characterization);
        }
    }
}
