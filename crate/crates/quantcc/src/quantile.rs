//! Empirical quantiles of scalar samples and two estimators of the quantile
//! gradient: a central finite difference built on common random numbers, and
//! a kernel-smoothing baseline that averages per-scenario constraint
//! gradients near the quantile.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::SampleBatch;

/// Risk level and finite-difference step for quantile-gradient queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileQuery {
    /// Risk level in (0, 1); the estimator targets the (1 - alpha) quantile.
    pub alpha: f64,
    /// Finite-difference step, strictly positive.
    pub beta: f64,
}

impl QuantileQuery {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(QuantileQuery { alpha, beta })
    }
}

/// Zero-based index of the `ceil((1 - alpha) * N)`-th smallest element.
///
/// The small slack absorbs floating-point noise in `(1 - alpha) * N` so that
/// an exactly integral target is never bumped to the next order statistic.
fn quantile_index(n: usize, alpha: f64) -> usize {
    let target = (1.0 - alpha) * n as f64;
    let k = (target - 1e-9).ceil().max(1.0) as usize;
    k.min(n) - 1
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// The `ceil((1 - alpha) * N)`-th smallest element (1-based) of `values`,
/// i.e. the empirical `(1 - alpha)` quantile as a plain order statistic.
/// Ties and duplicates need no special handling. Sorts a copy of the input.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), alpha)])
}

/// Same order statistic as [`empirical_quantile`], computed in O(N) by
/// selection instead of a full sort. Used on the solver's hot path; the two
/// routes agree exactly (property-tested below).
fn order_statistic_select(values: &mut [f64], alpha: f64) -> f64 {
    let idx = quantile_index(values.len(), alpha);
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

/// Evaluates `c1(x, xi_i)` over every scenario in the batch, failing with the
/// offending scenario index if a value is non-finite.
pub(crate) fn constraint_values<F>(c1: &F, x: &DVector<f64>, batch: &SampleBatch) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>, &[f64]) -> f64 + ?Sized,
{
    let mut values = Vec::with_capacity(batch.len());
    for (i, scenario) in batch.iter().enumerate() {
        let v = c1(x, scenario);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { scenario: i });
        }
        values.push(v);
    }
    Ok(values)
}

/// Empirical `(1 - alpha)` quantile of `{c1(x, xi_i)}` over the batch.
/// Pure in `(x, batch)`.
pub fn quantile_of_constraint<F>(
    c1: &F,
    x: &DVector<f64>,
    batch: &SampleBatch,
    alpha: f64,
) -> Result<f64>
where
    F: Fn(&DVector<f64>, &[f64]) -> f64 + ?Sized,
{
    validate_alpha(alpha)?;
    let mut values = constraint_values(c1, x, batch)?;
    Ok(order_statistic_select(&mut values, alpha))
}

/// Central finite-difference estimator of the quantile gradient:
/// `sum_k [Q_N(x + beta e_k) - Q_N(x - beta e_k)] / (2 beta) e_k`.
///
/// All `2n` quantile evaluations reuse the one batch passed in (common random
/// numbers), which cancels most of the sampling noise in the differences.
/// The result is a pure function of `(x, batch, query)`.
pub fn fd_quantile_gradient<F>(
    c1: &F,
    x: &DVector<f64>,
    batch: &SampleBatch,
    query: &QuantileQuery,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &[f64]) -> f64 + Sync + ?Sized,
{
    QuantileQuery::new(query.alpha, query.beta)?;
    let n = x.len();
    let derivatives: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut plus = x.clone();
            plus[k] += query.beta;
            let mut minus = x.clone();
            minus[k] -= query.beta;
            let q_plus = quantile_of_constraint(c1, &plus, batch, query.alpha)?;
            let q_minus = quantile_of_constraint(c1, &minus, batch, query.alpha)?;
            Ok((q_plus - q_minus) / (2.0 * query.beta))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(derivatives))
}

/// The quintic smoothing kernel on `(-eps, eps)`:
/// `gamma_eps(y) = 15/16 (-(y/eps)^5/5 + 2(y/eps)^3/3 - y/eps + 8/15)`.
/// Continuously joins 1 at `-eps` and 0 at `eps`.
pub fn smoothing_kernel(y: f64, eps: f64) -> f64 {
    if y <= -eps {
        1.0
    } else if y >= eps {
        0.0
    } else {
        let u = y / eps;
        15.0 / 16.0 * (-u.powi(5) / 5.0 + 2.0 * u.powi(3) / 3.0 - u + 8.0 / 15.0)
    }
}

/// Derivative of [`smoothing_kernel`]: `-(15/(16 eps)) (1 - (y/eps)^2)^2` on
/// `(-eps, eps)` and zero outside.
pub fn smoothing_kernel_derivative(y: f64, eps: f64) -> f64 {
    if y <= -eps || y >= eps {
        0.0
    } else {
        let u = y / eps;
        -(15.0 / (16.0 * eps)) * (1.0 - u * u).powi(2)
    }
}

/// Interquartile range by the same ceiling-index order statistics used for
/// the quantile itself.
fn interquartile_range(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let q1 = sorted[quantile_index(sorted.len(), 0.75)]; // 25th percentile
    let q3 = sorted[quantile_index(sorted.len(), 0.25)]; // 75th percentile
    q3 - q1
}

/// Kernel-smoothing estimator of the quantile gradient: the
/// `Gamma'_eps`-weighted average of per-scenario constraint gradients
/// centered at the empirical quantile. The weights are nonnegative after
/// normalization, so the result is a convex combination of scenario
/// gradients.
///
/// `epsilon = None` selects the default bandwidth `0.1 x IQR` of the sampled
/// constraint values.
pub fn smoothing_quantile_gradient<F, G>(
    c1: &F,
    grad_c1: &G,
    x: &DVector<f64>,
    batch: &SampleBatch,
    alpha: f64,
    epsilon: Option<f64>,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &[f64]) -> f64 + ?Sized,
    G: Fn(&DVector<f64>, &[f64]) -> DVector<f64> + ?Sized,
{
    validate_alpha(alpha)?;
    if let Some(eps) = epsilon {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
        }
    }
    let values = constraint_values(c1, x, batch)?;
    let quantile = empirical_quantile(&values, alpha)?;
    let eps = match epsilon {
        Some(e) => e,
        None => {
            let iqr = interquartile_range(&values);
            if iqr > 0.0 {
                0.1 * iqr
            } else {
                // Constant sample: any bandwidth keeps the exact ties and the
                // normalization cancels its value.
                1.0
            }
        }
    };

    // Gamma'_eps <= 0 on the window; weight by magnitudes so the convex
    // combination is explicit.
    let mut total = 0.0;
    let mut gradient = DVector::zeros(x.len());
    for (i, &v) in values.iter().enumerate() {
        let w = -smoothing_kernel_derivative(v - quantile, eps);
        if w > 0.0 {
            total += w;
            gradient += grad_c1(x, batch.scenario(i)) * w;
        }
    }
    if total <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(gradient / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{draw_batch, DistributionSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn standard_normal_batch(n: usize, seed: u64) -> SampleBatch {
        let dist = DistributionSpec::IndependentGaussian {
            means: vec![0.0],
            variances: vec![1.0],
        };
        draw_batch(&dist, n, seed).unwrap()
    }

    fn point_mass_batch(value: f64, n: usize) -> SampleBatch {
        SampleBatch::from_rows(vec![value; n], 1, 0).unwrap()
    }

    #[test]
    fn ceiling_index_on_small_sample() {
        // values 1..10 at alpha = 0.1: ceil(0.9 * 10) = 9 -> ninth smallest.
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&values, 0.1).unwrap(), 9.0);
    }

    #[test]
    fn constant_sample_returns_constant() {
        let values = vec![3.25; 17];
        for alpha in [0.01, 0.3, 0.5, 0.9, 0.99] {
            assert_eq!(empirical_quantile(&values, alpha).unwrap(), 3.25);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(empirical_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn alpha_out_of_range_is_an_error() {
        assert!(empirical_quantile(&[1.0], 0.0).is_err());
        assert!(empirical_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn gaussian_quantile_close_to_inverse_cdf() {
        // z_{0.95} = 1.6449; tolerance 3 sqrt(alpha(1-alpha)) / (pdf sqrt(N)).
        let batch = standard_normal_batch(10_000, 123);
        let values: Vec<f64> = batch.iter().map(|s| s[0]).collect();
        let q = empirical_quantile(&values, 0.05).unwrap();
        assert!((q - 1.6449).abs() < 0.06, "quantile {q}");
    }

    #[test]
    fn selection_matches_sort_route() {
        let batch = standard_normal_batch(5_001, 9);
        let values: Vec<f64> = batch.iter().map(|s| s[0]).collect();
        for alpha in [0.03, 0.1, 0.25, 0.5, 0.77] {
            let mut copy = values.clone();
            assert_eq!(
                order_statistic_select(&mut copy, alpha),
                empirical_quantile(&values, alpha).unwrap()
            );
        }
    }

    #[test]
    fn constraint_quantile_deterministic_constraint() {
        // c1(x, xi) = x - xi with xi identically 0 gives x itself.
        let batch = point_mass_batch(0.0, 64);
        let c1 = |x: &DVector<f64>, xi: &[f64]| x[0] - xi[0];
        let x = DVector::from_vec(vec![3.0]);
        assert_eq!(quantile_of_constraint(&c1, &x, &batch, 0.1).unwrap(), 3.0);
    }

    #[test]
    fn constraint_quantile_flags_non_finite() {
        let batch = point_mass_batch(0.0, 4);
        let c1 = |_: &DVector<f64>, _: &[f64]| f64::NAN;
        let x = DVector::from_vec(vec![0.0]);
        match quantile_of_constraint(&c1, &x, &batch, 0.1) {
            Err(Error::NonFiniteEvaluation { scenario }) => assert_eq!(scenario, 0),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn fd_gradient_exact_on_linear() {
        // Central differences are exact on linear functions; a point-mass
        // batch removes all sampling effects.
        let batch = point_mass_batch(0.0, 8);
        let a = [2.0, -3.0, 0.5];
        let c1 = move |x: &DVector<f64>, _: &[f64]| a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
        let x = DVector::from_vec(vec![0.3, -1.0, 4.0]);
        let query = QuantileQuery::new(0.1, 0.37).unwrap();
        let g = fd_quantile_gradient(&c1, &x, &batch, &query).unwrap();
        assert_relative_eq!(g[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(g[1], -3.0, max_relative = 1e-12);
        assert_relative_eq!(g[2], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn fd_gradient_exact_on_quadratic() {
        let batch = point_mass_batch(0.0, 8);
        let c1 = |x: &DVector<f64>, _: &[f64]| x.dot(x);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        for beta in [1e-3, 0.1, 1.0] {
            let query = QuantileQuery::new(0.2, beta).unwrap();
            let g = fd_quantile_gradient(&c1, &x, &batch, &query).unwrap();
            assert_relative_eq!(g[0], 2.0, max_relative = 1e-9);
            assert_relative_eq!(g[1], 4.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn fd_gradient_pure_in_inputs() {
        let batch = standard_normal_batch(2_000, 5);
        let c1 = |x: &DVector<f64>, xi: &[f64]| x[0] * xi[0] + x[1];
        let x = DVector::from_vec(vec![1.0, -0.5]);
        let query = QuantileQuery::new(0.1, 1e-3).unwrap();
        let g1 = fd_quantile_gradient(&c1, &x, &batch, &query).unwrap();
        let g2 = fd_quantile_gradient(&c1, &x, &batch, &query).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn kernel_values_at_knots() {
        for eps in [0.5, 1.0, 3.0] {
            assert_relative_eq!(smoothing_kernel(-eps, eps), 1.0, epsilon = 1e-15);
            assert_relative_eq!(smoothing_kernel(eps, eps), 0.0, epsilon = 1e-15);
            assert_relative_eq!(smoothing_kernel(0.0, eps), 0.5, epsilon = 1e-15);
            assert_eq!(smoothing_kernel_derivative(-eps, eps), 0.0);
            assert_eq!(smoothing_kernel_derivative(eps, eps), 0.0);
            assert!(smoothing_kernel_derivative(0.0, eps) < 0.0);
        }
    }

    #[test]
    fn smoothing_gradient_is_convex_combination() {
        let batch = standard_normal_batch(500, 21);
        let c1 = |x: &DVector<f64>, xi: &[f64]| x[0] + xi[0];
        // Per-scenario gradient is constant (1); any convex combination is 1.
        let grad = |_: &DVector<f64>, _: &[f64]| DVector::from_vec(vec![1.0]);
        let x = DVector::from_vec(vec![0.0]);
        let g = smoothing_quantile_gradient(&c1, &grad, &x, &batch, 0.1, None).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_gradient_weights_by_scenario() {
        // Scenario-dependent gradients: the estimate must stay within the
        // convex hull of the per-scenario gradients.
        let batch = standard_normal_batch(2_000, 22);
        let c1 = |x: &DVector<f64>, xi: &[f64]| x[0] * xi[0];
        let grad = |_: &DVector<f64>, xi: &[f64]| DVector::from_vec(vec![xi[0]]);
        let x = DVector::from_vec(vec![1.0]);
        let g = smoothing_quantile_gradient(&c1, &grad, &x, &batch, 0.1, None).unwrap();
        let lo = batch.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
        let hi = batch.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!(g[0] >= lo && g[0] <= hi);
        // The quantile at alpha = 0.1 sits near z = 1.28; the kernel window
        // concentrates there.
        assert!((g[0] - 1.28).abs() < 0.3, "smoothed gradient {}", g[0]);
    }

    #[test]
    fn quantile_error_shrinks_like_root_n() {
        // Concentration of the empirical quantile process: quadrupling N
        // should roughly halve the mean absolute error (ratio in [1.5, 2.7]).
        let z95 = 1.6448536269514722;
        let mean_abs_err = |n: usize| -> f64 {
            let mut total = 0.0;
            for seed in 0..50 {
                let batch = standard_normal_batch(n, 1000 + seed);
                let values: Vec<f64> = batch.iter().map(|s| s[0]).collect();
                total += (empirical_quantile(&values, 0.05).unwrap() - z95).abs();
            }
            total / 50.0
        };
        let errs = [mean_abs_err(1_000), mean_abs_err(4_000), mean_abs_err(16_000)];
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (1.5..=2.7).contains(&ratio),
                "error ratio per quadrupling {ratio} outside [1.5, 2.7] ({errs:?})"
            );
        }
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_level(values in proptest::collection::vec(-1e6..1e6f64, 1..200),
                                      a1 in 0.01..0.98f64, gap in 0.001..0.5f64) {
            // Smaller alpha targets a higher quantile.
            let a2 = (a1 + gap).min(0.99);
            let q_hi = empirical_quantile(&values, a1).unwrap();
            let q_lo = empirical_quantile(&values, a2).unwrap();
            prop_assert!(q_hi >= q_lo);
        }

        #[test]
        fn quantile_translation_and_scaling_equivariance(
            values in proptest::collection::vec(-1e5..1e5f64, 1..100),
            shift in -1e4..1e4f64,
            scale in 0.01..100.0f64,
            alpha in 0.01..0.99f64,
        ) {
            let q = empirical_quantile(&values, alpha).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let qs = empirical_quantile(&shifted, alpha).unwrap();
            let qm = empirical_quantile(&scaled, alpha).unwrap();
            prop_assert!((qs - (q + shift)).abs() <= 1e-9 * (1.0 + q.abs() + shift.abs()));
            prop_assert!((qm - q * scale).abs() <= 1e-9 * (1.0 + (q * scale).abs()));
        }

        #[test]
        fn selection_always_matches_sort(values in proptest::collection::vec(-1e6..1e6f64, 1..300),
                                         alpha in 0.01..0.99f64) {
            let mut copy = values.clone();
            let by_select = order_statistic_select(&mut copy, alpha);
            let by_sort = empirical_quantile(&values, alpha).unwrap();
            prop_assert_eq!(by_select, by_sort);
        }
    }
}
