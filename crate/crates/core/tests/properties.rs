use proptest::prelude::*;

use timeframe::bootstrap::critical_value;
use timeframe::ci::percentile_interval;
use timeframe::models::{beta_norm, EvalGrid};
use timeframe::{extract_regions, ConfidenceBand, ModelSpec, ParamVector};

fn central_difference(spec: &ModelSpec, theta: &ParamVector, t: f64) -> f64 {
    let h = 1e-5 * t.max(1.0);
    (spec.eval(theta, t + h).unwrap() - spec.eval(theta, t - h).unwrap()) / (2.0 * h)
}

fn four_pll_params() -> impl Strategy<Value = ParamVector> {
    (-5.0..15.0f64, -4.0..4.0f64, 3.0..40.0f64, 0.5..10.0f64).prop_map(|(a, b, c, h)| ParamVector::new(a, b, c, h))
}

fn beta_params() -> impl Strategy<Value = ParamVector> {
    (-5.0..15.0f64, -4.0..4.0f64, 0.1..4.0f64, 0.1..4.0f64).prop_map(|(a, b, d1, d2)| ParamVector::new(a, b, d1, d2))
}

fn band(lower: Vec<f64>) -> ConfidenceBand {
    let grid: Vec<f64> = (1..=lower.len()).map(|i| i as f64 * 0.5).collect();
    let span = (grid[0], grid[grid.len() - 1]);
    let mut b = ConfidenceBand::assemble(span, grid, lower.clone(), vec![0.0; lower.len()], 0.0, 0.05);
    b.lower = lower;
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn four_pll_derivative_matches_finite_difference(theta in four_pll_params(), t in 1.0..44.0f64) {
        let spec = ModelSpec::four_pll();
        let exact = spec.derivative(&theta, t).unwrap();
        let fd = central_difference(&spec, &theta, t);
        prop_assert!((exact - fd).abs() <= 1e-6 * exact.abs().max(1e-3));
    }

    #[test]
    fn beta_derivative_matches_finite_difference(theta in beta_params(), t in 1.0..44.0f64) {
        let spec = ModelSpec::beta(54.0).unwrap();
        let exact = spec.derivative(&theta, t).unwrap();
        let fd = central_difference(&spec, &theta, t);
        prop_assert!((exact - fd).abs() <= 1e-6 * exact.abs().max(1e-3));
    }

    #[test]
    fn four_pll_is_monotone_in_direction_of_b(theta in four_pll_params(), t in 0.1..45.0f64) {
        let d = ModelSpec::four_pll().derivative(&theta, t).unwrap();
        prop_assert!(d * theta.b() >= 0.0);
    }

    #[test]
    fn beta_extremum_at_mode(theta in beta_params()) {
        let spec = ModelSpec::beta(54.0).unwrap();
        let (d1, d2) = (theta.0[2], theta.0[3]);
        let mode = 54.0 * d1 / (d1 + d2);
        prop_assert!(spec.derivative(&theta, mode).unwrap().abs() < 1e-9 * theta.b().abs().max(1.0));
        let peak = spec.eval(&theta, mode).unwrap();
        prop_assert!((peak - theta.a() - theta.b()).abs() < 1e-9 * (1.0 + peak.abs()));
        prop_assert!((beta_norm(d1, d2) * (d1 / (d1 + d2)).powf(d1) * (d2 / (d1 + d2)).powf(d2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abs_derivative_is_nonnegative(theta in four_pll_params()) {
        let grid = EvalGrid::new(0.0, 45.0, 0.1).unwrap();
        prop_assert!(grid.abs_derivative(&ModelSpec::four_pll(), &theta).iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn regions_shrink_as_lambda_grows(lower in prop::collection::vec(-1.0..1.0f64, 2..60), l1 in -0.5..0.5f64, dl in 0.0..0.5f64) {
        let b = band(lower);
        let wide = extract_regions(&b, l1);
        let narrow = extract_regions(&b, l1 + dl);
        for s in &narrow.subsets {
            prop_assert!(wide.subsets.iter().any(|w| w.first_index <= s.first_index && s.last_index <= w.last_index));
        }
        for s in wide.subsets.iter().chain(&narrow.subsets) {
            prop_assert!(s.start <= s.t_max && s.t_max <= s.end);
        }
        prop_assert_eq!(wide.reject_h0, !wide.subsets.is_empty());
    }

    #[test]
    fn band_never_exceeds_estimate(est in prop::collection::vec(0.0..1.0f64, 1..40), c in 0.0..5.0f64) {
        let sd: Vec<f64> = est.iter().map(|e| 0.1 * e + 0.01).collect();
        let grid: Vec<f64> = (1..=est.len()).map(|i| i as f64).collect();
        let span = (grid[0], grid[grid.len() - 1]);
        let b = ConfidenceBand::assemble(span, grid, est.clone(), sd, c, 0.05);
        prop_assert!(b.lower.iter().zip(&est).all(|(l, e)| l <= e));
    }

    #[test]
    fn percentile_interval_is_ordered(values in prop::collection::vec(-50.0..50.0f64, 1..200), alpha in 0.01..0.5f64) {
        let (lo, hi) = percentile_interval(&values, alpha);
        prop_assert!(lo <= hi);
        prop_assert!(values.contains(&lo) && values.contains(&hi));
    }

    #[test]
    fn critical_value_is_a_sample(values in prop::collection::vec(-5.0..5.0f64, 50..300), alpha in 0.01..0.5f64) {
        let c = critical_value(&values, alpha).unwrap();
        prop_assert!(values.contains(&c));
        let below = values.iter().filter(|v| **v <= c).count() as f64;
        prop_assert!(below >= (1.0 - alpha) * values.len() as f64 - 1e-9);
    }
}
