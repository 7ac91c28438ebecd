mod common;

use proptest::prelude::*;

use common::*;
use stablekit::examples::builtin;
use stablekit::grid::Grid;
use stablekit::model::{w1_sphere, NumericalParams};
use stablekit::montecarlo::{simulate_paths, Histogram};
use stablekit::parametrix::neumann_run;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn w1_matches_exhaustive_plans(p in circle_measure(4), q in circle_measure(4)) {
        check_w1_exhaustive(&p, &q).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn w1_is_a_metric(p in circle_measure(4), q in circle_measure(4), r in circle_measure(4)) {
        check_w1_metric(&p, &q, &r).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn lipschitz_tests_are_below_w1(
        p in circle_measure(4),
        q in circle_measure(4),
        anchors in prop::collection::vec((0.0..std::f64::consts::TAU, -1.0f64..1.0), 1..4),
    ) {
        // f(ℓ) = min_k (c_k + |ℓ − a_k|) is 1-Lipschitz for the chordal metric
        let f = |l: &[f64]| anchors.iter().map(|&(a, c)| c + chord(l, &[a.cos(), a.sin()])).fold(f64::INFINITY, f64::min);
        let ip: f64 = p.iter().map(|a| a.weight * f(&a.dir)).sum();
        let iq: f64 = q.iter().map(|a| a.weight * f(&a.dir)).sum();
        prop_assert!((ip - iq).abs() <= w1_sphere(&p, &q).unwrap() + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponent_is_conjugate_symmetric(input in exponent_inputs()) {
        check_conjugate(input).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn printed_expressions_parse_back(input in expr_inputs()) {
        check_expr_round_trip(input).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w_correction_integrates_to_the_intrinsic_drift(input in w_inputs()) {
        check_w_identity(input).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn seeded_ensembles_repeat(input in seed_inputs()) {
        check_seed(input).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn flows_are_comparable_with_a_stable_constant() {
    check_flow_comparability().unwrap();
}

// ---------- Chapman–Kolmogorov and weak order ----------

#[test]
fn chapman_kolmogorov_for_cauchy() {
    let model = builtin("const-cauchy").unwrap();
    // four terms still carry an 8% truncation error at t = 0.5
    let params = NumericalParams { k_max: 8, ..NumericalParams::default() };
    let grid = Grid::parse("-16:16:256", 1).unwrap();
    let xs = grid.points();
    let run = neumann_run(&model, &params, &[0.25, 0.5], &xs, &grid).unwrap();
    let p = &run.density;
    let dz = grid.cell_volume();
    let n = grid.len();
    let mut worst: f64 = 0.0;
    for i in (0..n).filter(|&i| xs[i][0].abs() <= 2.0) {
        for j in (0..n).filter(|&j| xs[j][0].abs() <= 2.0) {
            let composed: f64 = (0..n).map(|k| p.row(0, i)[k] * p.row(0, k)[j]).sum::<f64>() * dz;
            let direct = p.row(1, i)[j];
            worst = worst.max((composed - direct).abs() / direct);
        }
    }
    assert!(worst < 0.05, "worst relative gap {worst}");
}

#[test]
fn halving_the_step_stays_within_noise_for_cauchy() {
    let model = builtin("const-cauchy").unwrap();
    let n = 100_000;
    let a = simulate_paths(&model, &[0.0], 0.5, 0.5 / 100.0, n, 3).unwrap().terminal_1d();
    let b = simulate_paths(&model, &[0.0], 0.5, 0.5 / 200.0, n, 4).unwrap().terminal_1d();
    let (ha, hb) = (Histogram::new(&a, -5.0, 5.0, 40), Histogram::new(&b, -5.0, 5.0, 40));
    let (pa, pb) = (ha.probabilities(), hb.probabilities());
    for (k, (x, y)) in pa.iter().zip(&pb).enumerate() {
        // two independent multinomial cells, 4σ band
        let sd = ((x * (1.0 - x) + y * (1.0 - y)) / n as f64).sqrt();
        assert!((x - y).abs() <= 4.0 * sd + 1e-12, "bin {k}: {x} vs {y}");
    }
}
