use std::f64::consts::PI;

use stablekit::examples::builtin;
use stablekit::grid::Grid;
use stablekit::model::NumericalParams;
use stablekit::parametrix::{neumann_density, neumann_run, row_masses};

fn cauchy(t: f64, r: f64) -> f64 {
    t / (PI * (t * t + r * r))
}

/// Cell average of the Cauchy kernel over [y − h/2, y + h/2].
fn cauchy_cell(t: f64, r: f64, h: f64) -> f64 {
    (((r + 0.5 * h) / t).atan() - ((r - 0.5 * h) / t).atan()) / (PI * h)
}

fn cauchy_worst(k_max: usize, times: &[f64]) -> Vec<f64> {
    let model = builtin("const-cauchy").unwrap();
    let grid = Grid::parse("-32:32:1024", 1).unwrap();
    let params = NumericalParams { k_max, tol_series: 1e-8, ..NumericalParams::default() };
    let xs = vec![vec![0.0], vec![1.5]];
    let (density, report) = neumann_density(&model, &params, times, &xs, &grid).unwrap();
    assert!(report.series.unwrap().terms <= k_max);
    let h = grid.cell_volume();
    let mut out = Vec::new();
    for m in 0..times.len() {
        let t = density.mesh.times[m];
        for (i, x) in density.x_points.iter().enumerate() {
            let row = density.row(m, i);
            let mut worst: f64 = 0.0;
            for (j, y) in density.y_points.iter().enumerate() {
                let r = y[0] - x[0];
                if r.abs() <= 5.0 {
                    let exact = if density.averaged { cauchy_cell(t, r, h) } else { cauchy(t, r) };
                    worst = worst.max((row[j] - exact).abs() / exact);
                }
            }
            out.push(worst);
        }
    }
    out
}

#[test]
fn const_cauchy_short_time_with_four_terms() {
    for worst in cauchy_worst(4, &[0.1]) {
        assert!(worst < 0.02, "relative error {worst}");
    }
}

#[test]
fn const_cauchy_series_converges_to_closed_form() {
    // At t = 0.5 four terms leave a truncation error of several percent; eight
    // terms bring it well below 1%.
    let four = cauchy_worst(4, &[0.5]);
    let eight = cauchy_worst(8, &[0.5]);
    for (a, b) in four.iter().zip(&eight) {
        assert!(*b < 0.01 && b < a, "four terms {a}, eight terms {b}");
    }
}

#[test]
fn mass_is_conserved_for_builtins_without_perturbation() {
    let grid = Grid::parse("-64:64:256", 1).unwrap();
    let params = NumericalParams { k_max: 8, ..NumericalParams::default() };
    for name in ["const-cauchy", "const-alpha", "var-alpha-1d"] {
        let model = builtin(name).unwrap();
        let xs = vec![vec![-1.0], vec![0.0], vec![2.0]];
        let run = neumann_run(&model, &params, &[0.1, 0.5, 1.0], &xs, &grid).unwrap();
        let masses = row_masses(&run.density);
        for (m, row) in masses.iter().enumerate() {
            for mass in row {
                assert!((mass - 1.0).abs() < 2e-2, "{name}, t = {}: mass {mass}", run.density.mesh.times[m]);
            }
        }
    }
}
