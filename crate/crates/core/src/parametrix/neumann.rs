//! Neumann series p = p⁰ + p⁰⋆Σ_k Φ^{⋆k}, residual norms and the principal term.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::bulk::assemble;
use super::convolution::{apply_weights, convolution_weights, fit_line, LineFit, SpaceTimeField, TimeMesh};
use super::fourier::{fit_phi, fourier_series};
use super::lattice::{sinc_factor, Lattice};
use super::ParametrixError;
use crate::flow::{solve_flow, Direction};
use crate::grid::Grid;
use crate::model::{dot, radial_exponent_closed, ModelSpec, NumericalParams};

/// Consecutive increases of ‖Φ^{⋆k}‖ treated as divergence.
pub const DIVERGENCE_RUN: usize = 3;

/// Rows used to measure ‖Φ^{⋆k}‖_{∞,1} on large grids (every n/NORM_ROWS-th node).
pub const NORM_ROWS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    /// (t, sup_x Σ_y |Φ_t(x,y)| Δ) on the time mesh.
    pub phi_norms: Vec<(f64, f64)>,
    /// Fitted (C, ε_Φ) in ‖Φ_t‖ ≤ C t^{−1+ε_Φ}.
    pub phi_fit: Option<(f64, f64)>,
    /// Regularization exponent used for Φ in the time quadrature.
    pub phi_rate: f64,
    /// ‖Φ^{⋆k}_t‖_{∞,1} for k = 1.. at the requested times.
    pub term_norms: Vec<Vec<f64>>,
    /// Number of Φ-powers summed.
    pub terms: usize,
    /// Bound on the first omitted term at each requested time.
    pub tail_bound: Vec<f64>,
}

/// t^{−1+kε}(CΓ(ε))^k / Γ(kε).
pub fn tail_bound(fit: Option<(f64, f64)>, k: usize, t: f64) -> f64 {
    match fit {
        Some((c, eps)) if eps > 0.0 => {
            let kf = k as f64;
            t.powf(-1.0 + kf * eps) * (c * gamma(eps)).powf(kf) / gamma(kf * eps)
        }
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub times: Vec<f64>,
    /// max over x-rows of the y-trapezoid of |R_t|.
    pub norm_inf1: Vec<f64>,
    pub sup: Vec<f64>,
    /// Slope of log ‖R_t‖_{∞,1} against log t (the measured ε_R).
    pub eps_r: Option<LineFit>,
    /// Slope of log(sup|R_t| t^{d/α_min}) against log t.
    pub sup_fit: Option<LineFit>,
    pub alpha_min: f64,
    pub grid: Option<Grid>,
    pub rows: usize,
    pub series: Option<SeriesDiagnostics>,
}

impl ResidualReport {
    /// Two-standard-error band around the fitted ε_R.
    pub fn eps_r_band(&self) -> Option<(f64, f64)> {
        self.eps_r.map(|f| (f.slope - 2.0 * f.slope_stderr, f.slope + 2.0 * f.slope_stderr))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

/// Everything a Neumann run produces.
#[derive(Debug, Clone)]
pub struct NeumannRun {
    pub density: SpaceTimeField,
    pub p0: SpaceTimeField,
    pub diagnostics: SeriesDiagnostics,
}

fn check_inputs(model: &ModelSpec, params: &NumericalParams, t_list: &[f64], grid: &Grid) -> Result<(), ParametrixError> {
    model.check()?;
    params.check(model)?;
    if grid.dim() != model.dimension {
        return Err(ParametrixError::Mesh("grid dimension does not match the model".into()));
    }
    if model.dimension > 2 {
        return Err(ParametrixError::Mesh("only d = 1, 2 are supported".into()));
    }
    if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0 && t <= params.horizon.min(1.0) + 1e-12)) {
        return Err(ParametrixError::Mesh("times must lie in (0, min(T, 1)]".into()));
    }
    if t_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ParametrixError::Mesh("times must be increasing".into()));
    }
    Ok(())
}

/// Runs the series and returns density, p⁰ and diagnostics; rows are snapped to grid nodes.
pub fn neumann_run(
    model: &ModelSpec,
    params: &NumericalParams,
    t_list: &[f64],
    x_points: &[Vec<f64>],
    grid: &Grid,
) -> Result<NeumannRun, ParametrixError> {
    check_inputs(model, params, t_list, grid)?;
    let rows: Vec<usize> = x_points.iter().map(|x| grid.nearest(x)).collect();
    if model.is_translation_invariant() {
        let r = fourier_series(model, params, t_list, grid, &rows)?;
        return Ok(NeumannRun { density: r.density, p0: r.p0, diagnostics: r.diagnostics });
    }
    real_space_series(model, params, t_list, grid, &rows)
}

/// p_t(x,·) for the requested times and rows, with its residual report.
pub fn neumann_density(
    model: &ModelSpec,
    params: &NumericalParams,
    t_list: &[f64],
    x_points: &[Vec<f64>],
    grid: &Grid,
) -> Result<(SpaceTimeField, ResidualReport), ParametrixError> {
    let run = neumann_run(model, params, t_list, x_points, grid)?;
    let mut report = residual_norms(&run.density, model, params)?;
    report.series = Some(run.diagnostics);
    Ok((run.density, report))
}

fn norm_rows(grid: &Grid) -> Vec<usize> {
    let n = grid.len();
    if grid.dim() == 1 {
        let step = (n / NORM_ROWS).max(1);
        (0..n).step_by(step).collect()
    } else {
        let m = grid.axes[0].n;
        let step = (m / 8).max(1);
        let mut out = Vec::new();
        for j in (0..m).step_by(step) {
            for i in (0..m).step_by(step) {
                out.push(grid.flatten(&[i, j]));
            }
        }
        out
    }
}

fn rows_of(mat: &[f64], n: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        out.extend_from_slice(&mat[r * n..(r + 1) * n]);
    }
    out
}

fn sup_row_l1(block: &[f64], n: usize, dz: f64) -> f64 {
    block.chunks(n).map(|r| r.iter().map(|v| v.abs()).sum::<f64>() * dz).fold(0.0, f64::max)
}

fn real_space_series(
    model: &ModelSpec,
    params: &NumericalParams,
    t_list: &[f64],
    grid: &Grid,
    rows: &[usize],
) -> Result<NeumannRun, ParametrixError> {
    let horizon = t_list.iter().cloned().fold(0.0, f64::max);
    let mesh = TimeMesh::graded(horizon, params.time_nodes, 2.0);
    let nrows = norm_rows(grid);
    let mut all_rows = rows.to_vec();
    all_rows.extend_from_slice(&nrows);
    let bulk = assemble(model, params, grid, &mesh, &all_rows, t_list, true)?;
    let n = grid.len();
    let dz = grid.cell_volume();
    let nq = params.time_quad;

    let phi_norms: Vec<(f64, f64)> =
        (1..mesh.len()).into_par_iter().map(|m| (mesh.times[m], sup_row_l1(&bulk.phi[m], n, dz))).collect();
    let (phi_fit, rate) = fit_phi(&phi_norms, horizon);
    let phi_sl: Vec<&[f64]> = bulk.phi.iter().map(|v| v.as_slice()).collect();

    // norm chain on the sampled rows
    let first: Vec<f64> = t_list
        .iter()
        .map(|&t| {
            // Φ at the requested time, interpolated on the mesh in the graded variable
            let mut acc = vec![0.0; nrows.len() * n];
            for (m, w) in mesh.stencil(t) {
                for (a, b) in acc.iter_mut().zip(rows_of(&bulk.phi[m], n, &nrows)) {
                    *a += w * b;
                }
            }
            sup_row_l1(&acc, n, dz)
        })
        .collect();
    let mut term_norms = vec![first];
    let mut chain: Vec<Vec<f64>> = bulk.phi.iter().map(|m| rows_of(m, n, &nrows)).collect();
    let mut chain_rate = rate;
    let mut terms = 1;
    let mut increases = 0;
    let mx = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    while terms < params.k_max && mx(term_norms.last().map(|v| v.as_slice()).unwrap_or(&[])) >= params.tol_series {
        let r = nrows.len();
        let chain_sl: Vec<&[f64]> = chain.iter().map(|v| v.as_slice()).collect();
        let next: Vec<Vec<f64>> = mesh
            .times
            .par_iter()
            .map(|&tau| apply_weights(&convolution_weights(&mesh, tau, chain_rate, rate, nq), &chain_sl, &phi_sl, r, n, n, dz))
            .collect();
        let at_targets: Vec<f64> = t_list
            .par_iter()
            .map(|&t| {
                let w = convolution_weights(&mesh, t, chain_rate, rate, nq);
                sup_row_l1(&apply_weights(&w, &chain_sl, &phi_sl, r, n, n, dz), n, dz)
            })
            .collect();
        chain = next;
        chain_rate = (chain_rate + rate - 1.0).max(0.0);
        let prev = mx(term_norms.last().map(|v| v.as_slice()).unwrap_or(&[]));
        increases = if mx(&at_targets) > prev { increases + 1 } else { 0 };
        term_norms.push(at_targets);
        terms += 1;
        if increases >= DIVERGENCE_RUN {
            return Err(ParametrixError::Divergence { k: terms, norm: mx(term_norms.last().map(|v| v.as_slice()).unwrap_or(&[])) });
        }
    }

    // Horner on the requested rows
    let r = rows.len();
    let f_nodes: Vec<Vec<f64>> = bulk.p0_nodes.iter().map(|m| m[..r * n].to_vec()).collect();
    let mut q = f_nodes.clone();
    for _ in 1..terms {
        let q_sl: Vec<&[f64]> = q.iter().map(|v| v.as_slice()).collect();
        q = mesh
            .times
            .par_iter()
            .zip(&f_nodes)
            .map(|(&tau, f)| {
                let w = convolution_weights(&mesh, tau, 0.0, rate, nq);
                let mut v = apply_weights(&w, &q_sl, &phi_sl, r, n, n, dz);
                v.iter_mut().zip(f).for_each(|(a, b)| *a += b);
                v
            })
            .collect();
    }
    let q_sl: Vec<&[f64]> = q.iter().map(|v| v.as_slice()).collect();
    let out_mesh = TimeMesh::from_times(t_list.to_vec(), 2.0)?;
    let x_points: Vec<Vec<f64>> = rows.iter().map(|&i| grid.point(i)).collect();
    let mut density = SpaceTimeField::zeros(out_mesh.clone(), x_points.clone(), grid.points(), dz, "parametrix density (cell averages)");
    density.y_grid = Some(grid.clone());
    density.averaged = true;
    let mut p0 = SpaceTimeField::zeros(out_mesh, x_points, grid.points(), dz, "zero-order kernel (cell averages)");
    p0.y_grid = Some(grid.clone());
    p0.averaged = true;
    for (m, &t) in t_list.iter().enumerate() {
        let w = convolution_weights(&mesh, t, 0.0, rate, nq);
        let mut v = apply_weights(&w, &q_sl, &phi_sl, r, n, n, dz);
        let f = &bulk.p0_targets[m][..r * n];
        v.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        density.slice_mut(m).copy_from_slice(&v);
        p0.slice_mut(m).copy_from_slice(f);
    }
    let tail = t_list.iter().map(|&t| tail_bound(phi_fit, terms + 1, t)).collect();
    Ok(NeumannRun {
        density,
        p0,
        diagnostics: SeriesDiagnostics { phi_norms, phi_fit, phi_rate: rate, term_norms, terms, tail_bound: tail },
    })
}

/// t^{−d/α(x)} g^x((y − χ_t(x))/t^{1/α(x)}) on the field's rows and y-grid; cell-averaged in y
/// when the field holds cell averages.
pub fn principal_term(model: &ModelSpec, params: &NumericalParams, field: &SpaceTimeField) -> Result<SpaceTimeField, ParametrixError> {
    let grid = field
        .y_grid
        .clone()
        .ok_or_else(|| ParametrixError::Mesh("principal term needs a uniform y-grid".into()))?;
    let d = grid.dim();
    let ax = grid.axes[0];
    let lat = Lattice::new(d, 2 * ax.n, ax.step());
    let lo: Vec<f64> = grid.axes.iter().map(|a| a.lo).collect();
    let dx = ax.step();
    let horizon = field.mesh.times.iter().cloned().fold(0.0, f64::max);
    let mut out = field.clone();
    out.provenance = "principal term".into();
    let n = grid.len();
    let blocks: Vec<Vec<Vec<f64>>> = field
        .x_points
        .par_iter()
        .map(|x| -> Result<Vec<Vec<f64>>, ParametrixError> {
            let fr = model.frozen(x)?;
            let ups = fr.intrinsic_drift();
            let flow = solve_flow(model, params, x, horizon, Direction::Forward)?;
            let mut per_t = Vec::new();
            for &t in &field.mesh.times {
                let chi = flow.at(t);
                let scale = t.powf(1.0 / fr.alpha);
                let mut cidx = vec![0isize; d];
                let mut delta = vec![0.0; d];
                for k in 0..d {
                    let p = (chi[k] - lo[k]) / dx;
                    let c = p.floor();
                    cidx[k] = c as isize;
                    delta[k] = -(p - c) * dx;
                }
                let mut spec: Vec<Complex64> = (0..lat.total())
                    .map(|l| {
                        let xi = &lat.frequency(l)[..d];
                        let s: Vec<f64> = xi.iter().map(|v| v * scale).collect();
                        let mut e = Complex64::new(0.0, -dot(&s, &ups));
                        for a in &fr.atoms {
                            if a.weight != 0.0 {
                                e += radial_exponent_closed(fr.alpha, dot(&s, &a.dir), 1.0) * (fr.lambda * a.weight);
                            }
                        }
                        let mut v = (-e).exp();
                        if field.averaged {
                            v *= sinc_factor(xi, dx);
                        }
                        v
                    })
                    .collect();
                lat.shift(&mut spec, &delta);
                let vals = lat.invert(&mut spec);
                let row: Vec<f64> = (0..n)
                    .map(|j| {
                        let c = grid.unflatten(j);
                        let off: Vec<isize> = (0..d).map(|k| c[k] as isize - cidx[k]).collect();
                        vals[lat.index(&off)]
                    })
                    .collect();
                per_t.push(row);
            }
            Ok(per_t)
        })
        .collect::<Result<_, _>>()?;
    let ny = field.ny();
    for (i, per_t) in blocks.into_iter().enumerate() {
        for (m, row) in per_t.into_iter().enumerate() {
            out.slice_mut(m)[i * ny..(i + 1) * ny].copy_from_slice(&row);
        }
    }
    Ok(out)
}

/// Trapezoid weights of a tensor grid.
fn trapezoid_weights(grid: &Grid) -> Vec<f64> {
    let dv = grid.cell_volume();
    (0..grid.len())
        .map(|j| {
            grid.unflatten(j)
                .iter()
                .zip(&grid.axes)
                .map(|(&i, a)| if i == 0 || i == a.n - 1 { 0.5 } else { 1.0 })
                .product::<f64>()
                * dv
        })
        .collect()
}

/// Norms of R_t = p_t − principal term for every stored time.
pub fn residual_norms(density: &SpaceTimeField, model: &ModelSpec, params: &NumericalParams) -> Result<ResidualReport, ParametrixError> {
    let principal = principal_term(model, params, density)?;
    residual_against(density, &principal, model)
}

/// Norms of density − principal on shared grids.
pub fn residual_against(density: &SpaceTimeField, principal: &SpaceTimeField, model: &ModelSpec) -> Result<ResidualReport, ParametrixError> {
    if density.values.len() != principal.values.len() {
        return Err(ParametrixError::Mesh("density and principal term differ in shape".into()));
    }
    let weights = match &density.y_grid {
        Some(g) => trapezoid_weights(g),
        None => vec![density.cell_volume; density.ny()],
    };
    let ny = density.ny();
    let mut norm_inf1 = Vec::new();
    let mut sup = Vec::new();
    for m in 0..density.mesh.len() {
        let (a, b) = (density.slice(m), principal.slice(m));
        let mut best: f64 = 0.0;
        let mut s: f64 = 0.0;
        for i in 0..density.nx() {
            let mut acc = 0.0;
            for j in 0..ny {
                let r = (a[i * ny + j] - b[i * ny + j]).abs();
                acc += r * weights[j];
                s = s.max(r);
            }
            best = best.max(acc);
        }
        norm_inf1.push(best);
        sup.push(s);
    }
    let times = density.mesh.times.clone();
    let alpha_min = model.bounds.alpha_min;
    let d = model.dimension as f64;
    let pts = |vals: &[f64], power: f64| -> Vec<(f64, f64)> {
        times.iter().zip(vals).filter(|(_, v)| **v > 0.0).map(|(t, v)| (t.ln(), v.ln() + power * t.ln())).collect()
    };
    Ok(ResidualReport {
        eps_r: fit_line(&pts(&norm_inf1, 0.0)),
        sup_fit: fit_line(&pts(&sup, d / alpha_min)),
        times,
        norm_inf1,
        sup,
        alpha_min,
        grid: density.y_grid.clone(),
        rows: density.nx(),
        series: None,
    })
}

/// Grid mass Σ_y p_t(x,y) Δ per (t, row).
pub fn row_masses(field: &SpaceTimeField) -> Vec<Vec<f64>> {
    (0..field.mesh.len())
        .map(|m| (0..field.nx()).map(|i| field.row(m, i).iter().sum::<f64>() * field.cell_volume).collect())
        .collect()
}

/// Φ_t(x,·) sup-L¹ norms on the mesh for a model and grid, without summing the series.
pub fn phi_norms(model: &ModelSpec, params: &NumericalParams, grid: &Grid, horizon: f64) -> Result<SeriesDiagnostics, ParametrixError> {
    let run = if model.is_translation_invariant() {
        let r = fourier_series(model, params, &[horizon], grid, &[grid.nearest(&vec![0.0; grid.dim()])])?;
        r.diagnostics
    } else {
        let mesh = TimeMesh::graded(horizon, params.time_nodes, 2.0);
        let bulk = assemble(model, params, grid, &mesh, &[], &[], true)?;
        let n = grid.len();
        let dz = grid.cell_volume();
        let phi_norms: Vec<(f64, f64)> = (1..mesh.len()).map(|m| (mesh.times[m], sup_row_l1(&bulk.phi[m], n, dz))).collect();
        let (phi_fit, rate) = fit_phi(&phi_norms, horizon);
        SeriesDiagnostics { phi_norms, phi_fit, phi_rate: rate, term_norms: Vec::new(), terms: 0, tail_bound: Vec::new() }
    };
    Ok(run)
}
