//! Neumann series for translation-invariant models, one frequency at a time.
//!
//! With constant coefficients every kernel depends on y − x only, so the space
//! convolution is a product of transforms and the Volterra series is solved per
//! frequency; only the final densities and the norms are transformed back.

use num_complex::Complex64;
use rayon::prelude::*;

use super::convolution::{convolution_weights, fit_line, SpaceTimeField, TimeMesh};
use super::lattice::Lattice;
use super::neumann::{tail_bound, SeriesDiagnostics, DIVERGENCE_RUN};
use super::ParametrixError;
use crate::flow::compensated_drift;
use crate::frozen::{cut_exponent_atom, radial_window};
use crate::grid::Grid;
use crate::model::{dot, norm, ModelSpec, NumericalParams};
use crate::quad;

/// Exponents of a constant-coefficient model at one frequency.
pub(crate) struct ConstantSymbols<'a> {
    model: &'a ModelSpec,
    params: &'a NumericalParams,
    alpha: f64,
    lambda: f64,
    zeta: f64,
    atoms: Vec<(Vec<f64>, f64)>,
    nu: Vec<(Vec<f64>, f64)>,
    truncate: f64,
    drift: Vec<f64>,
}

impl<'a> ConstantSymbols<'a> {
    pub(crate) fn new(model: &'a ModelSpec, params: &'a NumericalParams) -> Result<Self, ParametrixError> {
        let origin = vec![0.0; model.dimension];
        let fr = model.frozen(&origin)?;
        Ok(ConstantSymbols {
            model,
            params,
            alpha: fr.alpha,
            lambda: fr.lambda,
            zeta: params.zeta(model, fr.alpha),
            atoms: fr.atoms.iter().filter(|a| a.weight != 0.0).map(|a| (a.dir.clone(), a.weight)).collect(),
            nu: model.nu_atoms(&origin)?,
            truncate: model.truncation().unwrap_or(f64::INFINITY),
            drift: model.drift_at(&origin)?,
        })
    }

    /// ψ^N(ξ): the full exponent with compensator at 1 (μ cut at the truncation level, plus ν atoms).
    pub(crate) fn full(&self, xi: &[f64]) -> Complex64 {
        let mut c = Complex64::new(0.0, 0.0);
        for (dir, w) in &self.atoms {
            c += radial_window(self.alpha, dot(xi, dir), 1.0, self.truncate) * (self.lambda * w);
        }
        for (u, m) in &self.nu {
            let ph = dot(xi, u);
            let comp = if norm(u) <= 1.0 { ph } else { 0.0 };
            c += Complex64::new(1.0 - ph.cos(), comp - ph.sin()) * *m;
        }
        c
    }

    /// ψ_t^{cut}(ξ).
    fn cut(&self, t: f64, xi: &[f64]) -> Complex64 {
        let (a, big_a) = (t.powf(1.0 / self.alpha), t.powf(self.zeta));
        let mut c = Complex64::new(0.0, 0.0);
        for (dir, w) in &self.atoms {
            c += radial_window(self.alpha, dot(xi, dir), a, big_a) * (self.lambda * w);
        }
        c
    }

    /// ∫_0^t ψ_r^{cut}(ξ) dr.
    fn integrated_cut(&self, t: f64, xi: &[f64]) -> Complex64 {
        let mut c = Complex64::new(0.0, 0.0);
        for (dir, w) in &self.atoms {
            c += cut_exponent_atom(self.alpha, self.zeta, t, dot(xi, dir)) * (self.lambda * w);
        }
        c
    }

    /// ∫_0^t b_s ds (the backward flow displacement y − κ_t(y)).
    fn drift_integral(&self, t: f64) -> Result<Vec<f64>, ParametrixError> {
        let d = self.model.dimension;
        if self.model.is_symmetric() && self.model.nu.is_none() {
            return Ok(self.drift.iter().map(|b| b * t).collect());
        }
        let origin = vec![0.0; d];
        let mut out = vec![0.0; d];
        for (k, o) in out.iter_mut().enumerate() {
            // s = t u², which removes the s^{1/α − 1} endpoint behaviour
            let mut err = None;
            let v = quad::integrate(
                |u| {
                    if u <= 0.0 {
                        return 0.0;
                    }
                    match compensated_drift(self.model, &origin, t * u * u) {
                        Ok(b) => b[k] * 2.0 * t * u,
                        Err(e) => {
                            err = Some(e);
                            0.0
                        }
                    }
                },
                0.0,
                1.0,
                1e-13,
                1e-11,
                2000,
            )?;
            if let Some(e) = err {
                return Err(e.into());
            }
            *o = v;
        }
        Ok(out)
    }

    /// f̂_t(ξ) and Φ̂_t(ξ) on the lattice.
    fn spectra(&self, lat: &Lattice, t: f64) -> Result<(Vec<Complex64>, Vec<Complex64>), ParametrixError> {
        let beta = self.drift_integral(t)?;
        let bt = compensated_drift(self.model, &vec![0.0; self.model.dimension], t)?;
        let d = self.model.dimension;
        let mut f = Vec::with_capacity(lat.total());
        let mut phi = Vec::with_capacity(lat.total());
        for l in 0..lat.total() {
            let xi = &lat.frequency(l)[..d];
            let fh = (Complex64::new(0.0, dot(xi, &beta)) - self.integrated_cut(t, xi)).exp();
            let bracket = -self.full(xi)
                + Complex64::new(0.0, dot(xi, &self.drift) - dot(xi, &bt))
                + self.cut(t, xi);
            f.push(fh);
            phi.push(fh * bracket);
        }
        let _ = self.params;
        Ok((f, phi))
    }
}

type Weights = Vec<(usize, usize, f64)>;

fn sparse_weights(mesh: &TimeMesh, tau: f64, ba: f64, bb: f64, nq: usize) -> Weights {
    let w = convolution_weights(mesh, tau, ba, bb, nq);
    let mut out = Vec::new();
    for (m, row) in w.iter().enumerate() {
        for (n, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out.push((m, n, v));
            }
        }
    }
    out
}

fn convolve(w: &Weights, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Vec<Complex64> {
    let len = b[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for &(m, n, v) in w {
        let (am, bn) = (&a[m], &b[n]);
        for l in 0..len {
            out[l] += am[l] * bn[l] * v;
        }
    }
    out
}

/// sup over x of Σ_y |k(y − x)| Δ for a translation-invariant kernel = lattice L¹ norm.
fn l1(lat: &Lattice, spec: &[Complex64]) -> f64 {
    let mut buf = spec.to_vec();
    lat.invert(&mut buf).iter().map(|v| v.abs()).sum::<f64>() * lat.dx.powi(lat.dim as i32)
}

pub(crate) struct FourierRun {
    pub density: SpaceTimeField,
    pub p0: SpaceTimeField,
    pub diagnostics: SeriesDiagnostics,
    /// Lattice values of Φ_t(w) at the requested times (w = y − x on the centred lattice).
    /// Only the term-by-term Φ cross-check reads these.
    #[cfg_attr(not(test), allow(dead_code))]
    pub phi_lattice: Vec<Vec<f64>>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub lattice: Lattice,
}

/// Time-mesh refinement factor of the per-frequency solver (it is cheap per node).
pub(crate) const FOURIER_MESH_FACTOR: usize = 4;

pub(crate) fn fourier_series(
    model: &ModelSpec,
    params: &NumericalParams,
    t_list: &[f64],
    grid: &Grid,
    rows: &[usize],
) -> Result<FourierRun, ParametrixError> {
    let d = grid.dim();
    let ax = grid.axes[0];
    if grid.axes.iter().any(|a| a.n != ax.n || (a.step() - ax.step()).abs() > 1e-12 * ax.step()) {
        return Err(ParametrixError::Mesh("translation-invariant path needs equal axes".into()));
    }
    let lat = Lattice::new(d, 2 * ax.n, ax.step());
    let sym = ConstantSymbols::new(model, params)?;
    let horizon = t_list.iter().cloned().fold(0.0, f64::max);
    let mesh = TimeMesh::graded(horizon, FOURIER_MESH_FACTOR * params.time_nodes, 2.0);
    let eval_time = |m: usize| if m == 0 { mesh.times[1] * 1e-3 } else { mesh.times[m] };
    let node_spectra: Vec<(Vec<Complex64>, Vec<Complex64>)> =
        (0..mesh.len()).into_par_iter().map(|m| sym.spectra(&lat, eval_time(m))).collect::<Result<_, _>>()?;
    let (f_nodes, phi_nodes): (Vec<_>, Vec<_>) = node_spectra.into_iter().unzip();
    let target_spectra: Vec<(Vec<Complex64>, Vec<Complex64>)> =
        t_list.par_iter().map(|&t| sym.spectra(&lat, t)).collect::<Result<_, _>>()?;

    // Φ norms on the mesh and the fitted singularity t^{-1+ε_Φ}
    let phi_norms: Vec<(f64, f64)> = (1..mesh.len()).into_par_iter().map(|m| (mesh.times[m], l1(&lat, &phi_nodes[m]))).collect();
    let (phi_fit, rate) = fit_phi(&phi_norms, horizon);
    let nq = params.time_quad;

    // norm chain R_{k+1} = R_k ⋆ Φ on the mesh, evaluated at the requested times
    let mut term_norms: Vec<Vec<f64>> = vec![target_spectra.iter().map(|(_, p)| l1(&lat, p)).collect()];
    let mut chain = phi_nodes.clone();
    let mut chain_rate = rate;
    let mut terms = 1;
    let mut increases = 0;
    while terms < params.k_max && term_norms.last().map(|v| max(v)).unwrap_or(0.0) >= params.tol_series {
        let mesh_w: Vec<Weights> =
            mesh.times.par_iter().map(|&tau| sparse_weights(&mesh, tau, chain_rate, rate, nq)).collect();
        let next: Vec<Vec<Complex64>> = mesh_w.par_iter().map(|w| convolve(w, &chain, &phi_nodes)).collect();
        let at_targets: Vec<f64> = t_list
            .par_iter()
            .map(|&t| l1(&lat, &convolve(&sparse_weights(&mesh, t, chain_rate, rate, nq), &chain, &phi_nodes)))
            .collect();
        chain = next;
        chain_rate = (chain_rate + rate - 1.0).max(0.0);
        let prev = max(term_norms.last().unwrap_or(&vec![0.0]));
        increases = if max(&at_targets) > prev { increases + 1 } else { 0 };
        term_norms.push(at_targets);
        terms += 1;
        if increases >= DIVERGENCE_RUN {
            return Err(ParametrixError::Divergence { k: terms, norm: max(term_norms.last().unwrap_or(&vec![])) });
        }
    }

    // Horner: Q_1 = f, Q_{j+1} = f + Q_j ⋆ Φ; the density uses Q_{terms+1}
    let mut q = f_nodes.clone();
    for _ in 1..terms {
        let mesh_w: Vec<Weights> = mesh.times.par_iter().map(|&tau| sparse_weights(&mesh, tau, 0.0, rate, nq)).collect();
        q = mesh_w
            .par_iter()
            .zip(&f_nodes)
            .map(|(w, f)| convolve(w, &q, &phi_nodes).iter().zip(f).map(|(a, b)| a + b).collect())
            .collect();
    }
    let finals: Vec<Vec<Complex64>> = t_list
        .par_iter()
        .zip(&target_spectra)
        .map(|(&t, (f, _))| {
            let w = sparse_weights(&mesh, t, 0.0, rate, nq);
            convolve(&w, &q, &phi_nodes).iter().zip(f).map(|(a, b)| a + b).collect()
        })
        .collect();

    let out_mesh = TimeMesh::from_times(t_list.to_vec(), 2.0)?;
    let x_points: Vec<Vec<f64>> = rows.iter().map(|&r| grid.point(r)).collect();
    let mut density = SpaceTimeField::zeros(out_mesh.clone(), x_points.clone(), grid.points(), grid.cell_volume(), "parametrix density (fourier)");
    density.y_grid = Some(grid.clone());
    let mut p0 = SpaceTimeField::zeros(out_mesh, x_points, grid.points(), grid.cell_volume(), "zero-order kernel");
    p0.y_grid = Some(grid.clone());
    let mut phi_lattice = Vec::new();
    for (m, (spec, (f, phi))) in finals.iter().zip(&target_spectra).enumerate() {
        let dens = lat.invert(&mut spec.clone());
        let zero = lat.invert(&mut f.clone());
        phi_lattice.push(lat.invert(&mut phi.clone()));
        scatter_rows(grid, &lat, rows, &dens, density.slice_mut(m));
        scatter_rows(grid, &lat, rows, &zero, p0.slice_mut(m));
    }
    let tail = t_list.iter().map(|&t| tail_bound(phi_fit, terms + 1, t)).collect();
    let diagnostics = SeriesDiagnostics { phi_norms, phi_fit, phi_rate: rate, term_norms, terms, tail_bound: tail };
    Ok(FourierRun { density, p0, diagnostics, phi_lattice, lattice: lat })
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

/// Fitted (C, ε_Φ) from ‖Φ_t‖ ≈ C t^{−1+ε_Φ} on [0.02, 0.5]·T, and the regularization rate β = 1 − ε_Φ ∈ [0, 1).
pub(crate) fn fit_phi(norms: &[(f64, f64)], horizon: f64) -> (Option<(f64, f64)>, f64) {
    let pts: Vec<(f64, f64)> = norms
        .iter()
        .filter(|(t, n)| *t >= 0.02 * horizon && *t <= 0.5 * horizon && *n > 0.0)
        .map(|(t, n)| (t.ln(), n.ln()))
        .collect();
    match fit_line(&pts) {
        Some(f) => {
            let eps = 1.0 + f.slope;
            (Some((f.intercept.exp(), eps)), (-f.slope).clamp(0.0, 0.95))
        }
        None => (None, 0.0),
    }
}

/// Copies p(x_r, y_j) = k(y_j − x_r) from lattice values into row-major rows × grid.
pub(crate) fn scatter_rows(grid: &Grid, lat: &Lattice, rows: &[usize], lattice_values: &[f64], out: &mut [f64]) {
    let n = grid.len();
    for (i, &r) in rows.iter().enumerate() {
        let rc = grid.unflatten(r);
        for j in 0..n {
            let jc = grid.unflatten(j);
            let off: Vec<isize> = jc.iter().zip(&rc).map(|(a, b)| *a as isize - *b as isize).collect();
            out[i * n + j] = lattice_values[lat.index(&off)];
        }
    }
}
