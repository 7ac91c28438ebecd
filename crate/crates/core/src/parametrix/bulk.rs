//! Φ on a full grid for state-dependent models.
//!
//! For a fixed y and t, p⁰_t(x,y) = P(κ_t(y) − x) with P the frozen cut density, so
//! (L_x − ∂_t) p⁰ is an inverse transform in w = κ − x of
//! φ(ξ)[ψ_t^{cut}(ξ) − iξ·B_t(κ) − ψ^{N(x)}(ξ) + iξ·b(x)] except that ψ^{N(x)} and b(x)
//! depend on x. The x-dependence enters through α(x), the rotation angle of the atoms,
//! λ(x) and b(x): the transform is taken at a few α- and angle-nodes and interpolated,
//! λ and b multiply afterwards, and ν-atoms are added in real space.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::convolution::TimeMesh;
use super::lattice::{sinc_factor, Lattice};
use super::ParametrixError;
use crate::flow::{mollified_drift, solve_flow, Direction};
use crate::frozen::{cubic_weights, cut_exponent_atom, radial_window};
use crate::grid::Grid;
use crate::model::{dot, norm, ModelSpec, NumericalParams};

/// Chebyshev nodes used when α varies over the grid.
pub(crate) const ALPHA_NODES: usize = 10;
/// Angle nodes per rotation period.
pub(crate) const ANGLE_NODES: usize = 24;

/// Lagrange interpolation in α on Chebyshev nodes.
#[derive(Debug, Clone)]
pub(crate) struct AlphaNodes {
    pub nodes: Vec<f64>,
}

impl AlphaNodes {
    pub fn new(lo: f64, hi: f64) -> AlphaNodes {
        if hi - lo < 1e-12 {
            return AlphaNodes { nodes: vec![lo] };
        }
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 + 1e-9));
        let n = ALPHA_NODES;
        let nodes = (0..n).map(|k| c + r * (PI * (k as f64 + 0.5) / n as f64).cos()).collect();
        AlphaNodes { nodes }
    }

    pub fn weights(&self, a: f64) -> Vec<f64> {
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let mut w = 1.0;
                for j in 0..n {
                    if j != i {
                        w *= (a - self.nodes[j]) / (self.nodes[i] - self.nodes[j]);
                    }
                }
                w
            })
            .collect()
    }
}

/// Periodic cubic interpolation in the rotation angle.
#[derive(Debug, Clone)]
pub(crate) struct AngleNodes {
    pub period: f64,
    pub count: usize,
}

impl AngleNodes {
    pub fn angle(&self, k: usize) -> f64 {
        self.period * k as f64 / self.count as f64
    }

    pub fn weights(&self, theta: f64) -> Vec<(usize, f64)> {
        if self.count == 1 {
            return vec![(0, 1.0)];
        }
        let h = self.period / self.count as f64;
        let p = theta.rem_euclid(self.period) / h;
        let i = p.floor();
        let w = cubic_weights(p - i);
        let n = self.count as isize;
        (0..4).map(|k| (((i as isize) - 1 + k as isize).rem_euclid(n) as usize, w[k])).collect()
    }
}

/// Smallest of π/2, π, 2π under which the base atoms are invariant.
fn rotation_period(model: &ModelSpec) -> f64 {
    let atoms = &model.sigma.atoms;
    for period in [PI / 2.0, PI] {
        let (s, c) = period.sin_cos();
        let ok = atoms.iter().all(|a| {
            let r = [c * a.dir[0] - s * a.dir[1], s * a.dir[0] + c * a.dir[1]];
            atoms.iter().any(|b| (b.weight - a.weight).abs() < 1e-12 && (b.dir[0] - r[0]).abs() < 1e-9 && (b.dir[1] - r[1]).abs() < 1e-9)
        });
        if ok {
            return period;
        }
    }
    2.0 * PI
}

/// Per-atom functions of s = ξ·ℓ tabulated with step Δξ, extended by C(−s) = conj C(s).
struct AtomTable {
    h: f64,
    values: Vec<Complex64>,
}

impl AtomTable {
    fn build(h: f64, len: usize, f: impl Fn(f64) -> Complex64) -> AtomTable {
        AtomTable { h, values: (0..len).map(|k| f(k as f64 * h)).collect() }
    }

    fn at(&self, s: f64) -> Complex64 {
        let (sa, neg) = if s < 0.0 { (-s, true) } else { (s, false) };
        let p = sa / self.h;
        let i = p.floor() as usize;
        let f = p - i as f64;
        let v = if f < 1e-12 {
            self.values[i.min(self.values.len() - 1)]
        } else {
            let w = cubic_weights(f);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let j = i as isize - 1 + k as isize;
                let val = if j < 0 { self.values[(-j) as usize].conj() } else { self.values[(j as usize).min(self.values.len() - 1)] };
                acc += val * *wk;
            }
            acc
        };
        if neg {
            v.conj()
        } else {
            v
        }
    }
}

struct TimeTables {
    cut: Vec<AtomTable>,
    psi: Vec<AtomTable>,
}

/// Coefficients frozen at one grid node.
struct NodeCoefficients {
    lambda: f64,
    drift: Vec<f64>,
    alpha_w: Vec<f64>,
    angle_w: Vec<(usize, f64)>,
    nu: Vec<(Vec<f64>, f64)>,
}

pub(crate) struct BulkPhi {
    /// Φ at each mesh node, n × n with x as the row index.
    pub phi: Vec<Vec<f64>>,
    /// p⁰ rows at each mesh node.
    pub p0_nodes: Vec<Vec<f64>>,
    /// p⁰ rows at the requested times.
    pub p0_targets: Vec<Vec<f64>>,
}

/// Time used for the mesh node at zero (the kernels are evaluated just after it).
pub(crate) fn node_time(mesh: &TimeMesh, m: usize) -> f64 {
    if m == 0 {
        mesh.times[1] * 1e-3
    } else {
        mesh.times[m]
    }
}

pub(crate) fn assemble(
    model: &ModelSpec,
    params: &NumericalParams,
    grid: &Grid,
    mesh: &TimeMesh,
    rows: &[usize],
    targets: &[f64],
    cell: bool,
) -> Result<BulkPhi, ParametrixError> {
    let d = grid.dim();
    let ax = grid.axes[0];
    if grid.axes.iter().any(|a| a.n != ax.n || (a.step() - ax.step()).abs() > 1e-12 * ax.step()) {
        return Err(ParametrixError::Mesh("the bulk assembly needs equal axes".into()));
    }
    let n = grid.len();
    let dx = ax.step();
    let lat = Lattice::new(d, 2 * ax.n, dx);
    let nl = lat.total();
    let points = grid.points();

    // coefficient nodes
    let mut alphas = Vec::with_capacity(n);
    for p in &points {
        alphas.push(model.alpha_at(p)?);
    }
    let (amin, amax) = alphas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let alpha_nodes = AlphaNodes::new(amin, amax);
    let angle_nodes = match &model.sigma.rotation {
        Some(_) => AngleNodes { period: rotation_period(model), count: ANGLE_NODES },
        None => AngleNodes { period: 2.0 * PI, count: 1 },
    };
    let coeffs: Vec<NodeCoefficients> = points
        .iter()
        .zip(&alphas)
        .map(|(p, &a)| {
            Ok(NodeCoefficients {
                lambda: model.lambda_at(p)?,
                drift: model.drift_at(p)?,
                alpha_w: alpha_nodes.weights(a),
                angle_w: angle_nodes.weights(model.sigma.rotation.as_ref().map(|r| r.angle(p)).unwrap_or(0.0)),
                nu: model.nu_atoms(p)?,
            })
        })
        .collect::<Result<_, ParametrixError>>()?;
    let has_drift = coeffs.iter().any(|c| c.drift.iter().any(|v| *v != 0.0));
    let has_nu = coeffs.iter().any(|c| !c.nu.is_empty());
    let need_grad = has_drift || has_nu;
    let truncate = model.truncation().unwrap_or(f64::INFINITY);

    // ψ^{N} at the coefficient nodes (λ = 1), on the lattice
    let base_atoms = &model.sigma.atoms;
    let node_symbols: Vec<Vec<Complex64>> = (0..alpha_nodes.nodes.len() * angle_nodes.count)
        .into_par_iter()
        .map(|idx| {
            let (ia, ik) = (idx / angle_nodes.count, idx % angle_nodes.count);
            let a = alpha_nodes.nodes[ia];
            let (s, c) = angle_nodes.angle(ik).sin_cos();
            let dirs: Vec<(Vec<f64>, f64)> = base_atoms
                .iter()
                .filter(|at| at.weight != 0.0)
                .map(|at| {
                    let dir = if d == 2 { vec![c * at.dir[0] - s * at.dir[1], s * at.dir[0] + c * at.dir[1]] } else { at.dir.clone() };
                    (dir, at.weight)
                })
                .collect();
            (0..nl)
                .map(|l| {
                    let xi = &lat.frequency(l)[..d];
                    dirs.iter().map(|(dir, w)| radial_window(a, dot(xi, dir), 1.0, truncate) * *w).sum()
                })
                .collect()
        })
        .collect();

    // per-time tables of the cut exponent and ψ^{cut} at the α nodes
    let times: Vec<f64> = (0..mesh.len()).map(|m| node_time(mesh, m)).chain(targets.iter().cloned()).collect();
    let s_max = (d as f64).sqrt() * (lat.nodes / 2) as f64 * lat.dxi;
    let tab_len = (s_max / lat.dxi).ceil() as usize + 4;
    let tables: Vec<TimeTables> = times
        .par_iter()
        .map(|&t| {
            let mut cut = Vec::new();
            let mut psi = Vec::new();
            for &a in &alpha_nodes.nodes {
                let zeta = params.zeta(model, a);
                cut.push(AtomTable::build(lat.dxi, tab_len, |s| cut_exponent_atom(a, zeta, t, s)));
                psi.push(AtomTable::build(lat.dxi, tab_len, |s| radial_window(a, s, t.powf(1.0 / a), t.powf(zeta))));
            }
            TimeTables { cut, psi }
        })
        .collect();

    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let lo: Vec<f64> = grid.axes.iter().map(|a| a.lo).collect();
    let row_coords: Vec<Vec<usize>> = rows.iter().map(|&r| grid.unflatten(r)).collect();
    let node_coords: Vec<Vec<usize>> = (0..n).map(|j| grid.unflatten(j)).collect();
    let n_nodes = node_symbols.len();

    type Column = (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let columns: Vec<Column> = (0..n)
        .into_par_iter()
        .map(|yi| -> Result<Column, ParametrixError> {
            let y = &points[yi];
            let flow = if model.drift.iter().all(|e| e.is_constant()) && model.drift_at(y)?.iter().all(|v| *v == 0.0) && model.is_symmetric() {
                None
            } else {
                Some(solve_flow(model, params, y, horizon, Direction::Backward)?)
            };
            let ya = model.alpha_at(y)?;
            let yl = model.lambda_at(y)?;
            let yw = alpha_nodes.weights(ya);
            let yatoms: Vec<(Vec<f64>, f64)> =
                model.sigma.at(y).into_iter().filter(|a| a.weight != 0.0).map(|a| (a.dir, a.weight)).collect();
            let mut phi_cols = Vec::with_capacity(times.len());
            let mut p0_rows = Vec::with_capacity(times.len());
            let mut bufs: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); nl]; n_nodes + 2 + if need_grad { d } else { 0 }];
            for (ti, &t) in times.iter().enumerate() {
                let kappa = match &flow {
                    None => y.clone(),
                    Some(f) => f.at(t),
                };
                let big_b = match &flow {
                    None => vec![0.0; d],
                    Some(_) => mollified_drift(model, params, &kappa, t)?,
                };
                let mut cidx = vec![0isize; d];
                let mut delta = vec![0.0; d];
                for k in 0..d {
                    let p = (kappa[k] - lo[k]) / dx;
                    let c = p.floor();
                    cidx[k] = c as isize;
                    delta[k] = (p - c) * dx;
                }
                let tab = &tables[ti];
                for l in 0..nl {
                    let xi = &lat.frequency(l)[..d];
                    let mut cexp = Complex64::new(0.0, 0.0);
                    let mut psic = Complex64::new(0.0, 0.0);
                    for (dir, w) in &yatoms {
                        let s = dot(xi, dir);
                        for (a, wa) in yw.iter().enumerate() {
                            if *wa != 0.0 {
                                cexp += tab.cut[a].at(s) * (w * wa);
                                psic += tab.psi[a].at(s) * (w * wa);
                            }
                        }
                    }
                    let shift = -(0..d).map(|k| xi[k] * delta[k]).sum::<f64>();
                    let mut base = (-cexp * yl).exp() * Complex64::from_polar(1.0, shift);
                    if cell {
                        base *= sinc_factor(xi, dx);
                    }
                    bufs[0][l] = base;
                    bufs[1][l] = base * (psic * yl - Complex64::new(0.0, dot(xi, &big_b)));
                    for (k, sym) in node_symbols.iter().enumerate() {
                        bufs[2 + k][l] = base * sym[l];
                    }
                    if need_grad {
                        for k in 0..d {
                            bufs[2 + n_nodes + k][l] = base * Complex64::new(0.0, xi[k]);
                        }
                    }
                }
                let idx_of = |c: &[usize]| -> usize {
                    let off: Vec<isize> = (0..d).map(|k| cidx[k] - c[k] as isize).collect();
                    lat.index(&off)
                };
                if ti >= mesh.len() {
                    let p = lat.invert(&mut bufs[0]);
                    p0_rows.push(row_coords.iter().map(|c| p[idx_of(c)]).collect());
                    phi_cols.push(Vec::new());
                    continue;
                }
                let fields: Vec<Vec<f64>> = bufs.iter_mut().map(|b| lat.invert(b)).collect();
                let mut col = vec![0.0; n];
                for (xj, coef) in coeffs.iter().enumerate() {
                    let k = idx_of(&node_coords[xj]);
                    let mut v = fields[1][k];
                    let mut stable = 0.0;
                    for (a, wa) in coef.alpha_w.iter().enumerate() {
                        if *wa == 0.0 {
                            continue;
                        }
                        for &(th, wt) in &coef.angle_w {
                            stable += wa * wt * fields[2 + a * angle_nodes.count + th][k];
                        }
                    }
                    v -= coef.lambda * stable;
                    if has_drift {
                        for kk in 0..d {
                            v += coef.drift[kk] * fields[2 + n_nodes + kk][k];
                        }
                    }
                    if !coef.nu.is_empty() {
                        let w: Vec<f64> = (0..d).map(|kk| kappa[kk] - points[xj][kk]).collect();
                        let p_w = fields[0][k];
                        for (u, m) in &coef.nu {
                            let shifted: Vec<f64> = w.iter().zip(u).map(|(a, b)| a - b).collect();
                            let mut term = lat.interpolate(&fields[0], &delta, &shifted) - p_w;
                            if norm(u) <= 1.0 {
                                // ∇P(w) = −(transform of iξ φ)
                                for kk in 0..d {
                                    term -= fields[2 + n_nodes + kk][k] * u[kk];
                                }
                            }
                            v += m * term;
                        }
                    }
                    col[xj] = v;
                }
                let prow: Vec<f64> = row_coords.iter().map(|c| fields[0][idx_of(c)]).collect();
                phi_cols.push(col);
                p0_rows.push(prow);
            }
            Ok((phi_cols, p0_rows))
        })
        .collect::<Result<_, _>>()?;

    let nm = mesh.len();
    let r = rows.len();
    let mut phi = vec![vec![0.0; n * n]; nm];
    let mut p0_nodes = vec![vec![0.0; r * n]; nm];
    let mut p0_targets = vec![vec![0.0; r * n]; targets.len()];
    for (yi, (cols, prows)) in columns.into_iter().enumerate() {
        for (ti, (col, prow)) in cols.into_iter().zip(prows).enumerate() {
            if ti < nm {
                let mat = &mut phi[ti];
                for (xj, v) in col.into_iter().enumerate() {
                    mat[xj * n + yi] = v;
                }
                for (ri, v) in prow.into_iter().enumerate() {
                    p0_nodes[ti][ri * n + yi] = v;
                }
            } else {
                for (ri, v) in prow.into_iter().enumerate() {
                    p0_targets[ti - nm][ri * n + yi] = v;
                }
            }
        }
    }
    Ok(BulkPhi { phi, p0_nodes, p0_targets })
}
