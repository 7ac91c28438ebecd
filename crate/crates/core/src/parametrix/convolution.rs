//! Graded time meshes, space-time fields and the space-time convolution
//! (a⋆b)_t(x,y) = ∫_0^t Σ_z a_{t−s}(x,z) b_s(z,y) Δz ds.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ParametrixError;
use crate::grid::Grid;
use crate::quad::gauss_legendre;

/// Mesh τ_m = T (m/M)^g, m = 0..M, or any increasing list of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    pub times: Vec<f64>,
    pub grading: f64,
    pub horizon: f64,
}

impl TimeMesh {
    pub fn graded(horizon: f64, intervals: usize, grading: f64) -> TimeMesh {
        let m = intervals.max(3) as f64;
        let times = (0..=intervals.max(3)).map(|k| horizon * (k as f64 / m).powf(grading)).collect();
        TimeMesh { times, grading, horizon }
    }

    /// Arbitrary increasing nodes; interpolation still works in v = (s/T)^{1/g}.
    pub fn from_times(times: Vec<f64>, grading: f64) -> Result<TimeMesh, ParametrixError> {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
            return Err(ParametrixError::Mesh("times must be increasing, nonnegative, non-empty".into()));
        }
        let horizon = *times.last().unwrap_or(&1.0);
        Ok(TimeMesh { times, grading, horizon })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn v(&self, s: f64) -> f64 {
        (s / self.horizon).max(0.0).powf(1.0 / self.grading)
    }

    /// Lagrange weights (up to four nodes) for the value at time s, in the graded variable.
    pub fn stencil(&self, s: f64) -> Vec<(usize, f64)> {
        self.stencil_from(s, 0)
    }

    /// Same, using only nodes `first..`; values below node `first` are extrapolated.
    pub fn stencil_from(&self, s: f64, first: usize) -> Vec<(usize, f64)> {
        let n = self.times.len();
        let vs: Vec<f64> = self.times.iter().map(|&t| self.v(t)).collect();
        let v = self.v(s);
        let i = vs.partition_point(|&p| p <= v).saturating_sub(1).max(first);
        let k = (n - first).min(4);
        let start = (i as isize - 1).clamp(first as isize, (n - k) as isize) as usize;
        let idx: Vec<usize> = (start..start + k).collect();
        idx.iter()
            .map(|&a| {
                let mut w = 1.0;
                for &b in &idx {
                    if b != a {
                        w *= (v - vs[b]) / (vs[a] - vs[b]);
                    }
                }
                (a, w)
            })
            .collect()
    }
}

/// Dense weights W[m][n] with ∫_0^τ a(τ−s) b(s) ds ≈ Σ W[m][n] a_m b_n, where a and b are
/// sampled on the same mesh and behave like r^{−β_a}, s^{−β_b} near zero.
///
/// The interval is split at τ/2. On [0, τ/2] the substitution s = (τ/2) u^p with
/// p = max(2, 1/(1 − β_b)) flattens the b-endpoint; the other half mirrors it for a.
/// Smooth parts s^{β} b(s) are interpolated in the graded variable.
pub fn convolution_weights(mesh: &TimeMesh, tau: f64, beta_a: f64, beta_b: f64, nq: usize) -> Vec<Vec<f64>> {
    let n = mesh.len();
    let mut w = vec![vec![0.0; n]; n];
    if !(tau > 0.0) {
        return w;
    }
    let (gx, gw) = gauss_legendre(nq.max(2));
    let half = 0.5 * tau;
    let weights_at = |s: f64, beta: f64| -> Vec<(usize, f64)> {
        // s^β b(s) is not sampled at s = 0 when β > 0; extrapolate from the later nodes
        let (f, first) = if beta == 0.0 { (1.0, 0) } else { (s.powf(-beta), 1) };
        mesh.stencil_from(s, first)
            .into_iter()
            .map(|(m, l)| (m, l * mesh.times[m].powf(beta) * f))
            .collect()
    };
    for side in 0..2 {
        let beta_near = if side == 0 { beta_b } else { beta_a };
        let p = (1.0 / (1.0 - beta_near)).max(2.0);
        for (x, wq) in gx.iter().zip(&gw) {
            let u = 0.5 * (x + 1.0);
            let near = half * u.powf(p);
            let jac = 0.5 * wq * half * p * u.powf(p - 1.0);
            let (s, r) = if side == 0 { (near, tau - near) } else { (tau - near, near) };
            let wa = weights_at(r, beta_a);
            let wb = weights_at(s, beta_b);
            for &(m, am) in &wa {
                for &(k, bk) in &wb {
                    w[m][k] += jac * am * bk;
                }
            }
        }
    }
    w
}

/// Values on a time mesh × x-points × y-points, stored [t][x][y].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub mesh: TimeMesh,
    pub x_points: Vec<Vec<f64>>,
    pub y_points: Vec<Vec<f64>>,
    /// Uniform grid behind `y_points`, when there is one.
    pub y_grid: Option<Grid>,
    /// Integration weight of one y-point.
    pub cell_volume: f64,
    /// Values are averages over the x-cells rather than point values.
    #[serde(default)]
    pub averaged: bool,
    #[serde(skip)]
    pub values: Vec<f64>,
    /// β with sup_x Σ_y |values_t| Δ ≈ C t^{−β} as t → 0 (β = 1 − ε_Φ for Φ).
    pub rate: f64,
    pub provenance: String,
}

impl SpaceTimeField {
    pub fn zeros(
        mesh: TimeMesh,
        x_points: Vec<Vec<f64>>,
        y_points: Vec<Vec<f64>>,
        cell_volume: f64,
        provenance: &str,
    ) -> SpaceTimeField {
        let len = mesh.len() * x_points.len() * y_points.len();
        SpaceTimeField {
            mesh,
            x_points,
            y_points,
            y_grid: None,
            cell_volume,
            averaged: false,
            values: vec![0.0; len],
            rate: 0.0,
            provenance: provenance.to_string(),
        }
    }

    pub fn nx(&self) -> usize {
        self.x_points.len()
    }

    pub fn ny(&self) -> usize {
        self.y_points.len()
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        let s = self.nx() * self.ny();
        &self.values[m * s..(m + 1) * s]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        let s = self.nx() * self.ny();
        &mut self.values[m * s..(m + 1) * s]
    }

    pub fn row(&self, m: usize, i: usize) -> &[f64] {
        let ny = self.ny();
        &self.slice(m)[i * ny..(i + 1) * ny]
    }

    /// sup_x Σ_y |values| Δ at time node m.
    pub fn norm_inf1(&self, m: usize) -> f64 {
        (0..self.nx())
            .map(|i| self.row(m, i).iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume)
            .fold(0.0, f64::max)
    }

    /// Least-squares slope of log sup_x Σ_y|values|Δ against log t over nodes in [lo, hi].
    pub fn fitted_slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = (0..self.mesh.len())
            .filter(|&m| self.mesh.times[m] >= lo && self.mesh.times[m] <= hi)
            .map(|m| (self.mesh.times[m], self.norm_inf1(m)))
            .filter(|&(_, n)| n > 0.0)
            .map(|(t, n)| (t.ln(), n.ln()))
            .collect();
        fit_line(&pts).map(|f| f.slope)
    }

    /// Sets `rate` from the fitted slope on [0.02, 0.5]·T.
    pub fn refit_rate(&mut self) {
        let t = self.mesh.horizon;
        if let Some(s) = self.fitted_slope(0.02 * t, 0.5 * t) {
            self.rate = (-s).max(0.0);
        }
    }

    pub fn header_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Binary little-endian f64 array in [t][x][y] order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Ordinary least squares y = a + slope·x with the slope's standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

pub fn fit_line(pts: &[(f64, f64)]) -> Option<LineFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_stderr = if pts.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Some(LineFit { intercept, slope, slope_stderr })
}

/// Row block C (r × k) times matrix B (k × c), accumulated into out (r × c) with factor `alpha`.
pub(crate) fn gemm_acc(r: usize, k: usize, c: usize, alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert!(a.len() >= r * k && b.len() >= k * c && out.len() >= r * c);
    // SAFETY: slices are row-major with the stated shapes and do not alias.
    unsafe {
        matrixmultiply::dgemm(
            r,
            k,
            c,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            c as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            c as isize,
            1,
        );
    }
}

/// Σ_{m,n} W[m][n] a_m b_n Δz for one output time, rows of `a` against full `b` slices.
pub(crate) fn apply_weights(
    w: &[Vec<f64>],
    a_slices: &[&[f64]],
    b_slices: &[&[f64]],
    rows: usize,
    inner: usize,
    cols: usize,
    dz: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    let mut c = vec![0.0; rows * inner];
    for n in 0..b_slices.len() {
        let mut any = false;
        c.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..a_slices.len() {
            let wmn = w[m][n];
            if wmn == 0.0 {
                continue;
            }
            any = true;
            for (cv, av) in c.iter_mut().zip(a_slices[m]) {
                *cv += wmn * av;
            }
        }
        if any {
            gemm_acc(rows, inner, cols, dz, &c, b_slices[n], &mut out);
        }
    }
    out
}

/// Quadrature nodes per half interval used by `spacetime_convolve`.
pub const CONVOLUTION_QUAD: usize = 16;

/// (a⋆b)_t(x,y) on the shared mesh; the z-sum uses a's y cell volume.
pub fn spacetime_convolve(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<SpaceTimeField, ParametrixError> {
    if a.mesh.times != b.mesh.times {
        return Err(ParametrixError::Mesh("convolution factors use different time meshes".into()));
    }
    if a.ny() != b.nx() {
        return Err(ParametrixError::Mesh(format!("inner grids differ: {} vs {}", a.ny(), b.nx())));
    }
    for f in [a, b] {
        if !(f.rate < 1.0) {
            return Err(ParametrixError::Singularity(f.rate));
        }
    }
    let (rows, inner, cols) = (a.nx(), a.ny(), b.ny());
    let a_sl: Vec<&[f64]> = (0..a.mesh.len()).map(|m| a.slice(m)).collect();
    let b_sl: Vec<&[f64]> = (0..b.mesh.len()).map(|m| b.slice(m)).collect();
    let blocks: Vec<Vec<f64>> = a
        .mesh
        .times
        .par_iter()
        .map(|&tau| {
            let w = convolution_weights(&a.mesh, tau, a.rate, b.rate, CONVOLUTION_QUAD);
            apply_weights(&w, &a_sl, &b_sl, rows, inner, cols, a.cell_volume)
        })
        .collect();
    let mut out = SpaceTimeField::zeros(a.mesh.clone(), a.x_points.clone(), b.y_points.clone(), b.cell_volume, "convolution");
    out.y_grid = b.y_grid.clone();
    for (m, blk) in blocks.into_iter().enumerate() {
        out.slice_mut(m).copy_from_slice(&blk);
    }
    out.rate = (a.rate + b.rate - 1.0).max(0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(mesh: &TimeMesh, nx: usize, ny: usize, dz: f64, mut f: impl FnMut(f64, usize, usize) -> f64) -> SpaceTimeField {
        let xs: Vec<Vec<f64>> = (0..nx).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..ny).map(|i| vec![i as f64]).collect();
        let mut s = SpaceTimeField::zeros(mesh.clone(), xs, ys, dz, "test");
        for m in 0..mesh.len() {
            let t = mesh.times[m];
            let sl = s.slice_mut(m);
            for i in 0..nx {
                for j in 0..ny {
                    sl[i * ny + j] = f(t, i, j);
                }
            }
        }
        s
    }

    #[test]
    fn constants_give_t_times_volume() {
        let mesh = TimeMesh::graded(1.0, 12, 2.0);
        let a = field(&mesh, 3, 5, 0.25, |_, _, _| 1.0);
        let b = field(&mesh, 5, 4, 0.25, |_, _, _| 1.0);
        let c = spacetime_convolve(&a, &b).unwrap();
        let vol = 5.0 * 0.25;
        for (m, &t) in mesh.times.iter().enumerate() {
            for v in c.slice(m) {
                assert!((v - t * vol).abs() < 1e-12, "t={t} got {v}");
            }
        }
    }

    #[test]
    fn random_fields_match_triple_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mesh = TimeMesh::from_times(vec![0.0, 0.1, 0.35, 0.8], 2.0).unwrap();
        let mut a = field(&mesh, 4, 4, 0.3, |_, _, _| rng.gen_range(-1.0..1.0));
        let b = field(&mesh, 4, 4, 0.3, |_, _, _| rng.gen_range(-1.0..1.0));
        a.rate = 0.3;
        let c = spacetime_convolve(&a, &b).unwrap();
        for (j, &tau) in mesh.times.iter().enumerate() {
            let w = convolution_weights(&mesh, tau, 0.3, 0.0, CONVOLUTION_QUAD);
            for x in 0..4 {
                for y in 0..4 {
                    let mut direct = 0.0;
                    for m in 0..4 {
                        for n in 0..4 {
                            for z in 0..4 {
                                direct += w[m][n] * a.slice(m)[x * 4 + z] * b.slice(n)[z * 4 + y] * 0.3;
                            }
                        }
                    }
                    assert!((c.slice(j)[x * 4 + y] - direct).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn inverse_square_root_singularity() {
        let mesh = TimeMesh::graded(1.0, 20, 2.0);
        let a = field(&mesh, 1, 1, 1.0, |_, _, _| 1.0);
        let mut b = field(&mesh, 1, 1, 1.0, |t, _, _| if t > 0.0 { t.powf(-0.5) } else { 0.0 });
        b.rate = 0.5;
        let c = spacetime_convolve(&a, &b).unwrap();
        for (m, &t) in mesh.times.iter().enumerate() {
            assert!((c.slice(m)[0] - 2.0 * t.sqrt()).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn smooth_kernels_are_integrated_accurately() {
        // ∫_0^t (t−s) e^{-s} ds = t − 1 + e^{-t}
        let mesh = TimeMesh::graded(1.0, 24, 2.0);
        let a = field(&mesh, 1, 1, 1.0, |t, _, _| t);
        let b = field(&mesh, 1, 1, 1.0, |t, _, _| (-t).exp());
        let c = spacetime_convolve(&a, &b).unwrap();
        for (m, &t) in mesh.times.iter().enumerate() {
            assert!((c.slice(m)[0] - (t - 1.0 + (-t).exp())).abs() < 1e-7);
        }
    }

    #[test]
    fn bilinear_and_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = TimeMesh::graded(1.0, 6, 2.0);
        let mut r = |_: f64, _: usize, _: usize| rng.gen_range(-1.0..1.0);
        let a = field(&mesh, 3, 3, 0.5, &mut r);
        let b = field(&mesh, 3, 3, 0.5, &mut r);
        let c = field(&mesh, 3, 3, 0.5, &mut r);
        let mut bc = b.clone();
        for (v, w) in bc.values.iter_mut().zip(&c.values) {
            *v = 2.0 * *v + w;
        }
        let lhs = spacetime_convolve(&a, &bc).unwrap();
        let ab = spacetime_convolve(&a, &b).unwrap();
        let ac = spacetime_convolve(&a, &c).unwrap();
        for k in 0..lhs.values.len() {
            assert!((lhs.values[k] - 2.0 * ab.values[k] - ac.values[k]).abs() < 1e-12);
        }
        // polynomial in time: cubic Lagrange in v = sqrt(s) makes products of
        // quadratic-in-v fields exact up to quadrature, so associativity holds closely
        let p = field(&mesh, 2, 2, 0.5, |t, i, j| 1.0 + t.sqrt() * (i + j) as f64);
        let q = field(&mesh, 2, 2, 0.5, |t, i, j| 1.0 - t * (i as f64 - j as f64));
        let left = spacetime_convolve(&spacetime_convolve(&p, &q).unwrap(), &p).unwrap();
        let right = spacetime_convolve(&p, &spacetime_convolve(&q, &p).unwrap()).unwrap();
        for k in 0..left.values.len() {
            assert!((left.values[k] - right.values[k]).abs() < 1e-3 * (1.0 + left.values[k].abs()));
        }
    }

    #[test]
    fn fit_line_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0 - 0.5 * k as f64)).collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && f.slope_stderr < 1e-12);
    }
}
