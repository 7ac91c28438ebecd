//! Frozen-coefficient cut exponents and densities by discrete Fourier inversion,
//! the zero-order kernel p⁰ and the exponential bounding kernels.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::flow::{self, Direction, FlowError};
use crate::model::{dot, norm, radial_exponent_closed, Frozen, ModelError, ModelSpec, NumericalParams};
use crate::quad::{self, oscillatory_tail, power_integral, QuadError};

#[derive(Debug, Error)]
pub enum FrozenError {
    #[error("time {0} outside (0, 1]")]
    Time(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("cut exponent quadrature failed: {0}")]
    Quad(#[from] QuadError),
    #[error("characteristic function not negligible at the frequency cutoff: |phi| = {0:e}")]
    Truncation(f64),
    #[error("grid: {0}")]
    Grid(String),
}

fn check_time(t: f64) -> Result<(), FrozenError> {
    if t > 0.0 && t <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(FrozenError::Time(t))
    }
}

// ---------------------------------------------------------------------------
// Integrated cut exponent
// ---------------------------------------------------------------------------

/// ∫_0^A e^{isρ} ρ^{c-1} dρ for s > 0, c > 0.
fn lower_oscillatory(c: f64, big_a: f64, s: f64) -> Complex64 {
    let is = Complex64::new(0.0, s);
    if (c - 1.0).abs() < 1e-12 {
        return (Complex64::from_polar(1.0, s * big_a) - 1.0) / is;
    }
    if c < 1.0 {
        return Complex64::from_polar(gamma(c) * s.powf(-c), PI * c / 2.0) - oscillatory_tail(c, big_a, s);
    }
    Complex64::from_polar(big_a.powf(c - 1.0), s * big_a) / is - (c - 1.0) / is * lower_oscillatory(c - 1.0, big_a, s)
}

/// Per-atom ∫_0^t ∫_0^{r^ζ} (1 − e^{iρs} + iρs 1{ρ ≤ r^{1/α}}) ρ^{-1-α} dρ dr in closed form.
///
/// Swapping the order leaves t·G1 − G2 − i s t^{1/α} with
/// G1 = ∫_0^A (1 − e^{iρs} + iρs 1{ρ≤a}) ρ^{-1-α}, G2 = ∫_0^A (1 − e^{iρs}) ρ^{γ-1},
/// A = t^ζ, a = t^{1/α}, γ = 1/ζ − α.
pub fn cut_exponent_atom(alpha: f64, zeta: f64, t: f64, s: f64) -> Complex64 {
    if s == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if s < 0.0 {
        return cut_exponent_atom(alpha, zeta, t, -s).conj();
    }
    let big_a = t.powf(zeta);
    let a = t.powf(1.0 / alpha);
    let g = 1.0 / zeta - alpha;
    let is = Complex64::new(0.0, s);
    let (g1, g2) = if s * big_a <= 6.0 {
        let mut g1 = -is * power_integral(alpha, a, big_a);
        let mut g2 = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 1..80 {
            term *= is * big_a / k as f64;
            let kf = k as f64;
            if k >= 2 {
                g1 -= term * big_a.powf(-alpha) / (kf - alpha);
            }
            g2 -= term * big_a.powf(g) / (kf + g);
            if term.norm() < 1e-18 {
                break;
            }
        }
        (g1, g2)
    } else {
        let g1 = radial_exponent_closed(alpha, s, a) - (big_a.powf(-alpha) / alpha - oscillatory_tail(-alpha, big_a, s));
        let g2 = big_a.powf(g) / g - lower_oscillatory(g, big_a, s);
        (g1, g2)
    };
    t * g1 - g2 - is * a
}

/// G(s) = ∫_0^A (1 − e^{iρs} + iρs 1{ρ≤a}) ρ^{-1-α} dρ; A may be infinite.
///
/// Per atom this is the truncated exponent ψ_t^{cut} (A = t^ζ, a = t^{1/α}) and, with
/// A = q and a = 1, the exponent of the μ-measure cut at q.
pub fn radial_window(alpha: f64, s: f64, a: f64, big_a: f64) -> Complex64 {
    if s == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if s < 0.0 {
        return radial_window(alpha, -s, a, big_a).conj();
    }
    if big_a.is_infinite() {
        return radial_exponent_closed(alpha, s, a);
    }
    let a = a.min(big_a);
    let is = Complex64::new(0.0, s);
    if s * big_a <= 6.0 {
        let mut g = -is * power_integral(alpha, a, big_a);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 1..80 {
            term *= is * big_a / k as f64;
            if k >= 2 {
                g -= term * big_a.powf(-alpha) / (k as f64 - alpha);
            }
            if term.norm() < 1e-18 {
                break;
            }
        }
        g
    } else {
        radial_exponent_closed(alpha, s, a) - (big_a.powf(-alpha) / alpha - oscillatory_tail(-alpha, big_a, s))
    }
}

fn theta_minus_sin(th: f64) -> f64 {
    if th.abs() < 1e-2 {
        let t2 = th * th;
        th * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    } else {
        th - th.sin()
    }
}

/// The same per-atom quantity by adaptive quadrature of the single ρ-integral
/// ∫_0^A [(1 − e^{iθ})(t − ρ^{1/ζ}) + iθ (t − ρ^α) 1{ρ≤a}] ρ^{-1-α} dρ, θ = ρs.
pub fn cut_exponent_atom_adaptive(alpha: f64, zeta: f64, t: f64, s: f64) -> Result<Complex64, QuadError> {
    if s == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let big_a = t.powf(zeta);
    let a = t.powf(1.0 / alpha);
    let e = 1.0 / zeta;
    let f = |rho: f64| -> Complex64 {
        if rho <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let th = rho * s;
        let w = t - rho.powf(e);
        let half = (0.5 * th).sin();
        let re = 2.0 * half * half * w;
        let im = if rho <= a {
            theta_minus_sin(th) * w + th * (rho.powf(e) - rho.powf(alpha))
        } else {
            -th.sin() * w
        };
        Complex64::new(re, im) * rho.powf(-1.0 - alpha)
    };
    let m = (1.0 / (2.0 - alpha)).max(1.0);
    let inner = quad::integrate_complex(
        |v| f(a * v.powf(m)) * (a * m * v.powf(m - 1.0)),
        0.0,
        1.0,
        1e-15,
        1e-12,
        20000,
    )?;
    let outer = quad::integrate_complex(f, a, big_a, 1e-15, 1e-12, 20000)?;
    Ok(inner + outer)
}

fn cut_exponent_frozen(fr: &Frozen, zeta: f64, t: f64, xi: &[f64]) -> Complex64 {
    let mut c = Complex64::new(0.0, 0.0);
    for at in &fr.atoms {
        if at.weight != 0.0 {
            c += cut_exponent_atom(fr.alpha, zeta, t, dot(xi, &at.dir)) * (fr.lambda * at.weight);
        }
    }
    c
}

/// ∫_0^t ψ_r^{z,cut}(ξ) dr by adaptive quadrature, atom by atom.
pub fn integrated_cut_exponent(
    model: &ModelSpec,
    params: &NumericalParams,
    z: &[f64],
    t: f64,
    xi: &[f64],
) -> Result<Complex64, FrozenError> {
    check_time(t)?;
    if xi.len() != model.dimension {
        return Err(ModelError::Dimension("frequency does not match the model dimension".into()).into());
    }
    let fr = model.frozen(z)?;
    let zeta = params.zeta(model, fr.alpha);
    let mut c = Complex64::new(0.0, 0.0);
    for at in &fr.atoms {
        if at.weight != 0.0 {
            c += cut_exponent_atom_adaptive(fr.alpha, zeta, t, dot(xi, &at.dir))? * (fr.lambda * at.weight);
        }
    }
    Ok(c)
}

/// Closed-form evaluation of the same integral, used when filling frequency grids.
pub fn integrated_cut_exponent_fast(
    model: &ModelSpec,
    params: &NumericalParams,
    z: &[f64],
    t: f64,
    xi: &[f64],
) -> Result<Complex64, FrozenError> {
    check_time(t)?;
    let fr = model.frozen(z)?;
    Ok(cut_exponent_frozen(&fr, params.zeta(model, fr.alpha), t, xi))
}

/// Untruncated exponent ψ^{z}(ξ) with compensator at 1, summed over atoms in closed form.
fn stable_exponent_fast(fr: &Frozen, xi: &[f64]) -> Complex64 {
    let mut c = Complex64::new(0.0, 0.0);
    for at in &fr.atoms {
        if at.weight != 0.0 {
            c += radial_exponent_closed(fr.alpha, dot(xi, &at.dir), 1.0) * (fr.lambda * at.weight);
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Grids and fields
// ---------------------------------------------------------------------------

/// Largest |characteristic function| on the outermost frequency shell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NyquistRecord {
    pub boundary_modulus: f64,
    pub warning: bool,
}

/// Symmetric frequency grid ξ_k = (k − N/2)Δξ per axis and its dual spatial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub dim: usize,
    pub nodes: usize,
    pub dxi: f64,
    pub xi_max: f64,
    pub dx: f64,
    pub nyquist: Option<NyquistRecord>,
}

impl FrequencyGrid {
    /// Grid with `nodes` per axis whose dual spatial grid covers [-half_width, half_width).
    pub fn with_half_width(dim: usize, nodes: usize, half_width: f64) -> Result<FrequencyGrid, FrozenError> {
        if nodes < 8 || !nodes.is_power_of_two() {
            return Err(FrozenError::Grid(format!("node count {nodes} is not a power of two >= 8")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(FrozenError::Grid(format!("bad half width {half_width}")));
        }
        let dx = 2.0 * half_width / nodes as f64;
        let dxi = 2.0 * PI / (nodes as f64 * dx);
        Ok(FrequencyGrid { dim, nodes, dxi, xi_max: PI / dx, dx, nyquist: None })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.nodes as f64 * self.dx
    }

    fn total(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    fn coords(&self, idx: usize, step: f64) -> Vec<f64> {
        let n = self.nodes;
        let h = (n / 2) as f64;
        if self.dim == 1 {
            vec![(idx as f64 - h) * step]
        } else {
            vec![((idx % n) as f64 - h) * step, ((idx / n) as f64 - h) * step]
        }
    }

    pub fn frequency(&self, idx: usize) -> Vec<f64> {
        self.coords(idx, self.dxi)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx, self.dx)
    }

    fn on_boundary(&self, idx: usize) -> bool {
        let n = self.nodes;
        let edge = |k: usize| k == 0 || k == n - 1;
        if self.dim == 1 {
            edge(idx)
        } else {
            edge(idx % n) || edge(idx / n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// "frozen-cut", "stable", "stable-scaled" or "zero-order".
    pub kind: String,
    pub z: Vec<f64>,
    pub t: f64,
    pub exponent: String,
}

/// Real values on a uniform tensor grid (x1 fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub dim: usize,
    pub nodes: usize,
    pub dx: f64,
    pub lo: f64,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    pub truncation: Option<NyquistRecord>,
}

/// Mass tolerance for density fields (truncation-limited).
pub const TOL_MASS: f64 = 1e-2;

impl DensityField {
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let n = self.nodes;
        if self.dim == 1 {
            vec![self.lo + idx as f64 * self.dx]
        } else {
            vec![self.lo + (idx % n) as f64 * self.dx, self.lo + (idx / n) as f64 * self.dx]
        }
    }

    /// Trapezoid (periodic-grid Riemann) integral.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx.powi(self.dim as i32)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Mass within TOL_MASS of 1 and negative lobes at most 1e-4 of the peak.
    pub fn check(&self) -> Result<(), String> {
        let m = self.mass();
        if (m - 1.0).abs() > TOL_MASS {
            return Err(format!("mass {m} outside 1 ± {TOL_MASS}"));
        }
        if self.min() < -1e-4 * self.max() {
            return Err(format!("negative lobe {} below -1e-4 of the peak {}", self.min(), self.max()));
        }
        Ok(())
    }

    /// Cubic interpolation; `None` outside the grid.
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        interpolate(&self.values, self.dim, self.nodes, self.lo, self.dx, x)
    }

    /// Copy with Gibbs lobes clipped to zero (export only).
    pub fn clipped(&self) -> DensityField {
        let mut c = self.clone();
        for v in &mut c.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        c
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for k in 1..=self.dim {
            s.push_str(&format!("x{k},"));
        }
        s.push_str("value\n");
        for (i, v) in self.values.iter().enumerate() {
            for c in self.point(i) {
                s.push_str(&format!("{c:.10e},"));
            }
            s.push_str(&format!("{v:.12e}\n"));
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        let v = serde_json::json!({
            "dimension": self.dim,
            "nodes_per_axis": self.nodes,
            "spacing": self.dx,
            "lower": self.lo,
            "provenance": self.provenance,
            "mass": self.mass(),
            "truncation": self.truncation,
        });
        serde_json::to_string_pretty(&v).unwrap_or_default()
    }
}

/// Four-point Lagrange weights at fractional offset `f` ∈ [0,1] between nodes 1 and 2.
pub(crate) fn cubic_weights(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

fn stencil(n: usize, lo: f64, dx: f64, x: f64) -> Option<(usize, [f64; 4])> {
    let p = (x - lo) / dx;
    if !(p >= 0.0 && p <= (n - 1) as f64) {
        return None;
    }
    let base = (p.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    Some((base, cubic_weights(p - base as f64 - 1.0)))
}

pub(crate) fn interpolate(values: &[f64], dim: usize, n: usize, lo: f64, dx: f64, x: &[f64]) -> Option<f64> {
    let (b0, w0) = stencil(n, lo, dx, x[0])?;
    if dim == 1 {
        return Some((0..4).map(|i| w0[i] * values[b0 + i]).sum());
    }
    let (b1, w1) = stencil(n, lo, dx, x[1])?;
    let mut acc = 0.0;
    for j in 0..4 {
        let row = (b1 + j) * n;
        let mut r = 0.0;
        for i in 0..4 {
            r += w0[i] * values[row + b0 + i];
        }
        acc += w1[j] * r;
    }
    Some(acc)
}

/// Inverse transform p(x_j) = (2π)^{-d} Σ_k e^{-iξ_k x_j} φ_k Δξ^d for each spectral multiplier.
fn invert(grid: &FrequencyGrid, cf: &[Complex64], multipliers: &[Box<dyn Fn(&[f64]) -> Complex64 + '_>]) -> Vec<Vec<f64>> {
    let n = grid.nodes;
    let d = grid.dim;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let scale = (grid.dxi / (2.0 * PI)).powi(d as i32);
    let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let parity = |idx: usize| if d == 1 { sign(idx) } else { sign(idx % n) * sign(idx / n) };
    let mut out = Vec::with_capacity(multipliers.len());
    for mult in multipliers {
        let mut buf: Vec<Complex64> =
            (0..cf.len()).map(|i| cf[i] * mult(&grid.frequency(i)) * parity(i)).collect();
        if d == 1 {
            fft.process(&mut buf);
        } else {
            for row in buf.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for c in 0..n {
                for r in 0..n {
                    col[r] = buf[r * n + c];
                }
                fft.process(&mut col);
                for r in 0..n {
                    buf[r * n + c] = col[r];
                }
            }
        }
        out.push((0..buf.len()).map(|i| buf[i].re * parity(i) * scale).collect());
    }
    out
}

fn sample_cf<F: Fn(&[f64]) -> Complex64>(grid: &FrequencyGrid, exponent: F) -> (Vec<Complex64>, f64) {
    let mut boundary: f64 = 0.0;
    let cf: Vec<Complex64> = (0..grid.total())
        .map(|i| {
            let v = (-exponent(&grid.frequency(i))).exp();
            if grid.on_boundary(i) {
                boundary = boundary.max(v.norm());
            }
            v
        })
        .collect();
    (cf, boundary)
}

/// Mean and standard deviation scale of the cut law from the exponent near ξ = 0.
fn cut_moments(fr: &Frozen, zeta: f64, t: f64) -> (Vec<f64>, f64) {
    let d = fr.atoms[0].dir.len();
    let h = 1e-4 / t.powf(zeta);
    let mut mean = vec![0.0; d];
    let mut var: f64 = 0.0;
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = h;
        let c = cut_exponent_frozen(fr, zeta, t, &e);
        mean[k] = -c.im / h;
        var = var.max(2.0 * c.re / (h * h));
    }
    (mean, var.max(0.0).sqrt())
}

/// Smallest σ0 with Re ψ(ω) ≥ σ0 on sampled unit directions.
pub(crate) fn sigma0(fr: &Frozen) -> f64 {
    let d = fr.atoms[0].dir.len();
    let dirs: Vec<Vec<f64>> = if d == 1 {
        vec![vec![1.0]]
    } else {
        (0..64).map(|k| {
            let a = PI * k as f64 / 64.0;
            vec![a.cos(), a.sin()]
        }).collect()
    };
    dirs.iter().map(|w| stable_exponent_fast(fr, w).re).fold(f64::INFINITY, f64::min).max(1e-300)
}

/// Options for a frozen field on an explicit grid.
#[derive(Debug, Clone, Copy)]
pub struct FieldOptions {
    /// Box width for cell averaging (multiplies the transform by Π sinc(ξ_k h/2)).
    pub cell: Option<f64>,
    pub derivatives: bool,
}

/// Frozen cut density with spectral first and second derivatives, on a centered grid.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub grid: FrequencyGrid,
    pub value: Vec<f64>,
    /// ∂_k p, one array per axis.
    pub grad: Vec<Vec<f64>>,
    /// ∂_j∂_k p for j ≤ k in order (11), (12), (22).
    pub hess: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl SpectralField {
    fn lo(&self) -> f64 {
        -self.grid.half_width()
    }

    pub fn value_at(&self, w: &[f64]) -> f64 {
        interpolate(&self.value, self.grid.dim, self.grid.nodes, self.lo(), self.grid.dx, w).unwrap_or(0.0)
    }

    pub fn grad_at(&self, w: &[f64]) -> Vec<f64> {
        self.grad
            .iter()
            .map(|g| interpolate(g, self.grid.dim, self.grid.nodes, self.lo(), self.grid.dx, w).unwrap_or(0.0))
            .collect()
    }

    /// Hessian as a row-major d×d matrix.
    pub fn hess_at(&self, w: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .hess
            .iter()
            .map(|g| interpolate(g, self.grid.dim, self.grid.nodes, self.lo(), self.grid.dx, w).unwrap_or(0.0))
            .collect();
        if self.grid.dim == 1 {
            h
        } else {
            vec![h[0], h[1], h[1], h[2]]
        }
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        let hw = self.grid.half_width() - 2.0 * self.grid.dx;
        w.iter().all(|v| v.abs() <= hw)
    }
}

/// Half width that keeps the cut law inside the grid: |mean| + 10 (sd + t^ζ).
pub fn cut_half_width(model: &ModelSpec, params: &NumericalParams, z: &[f64], t: f64) -> Result<f64, FrozenError> {
    let fr = model.frozen(z)?;
    let zeta = params.zeta(model, fr.alpha);
    let (mean, sd) = cut_moments(&fr, zeta, t);
    Ok(norm(&mean) + 10.0 * (sd + t.powf(zeta)))
}

/// Frozen cut density for state z on an explicit grid (no refinement, no truncation error).
pub fn frozen_field(
    model: &ModelSpec,
    params: &NumericalParams,
    z: &[f64],
    t: f64,
    grid: &FrequencyGrid,
    opts: FieldOptions,
) -> Result<SpectralField, FrozenError> {
    check_time(t)?;
    let fr = model.frozen(z)?;
    let zeta = params.zeta(model, fr.alpha);
    let d = model.dimension;
    let (cf, boundary) = sample_cf(grid, |xi| {
        let mut c = cut_exponent_frozen(&fr, zeta, t, xi);
        if let Some(h) = opts.cell {
            for v in xi {
                let a = 0.5 * v * h;
                if a != 0.0 {
                    // log sinc, kept inside the exponent so the product never underflows early.
                    let s = a.sin() / a;
                    c -= Complex64::new(s.abs().ln(), if s < 0.0 { PI } else { 0.0 });
                }
            }
        }
        c
    });
    let i = Complex64::i();
    let mut mults: Vec<Box<dyn Fn(&[f64]) -> Complex64>> = vec![Box::new(|_| Complex64::new(1.0, 0.0))];
    if opts.derivatives {
        for k in 0..d {
            mults.push(Box::new(move |xi: &[f64]| -i * xi[k]));
        }
        for j in 0..d {
            for k in j..d {
                mults.push(Box::new(move |xi: &[f64]| Complex64::new(-xi[j] * xi[k], 0.0)));
            }
        }
    }
    let mut arrays = invert(grid, &cf, &mults).into_iter();
    let value = arrays.next().unwrap_or_default();
    let grad: Vec<Vec<f64>> = if opts.derivatives { (0..d).map(|_| arrays.next().unwrap_or_default()).collect() } else { Vec::new() };
    let hess: Vec<Vec<f64>> = arrays.collect();
    let mut g = grid.clone();
    g.nyquist = Some(NyquistRecord { boundary_modulus: boundary, warning: boundary > 1e-10 });
    let (mean, _) = cut_moments(&fr, zeta, t);
    Ok(SpectralField { grid: g, value, grad, hess, mean })
}

fn to_density(grid: &FrequencyGrid, values: Vec<f64>, provenance: Provenance) -> DensityField {
    DensityField {
        dim: grid.dim,
        nodes: grid.nodes,
        dx: grid.dx,
        lo: -grid.half_width(),
        values,
        provenance,
        truncation: grid.nyquist,
    }
}

/// Chooses a grid: spatial half width `want`, capped so that e^{-σ0 t Ξ^α} stays below 1e-12.
pub(crate) fn choose_grid(d: usize, nodes: usize, want: f64, sigma0: f64, alpha: f64, t: f64) -> Result<FrequencyGrid, FrozenError> {
    let xi_req = (28.0 / (sigma0 * t)).powf(1.0 / alpha);
    let cap = nodes as f64 * PI / (2.0 * xi_req);
    FrequencyGrid::with_half_width(d, nodes, want.min(cap))
}

/// Refines once when the boundary modulus exceeds 1e-10; errors above 1e-6.
fn with_nyquist<F>(mut grid: FrequencyGrid, mut run: F) -> Result<(FrequencyGrid, Vec<f64>), FrozenError>
where
    F: FnMut(&FrequencyGrid) -> (Vec<f64>, f64),
{
    let mut refined = false;
    loop {
        let (vals, boundary) = run(&grid);
        if boundary > 1e-10 && !refined {
            grid = FrequencyGrid::with_half_width(grid.dim, grid.nodes * 2, grid.half_width())?;
            refined = true;
            continue;
        }
        if boundary > 1e-6 {
            return Err(FrozenError::Truncation(boundary));
        }
        grid.nyquist = Some(NyquistRecord { boundary_modulus: boundary, warning: boundary > 1e-10 });
        return Ok((grid, vals));
    }
}

/// p_t^{z,cut} on its default grid.
pub fn frozen_density(model: &ModelSpec, params: &NumericalParams, z: &[f64], t: f64) -> Result<DensityField, FrozenError> {
    check_time(t)?;
    let d = model.dimension;
    let fr = model.frozen(z)?;
    let zeta = params.zeta(model, fr.alpha);
    let want = cut_half_width(model, params, z, t)?;
    let grid = choose_grid(d, params.freq_nodes(d), want, sigma0(&fr), fr.alpha, t)?;
    let (grid, values) = with_nyquist(grid, |g| {
        let (cf, b) = sample_cf(g, |xi| cut_exponent_frozen(&fr, zeta, t, xi));
        let one: Box<dyn Fn(&[f64]) -> Complex64> = Box::new(|_| Complex64::new(1.0, 0.0));
        (invert(g, &cf, &[one]).remove(0), b)
    })?;
    let prov = Provenance {
        kind: "frozen-cut".into(),
        z: z.to_vec(),
        t,
        exponent: format!("integrated cut exponent, zeta = {zeta}"),
    };
    Ok(to_density(&grid, values, prov))
}

/// Stable density of e^{-tψ^{z,υ}} and its scaled form t^{-d/α} g^z(·/t^{1/α}) on one grid.
#[derive(Debug, Clone)]
pub struct StableDensity {
    pub density: DensityField,
    pub scaled: DensityField,
}

pub fn stable_density(model: &ModelSpec, z: &[f64], t: f64) -> Result<StableDensity, FrozenError> {
    stable_density_with(model, z, t, NumericalParams::default().freq_nodes(model.dimension), None)
}

/// As `stable_density`, with explicit node count and optional half width.
pub fn stable_density_with(
    model: &ModelSpec,
    z: &[f64],
    t: f64,
    nodes: usize,
    half_width: Option<f64>,
) -> Result<StableDensity, FrozenError> {
    check_time(t)?;
    let d = model.dimension;
    let fr = model.frozen(z)?;
    let ups = fr.intrinsic_drift();
    let scale = t.powf(1.0 / fr.alpha);
    let want = half_width.unwrap_or(80.0 * scale + t * norm(&ups));
    let grid = match half_width {
        Some(h) => FrequencyGrid::with_half_width(d, nodes, h)?,
        None => choose_grid(d, nodes, want, sigma0(&fr), fr.alpha, t)?,
    };
    let i = Complex64::i();
    let exponent = |xi: &[f64]| stable_exponent_fast(&fr, xi) - i * dot(xi, &ups);
    let (grid, full) = with_nyquist(grid, |g| {
        let (cf, b) = sample_cf(g, |xi| t * exponent(xi));
        let one: Box<dyn Fn(&[f64]) -> Complex64> = Box::new(|_| Complex64::new(1.0, 0.0));
        (invert(g, &cf, &[one]).remove(0), b)
    })?;
    let (cf, _) = sample_cf(&grid, |xi| {
        let s: Vec<f64> = xi.iter().map(|v| v * scale).collect();
        exponent(&s)
    });
    let one: Box<dyn Fn(&[f64]) -> Complex64> = Box::new(|_| Complex64::new(1.0, 0.0));
    let scaled = invert(&grid, &cf, &[one]).remove(0);
    let prov = |kind: &str| Provenance {
        kind: kind.into(),
        z: z.to_vec(),
        t,
        exponent: format!("stable exponent with intrinsic drift, alpha = {}", fr.alpha),
    };
    Ok(StableDensity {
        density: to_density(&grid, full, prov("stable")),
        scaled: to_density(&grid, scaled, prov("stable-scaled")),
    })
}

// ---------------------------------------------------------------------------
// Zero-order kernel
// ---------------------------------------------------------------------------

/// Per-(y, t) cache of backward flows and frozen fields; read-mostly, one writer per key.
#[derive(Default)]
pub struct ZeroOrderCache {
    entries: RwLock<HashMap<(Vec<u64>, u64), Arc<ZeroOrderEntry>>>,
}

pub struct ZeroOrderEntry {
    pub kappa: Vec<f64>,
    pub field: SpectralField,
}

fn key(y: &[f64], t: f64) -> (Vec<u64>, u64) {
    (y.iter().map(|v| v.to_bits()).collect(), t.to_bits())
}

impl ZeroOrderCache {
    pub fn new() -> ZeroOrderCache {
        ZeroOrderCache::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        model: &ModelSpec,
        params: &NumericalParams,
        y: &[f64],
        t: f64,
    ) -> Result<Arc<ZeroOrderEntry>, FrozenError> {
        let k = key(y, t);
        if let Some(e) = self.entries.read().ok().and_then(|m| m.get(&k).cloned()) {
            return Ok(e);
        }
        let kappa = flow::solve_flow(model, params, y, t, Direction::Backward)?.end().to_vec();
        let d = model.dimension;
        let fr = model.frozen(y)?;
        let want = cut_half_width(model, params, y, t)?;
        let grid = choose_grid(d, params.freq_nodes(d), want, sigma0(&fr), fr.alpha, t)?;
        let field = frozen_field(model, params, y, t, &grid, FieldOptions { cell: None, derivatives: false })?;
        let entry = Arc::new(ZeroOrderEntry { kappa, field });
        if let Ok(mut m) = self.entries.write() {
            m.entry(k).or_insert_with(|| entry.clone());
        }
        Ok(entry)
    }
}

/// p⁰_t(x,y) = p_t^{y,cut}(κ_t(y) − x), with an out-of-support flag when the point
/// falls outside the field's grid (where the field is below 1e-14).
pub fn zero_order(
    model: &ModelSpec,
    params: &NumericalParams,
    x: &[f64],
    y: &[f64],
    t: f64,
    cache: &ZeroOrderCache,
) -> Result<(f64, bool), FrozenError> {
    let e = cache.get_or_compute(model, params, y, t)?;
    let w: Vec<f64> = e.kappa.iter().zip(x).map(|(k, v)| k - v).collect();
    if e.field.contains(&w) {
        Ok((e.field.value_at(&w), false))
    } else {
        Ok((0.0, true))
    }
}

// ---------------------------------------------------------------------------
// Bounding kernels
// ---------------------------------------------------------------------------

/// f_{t,a,c}(x) = t^{-ad} e^{-c|x| t^{-a}}.
pub fn f_kernel(t: f64, a: f64, c: f64, x: &[f64]) -> f64 {
    t.powf(-a * x.len() as f64) * (-c * norm(x) * t.powf(-a)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundKernel {
    /// f_{t,a,c}(displacement).
    F { a: f64, c: f64, displacement: Vec<f64> },
    /// K^{0;c}_t(x,y) = f_{t,ζ(y),c}(κ_t(y) − x).
    K0 { c: f64, zeta_y: f64, kappa_y: Vec<f64>, x: Vec<f64> },
    /// K^{1;c}_t(x,y) with threshold t^δ and polynomial weight t^{-N} off the core.
    K1 { c: f64, zeta_x: f64, zeta_min: f64, delta: f64, n: u32, chi_x: Vec<f64>, y: Vec<f64> },
}

pub fn bound_kernel(kind: &BoundKernel, t: f64) -> f64 {
    match kind {
        BoundKernel::F { a, c, displacement } => f_kernel(t, *a, *c, displacement),
        BoundKernel::K0 { c, zeta_y, kappa_y, x } => {
            let w: Vec<f64> = kappa_y.iter().zip(x).map(|(k, v)| k - v).collect();
            f_kernel(t, *zeta_y, *c, &w)
        }
        BoundKernel::K1 { c, zeta_x, zeta_min, delta, n, chi_x, y } => {
            let w: Vec<f64> = y.iter().zip(chi_x).map(|(a, b)| a - b).collect();
            if norm(&w) <= t.powf(*delta) {
                f_kernel(t, *zeta_x, *c, &w)
            } else {
                t.powf(-(*n as f64)) * f_kernel(t, *zeta_min, *c, &w)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::model::{Atom, Bounds, SphericalMeasure};

    fn cauchy() -> ModelSpec {
        ModelSpec {
            name: "cauchy".into(),
            dimension: 1,
            alpha: Expr::constant(1.0),
            lambda: Expr::constant(2.0 / PI),
            drift: vec![Expr::constant(0.0)],
            sigma: SphericalMeasure::symmetric_1d(),
            nu: None,
            bounds: Bounds { alpha_min: 1.0, alpha_max: 1.0, lambda_min: 2.0 / PI, lambda_max: 2.0 / PI },
            eta: 1.0,
            h_frak: 1.0,
            eps_balance: 1.0,
        }
    }

    fn one_sided(alpha: f64) -> ModelSpec {
        let mut m = cauchy();
        m.alpha = Expr::constant(alpha);
        m.lambda = Expr::constant(1.0);
        m.sigma = SphericalMeasure { atoms: vec![Atom { dir: vec![1.0], weight: 1.0 }], rotation: None };
        m.bounds = Bounds { alpha_min: alpha, alpha_max: alpha, lambda_min: 1.0, lambda_max: 1.0 };
        m
    }

    #[test]
    fn closed_form_matches_adaptive() {
        for &(alpha, sf) in &[(0.6, 0.45 / 0.6), (1.0, 0.45), (1.5, 0.3), (1.8, 0.25), (1.8, 0.2), (0.9, 0.5)] {
            let zeta = 1.0 / alpha - sf;
            for &t in &[1e-3, 0.1, 1.0] {
                for &s in &[0.3, 5.0, 60.0, -17.0, 400.0] {
                    let c = cut_exponent_atom(alpha, zeta, t, s);
                    let q = cut_exponent_atom_adaptive(alpha, zeta, t, s).unwrap();
                    assert!((c - q).norm() <= 1e-9 * q.norm().max(1e-3), "alpha {alpha} t {t} s {s}: {c} vs {q}");
                }
            }
        }
    }

    #[test]
    fn exponent_trivial_cases() {
        let m = cauchy();
        let p = NumericalParams::default();
        assert_eq!(integrated_cut_exponent(&m, &p, &[0.0], 0.5, &[0.0]).unwrap(), Complex64::new(0.0, 0.0));
        let m = one_sided(1.3);
        let a = integrated_cut_exponent(&m, &p, &[0.0], 0.4, &[2.5]).unwrap();
        let b = integrated_cut_exponent(&m, &p, &[0.0], 0.4, &[-2.5]).unwrap();
        assert!((a - b.conj()).norm() < 1e-14);
        assert!(integrated_cut_exponent(&m, &p, &[0.0], 1.5, &[1.0]).is_err());
    }

    #[test]
    fn cauchy_tail_part_by_independent_quadrature() {
        // t Re ψ(1) − Re ∫ψ^cut = ∫_0^1 ∫_{|u|>r^ζ} (1 − cos u) μ(du) dr with μ(du) = du/(π u²).
        let m = cauchy();
        let p = NumericalParams::default();
        let zeta = p.zeta(&m, 1.0);
        let lhs = 1.0 - integrated_cut_exponent(&m, &p, &[0.0], 1.0, &[1.0]).unwrap().re;
        let inner = |r: f64| {
            let lo = r.powf(zeta);
            // 2 ∫_lo^∞ (1 − cos u)/(π u²) du = (2/π)[(1 − cos lo)/lo + π/2 − Si(lo)].
            let si = quad::integrate(|u| if u == 0.0 { 1.0 } else { u.sin() / u }, 0.0, lo, 1e-15, 1e-13, 200).unwrap();
            2.0 / PI * ((1.0 - lo.cos()) / lo + PI / 2.0 - si)
        };
        let rhs = quad::integrate(inner, 0.0, 1.0, 1e-13, 1e-11, 500).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn frozen_density_mass_symmetry_and_peak() {
        let m = cauchy();
        let p = NumericalParams::default();
        let f = frozen_density(&m, &p, &[0.0], 1.0).unwrap();
        assert!((f.mass() - 1.0).abs() < TOL_MASS);
        f.check().unwrap();
        let n = f.nodes;
        for i in 1..n / 2 {
            assert!((f.values[n / 2 + i] - f.values[n / 2 - i]).abs() < 1e-8);
        }
        // Oracle: direct quadrature of (1/π) ∫_0^∞ e^{-Re C(ξ)} dξ (symmetric, real exponent).
        let zeta = p.zeta(&m, 1.0);
        let g = |xi: f64| (-cut_exponent_atom_adaptive(1.0, zeta, 1.0, xi).unwrap().re * (2.0 / PI)).exp();
        let mut oracle = 0.0;
        let mut a = 0.0;
        while a < 60.0 {
            oracle += quad::integrate(g, a, a + 1.0, 1e-14, 1e-12, 200).unwrap();
            a += 1.0;
        }
        oracle /= PI;
        let v = f.value_at(&[0.0]).unwrap();
        assert!((v - oracle).abs() < 1e-6 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn stable_cauchy_value_and_tails() {
        let m = cauchy();
        let s = stable_density(&m, &[0.0], 1.0).unwrap();
        let v = s.density.value_at(&[0.0]).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-4, "{v}");
        let half = stable_density(&m, &[0.0], 0.5).unwrap();
        let a = half.density.value_at(&[0.3]).unwrap();
        let b = half.scaled.value_at(&[0.3]).unwrap();
        assert!((a - b).abs() < 1e-10);
        for w in [2.0, 5.0, 10.0, 20.0] {
            let r = s.density.value_at(&[w]).unwrap() * (1.0 + w).powi(2);
            assert!(r > 0.2 && r < 1.0, "w {w}: {r}");
        }
    }

    #[test]
    fn zero_order_is_shifted_frozen_field() {
        let m = cauchy();
        let p = NumericalParams::default();
        let cache = ZeroOrderCache::new();
        let f = frozen_density(&m, &p, &[0.4], 0.5).unwrap();
        let (v, out) = zero_order(&m, &p, &[0.1], &[0.4], 0.5, &cache).unwrap();
        assert!(!out);
        assert!((v - f.value_at(&[0.3]).unwrap()).abs() < 1e-9);
        assert_eq!(cache.len(), 1);
        let (v, out) = zero_order(&m, &p, &[500.0], &[0.4], 0.5, &cache).unwrap();
        assert!(out && v == 0.0);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn kernel_examples() {
        assert!((f_kernel(0.25, 0.5, 1.0, &[0.0]) - 2.0).abs() < 1e-15);
        assert!((f_kernel(1.0, 0.7, 2.0, &[3.0, 4.0]) - (-10.0f64).exp()).abs() < 1e-15);
        let k1 = BoundKernel::K1 { c: 1.0, zeta_x: 0.6, zeta_min: 0.5, delta: 0.2, n: 3, chi_x: vec![0.0], y: vec![2.0] };
        assert!((bound_kernel(&k1, 0.5) - 0.5f64.powi(-3) * f_kernel(0.5, 0.5, 1.0, &[2.0])).abs() < 1e-15);
    }
}
