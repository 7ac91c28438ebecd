//! Monte Carlo oracle: stable increments by Chambers–Mallows–Stuck, frozen-coefficient
//! Euler paths of L, histogram densities and the renewal identity for truncated noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::frozen::{radial_window, DensityField, Provenance};
use crate::grid::Grid;
use crate::model::{dot, frozen_exponent, norm, radial_exponent_closed, Atom, ModelError, ModelSpec, NumericalParams};
use crate::parametrix::lattice::{sinc_factor, Lattice};
use crate::parametrix::{neumann_run, ParametrixError};
use crate::quad::{gauss_legendre_on, power_integral};

#[derive(Debug, Error)]
pub enum McError {
    #[error("stability index {0} outside (0, 2)")]
    Alpha(f64),
    #[error("step {h} too large for ν thinning: acceptance probability {p} > 1")]
    Thinning { h: f64, p: f64 },
    #[error("step h = {h} must lie in (0, t], t = {t}")]
    Step { h: f64, t: f64 },
    #[error("need at least one path")]
    NoPaths,
    #[error("empty ensemble")]
    Empty,
    #[error("grid does not cover the sample: {0}")]
    Coverage(String),
    #[error("missing tail split: {0}")]
    MissingTailSplit(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Parametrix(#[from] ParametrixError),
}

/// Jumps shorter than this fraction of the truncation level are replaced by a
/// Gaussian with the same covariance when μ is cut at q.
pub const SMALL_JUMP_FRACTION: f64 = 0.02;

/// S_α(σ, β, m) along `dir` at unit time: scale is σ^α for α ≠ 1 and σ for α = 1.
#[derive(Debug, Clone)]
struct Component {
    dir: Vec<f64>,
    scale: f64,
    beta: f64,
    shift: f64,
}

/// Stable law with Lévy measure λ·Σ w_i δ_{ℓ_i}(dℓ) ρ^{-1-α}dρ, compensated on {|u| ≤ 1}.
///
/// Atoms in opposite directions are merged into one skewed one-dimensional component.
#[derive(Debug, Clone)]
pub struct StableLaw {
    pub alpha: f64,
    dim: usize,
    components: Vec<Component>,
}

impl StableLaw {
    pub fn new(alpha: f64, lambda: f64, atoms: &[Atom]) -> Result<StableLaw, McError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(McError::Alpha(alpha));
        }
        let dim = atoms.first().map(|a| a.dir.len()).ok_or(McError::Unsupported("no atoms".into()))?;
        let mut used = vec![false; atoms.len()];
        let mut components = Vec::new();
        for i in 0..atoms.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let partner = (i + 1..atoms.len())
                .find(|&j| !used[j] && atoms[j].dir.iter().zip(&atoms[i].dir).all(|(a, b)| (a + b).abs() < 1e-12));
            let c_plus = lambda * atoms[i].weight;
            let c_minus = partner.map_or(0.0, |j| {
                used[j] = true;
                lambda * atoms[j].weight
            });
            if c_plus + c_minus <= 0.0 {
                continue;
            }
            let psi1 = radial_exponent_closed(alpha, 1.0, 1.0) * c_plus + radial_exponent_closed(alpha, -1.0, 1.0) * c_minus;
            let beta = (c_plus - c_minus) / (c_plus + c_minus);
            let shift = if (alpha - 1.0).abs() < 1e-9 {
                -psi1.im
            } else {
                -psi1.im - psi1.re * beta * (PI * alpha / 2.0).tan()
            };
            components.push(Component { dir: atoms[i].dir.clone(), scale: psi1.re, beta, shift });
        }
        Ok(StableLaw { alpha, dim, components })
    }

    pub fn from_model(model: &ModelSpec, x: &[f64]) -> Result<StableLaw, McError> {
        let fr = model.frozen(x)?;
        StableLaw::new(fr.alpha, fr.lambda, &fr.atoms)
    }

    /// Increment over time h.
    pub fn sample<R: Rng>(&self, h: f64, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let unit_alpha = (self.alpha - 1.0).abs() < 1e-9;
        for c in &self.components {
            let y = if unit_alpha {
                let sigma = h * c.scale;
                sigma * cms_unit(1.0, c.beta, rng) + 2.0 / PI * c.beta * sigma * sigma.ln() + h * c.shift
            } else {
                (h * c.scale).powf(1.0 / self.alpha) * cms_unit(self.alpha, c.beta, rng) + h * c.shift
            };
            for (o, d) in out.iter_mut().zip(&c.dir) {
                *o += y * d;
            }
        }
        out
    }
}

/// Standard S_α(1, β, 0) variate (Weron's form of Chambers–Mallows–Stuck).
fn cms_unit<R: Rng>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.gen::<f64>() - 0.5);
    let w: f64 = rng.sample(Exp1);
    if (alpha - 1.0).abs() < 1e-9 {
        let a = PI / 2.0 + beta * v;
        return 2.0 / PI * (a * v.tan() - beta * ((PI / 2.0) * w * v.cos() / a).ln());
    }
    let tan = (PI * alpha / 2.0).tan();
    let b = (beta * tan).atan() / alpha;
    let s = (1.0 + beta * beta * tan * tan).powf(0.5 / alpha);
    let av = alpha * (v + b);
    s * av.sin() / v.cos().powf(1.0 / alpha) * ((v - av).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Law of the μ-jumps of length at most q: compound Poisson on (εq, q], a Gaussian for
/// the jumps below εq, and the compensator drift of the jumps it keeps.
#[derive(Debug, Clone)]
struct TruncatedLaw {
    alpha: f64,
    eps: f64,
    q: f64,
    dirs: Vec<Vec<f64>>,
    rates: Vec<f64>,
    total_rate: f64,
    gauss_var: Vec<f64>,
    drift: Vec<f64>,
}

impl TruncatedLaw {
    fn new(alpha: f64, lambda: f64, atoms: &[Atom], q: f64) -> Result<TruncatedLaw, McError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(McError::Alpha(alpha));
        }
        let eps = SMALL_JUMP_FRACTION * q;
        let dim = atoms[0].dir.len();
        let band = (eps.powf(-alpha) - q.powf(-alpha)) / alpha;
        let comp = if eps < q.min(1.0) { power_integral(alpha, eps, q.min(1.0)) } else { 0.0 };
        let mut drift = vec![0.0; dim];
        let (mut dirs, mut rates, mut gauss_var) = (Vec::new(), Vec::new(), Vec::new());
        for a in atoms {
            let c = lambda * a.weight;
            for k in 0..dim {
                drift[k] -= c * a.dir[k] * comp;
            }
            dirs.push(a.dir.clone());
            rates.push(c * band);
            gauss_var.push(c * eps.powf(2.0 - alpha) / (2.0 - alpha));
        }
        let total_rate = rates.iter().sum();
        Ok(TruncatedLaw { alpha, eps, q, dirs, rates, total_rate, gauss_var, drift })
    }

    fn sample<R: Rng>(&self, h: f64, rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = self.drift.iter().map(|v| v * h).collect();
        for (d, var) in self.dirs.iter().zip(&self.gauss_var) {
            let g: f64 = rng.sample(StandardNormal);
            let g = g * (var * h).sqrt();
            for (o, u) in out.iter_mut().zip(d) {
                *o += g * u;
            }
        }
        if self.total_rate > 0.0 {
            let count = Poisson::new(self.total_rate * h).map(|p| rng.sample(p) as usize).unwrap_or(0);
            let (lo, hi) = (self.eps.powf(-self.alpha), self.q.powf(-self.alpha));
            for _ in 0..count {
                let mut pick = rng.gen::<f64>() * self.total_rate;
                let mut j = 0;
                while j + 1 < self.rates.len() && pick >= self.rates[j] {
                    pick -= self.rates[j];
                    j += 1;
                }
                let rho = (lo - rng.gen::<f64>() * (lo - hi)).powf(-1.0 / self.alpha);
                for (o, u) in out.iter_mut().zip(&self.dirs[j]) {
                    *o += rho * u;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Noise {
    Stable(StableLaw),
    Truncated(TruncatedLaw),
}

impl Noise {
    fn at(model: &ModelSpec, x: &[f64]) -> Result<Noise, McError> {
        let fr = model.frozen(x)?;
        match model.truncation() {
            None => Ok(Noise::Stable(StableLaw::new(fr.alpha, fr.lambda, &fr.atoms)?)),
            Some(q) => Ok(Noise::Truncated(TruncatedLaw::new(fr.alpha, fr.lambda, &fr.atoms, q)?)),
        }
    }

    fn sample<R: Rng>(&self, h: f64, rng: &mut R) -> Vec<f64> {
        match self {
            Noise::Stable(s) => s.sample(h, rng),
            Noise::Truncated(t) => t.sample(h, rng),
        }
    }
}

/// Terminal positions of n simulated paths, with positions at optional earlier checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub model: String,
    pub dim: usize,
    pub x0: Vec<f64>,
    pub t: f64,
    pub h: f64,
    pub seed: u64,
    pub scheme: String,
    pub terminal: Vec<Vec<f64>>,
    /// Checkpoint times strictly before `t`.
    pub checkpoints: Vec<f64>,
    /// `skeletons[k][i]` is the position of path i at `checkpoints[k]`.
    pub skeletons: Vec<Vec<Vec<f64>>>,
}

pub const SCHEME: &str = "euler-frozen";

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal.is_empty()
    }

    /// First coordinates of the terminal positions.
    pub fn terminal_1d(&self) -> Vec<f64> {
        self.terminal.iter().map(|p| p[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let head: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        s.push_str(&head.join(","));
        s.push('\n');
        for p in &self.terminal {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.12e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        let v = serde_json::json!({
            "model": self.model,
            "dimension": self.dim,
            "x0": self.x0,
            "t": self.t,
            "h": self.h,
            "n": self.len(),
            "seed": self.seed,
            "scheme": self.scheme,
            "checkpoints": self.checkpoints,
        });
        serde_json::to_string_pretty(&v).unwrap_or_default()
    }
}

/// n i.i.d. samples of the stable law frozen at one state.
pub fn sample_stable(alpha: f64, atoms: &[Atom], lambda: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, McError> {
    let law = StableLaw::new(alpha, lambda, atoms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| law.sample(1.0, &mut rng)).collect())
}

/// Paths from x0 up to time t with step at most h.
pub fn simulate_paths(model: &ModelSpec, x0: &[f64], t: f64, h: f64, n: usize, seed: u64) -> Result<PathEnsemble, McError> {
    simulate_checkpoints(model, x0, &[t], h, n, seed)
}

/// As `simulate_paths`, also recording every path at the increasing `times` before the last.
pub fn simulate_checkpoints(
    model: &ModelSpec,
    x0: &[f64],
    times: &[f64],
    h: f64,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble, McError> {
    model.check()?;
    if x0.len() != model.dimension {
        return Err(ModelError::Dimension("start point does not match the model dimension".into()).into());
    }
    let t = *times.last().ok_or(McError::Step { h, t: 0.0 })?;
    if !(t > 0.0 && h > 0.0 && h <= t) || times.windows(2).any(|w| !(w[1] > w[0])) || !(times[0] > 0.0) {
        return Err(McError::Step { h, t });
    }
    if n == 0 {
        return Err(McError::NoPaths);
    }
    if model.nu_atoms(x0)?.iter().any(|(_, m)| *m < 0.0) {
        return Err(McError::Unsupported(
            "negative ν atoms are not dominated by the absolutely continuous μ and cannot be suppressed".into(),
        ));
    }
    // Steps per interval between checkpoints.
    let mut plan = Vec::new();
    let mut prev = 0.0;
    for &s in times {
        let k = ((s - prev) / h * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        plan.push((k, (s - prev) / k as f64));
        prev = s;
    }
    let constant_noise = model.alpha.is_constant() && model.lambda.is_constant() && model.sigma.rotation.is_none();
    let fixed = if constant_noise { Some(Noise::at(model, x0)?) } else { None };
    let paths: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x = x0.to_vec();
            let mut record = Vec::with_capacity(plan.len());
            for &(k, dt) in &plan {
                for _ in 0..k {
                    euler_step(model, fixed.as_ref(), &mut x, dt, &mut rng)?;
                }
                record.push(x.clone());
            }
            Ok(record)
        })
        .collect::<Result<_, McError>>()?;
    let m = times.len();
    let mut skeletons = vec![Vec::with_capacity(n); m - 1];
    let mut terminal = Vec::with_capacity(n);
    for mut rec in paths {
        terminal.push(rec.pop().unwrap_or_default());
        for (k, p) in rec.into_iter().enumerate() {
            skeletons[k].push(p);
        }
    }
    Ok(PathEnsemble {
        model: model.name.clone(),
        dim: model.dimension,
        x0: x0.to_vec(),
        t,
        h,
        seed,
        scheme: SCHEME.into(),
        terminal,
        checkpoints: times[..m - 1].to_vec(),
        skeletons,
    })
}

fn euler_step(model: &ModelSpec, fixed: Option<&Noise>, x: &mut Vec<f64>, h: f64, rng: &mut ChaCha8Rng) -> Result<(), McError> {
    let b = model.drift_at(x)?;
    let inc = match fixed {
        Some(noise) => noise.sample(h, rng),
        None => Noise::at(model, x)?.sample(h, rng),
    };
    let atoms = model.nu_atoms(x)?;
    let mut next: Vec<f64> = (0..x.len()).map(|k| x[k] + b[k] * h + inc[k]).collect();
    if !atoms.is_empty() {
        let mut rate = 0.0;
        for (u, m) in &atoms {
            if *m < 0.0 {
                return Err(McError::Unsupported(format!("negative ν atom mass {m} at {x:?}")));
            }
            rate += m;
            if norm(u) <= 1.0 {
                for k in 0..x.len() {
                    next[k] -= h * m * u[k];
                }
            }
        }
        if rate * h > 1.0 {
            return Err(McError::Thinning { h, p: rate * h });
        }
        let mut pick = rng.gen::<f64>();
        for (u, m) in &atoms {
            pick -= m * h;
            if pick < 0.0 {
                for k in 0..x.len() {
                    next[k] += u[k];
                }
                break;
            }
        }
    }
    *x = next;
    Ok(())
}

/// Bin counts of one-dimensional samples on [lo, hi) with `bins` equal cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub outside: usize,
    pub n: usize,
}

impl Histogram {
    pub fn new(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
        let mut counts = vec![0; bins];
        let mut outside = 0;
        let w = (hi - lo) / bins as f64;
        for &v in samples {
            let k = ((v - lo) / w).floor();
            if k >= 0.0 && (k as usize) < bins {
                counts[k as usize] += 1;
            } else {
                outside += 1;
            }
        }
        Histogram { lo, hi, counts, outside, n: samples.len() }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|k| self.lo + k as f64 * self.width()).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn outside_probability(&self) -> f64 {
        self.outside as f64 / self.n as f64
    }

    /// ½Σ|P_b − Q_b| + ½|P_out − Q_out| against bin probabilities `q` of another law.
    pub fn total_variation(&self, q: &[f64]) -> f64 {
        let p = self.probabilities();
        let inside: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
        let q_out = 1.0 - q.iter().sum::<f64>();
        0.5 * inside + 0.5 * (self.outside_probability() - q_out).abs()
    }
}

/// Probabilities of the bins between `edges` for a density given by cell values on
/// nodes `y` with spacing `dx` (each cell's mass spread uniformly over the cell).
pub fn bin_probabilities(y: &[f64], values: &[f64], dx: f64, edges: &[f64]) -> Vec<f64> {
    let cdf = |x: f64| -> f64 {
        let mut acc = 0.0;
        for (c, v) in y.iter().zip(values) {
            let (a, b) = (c - 0.5 * dx, c + 0.5 * dx);
            if x >= b {
                acc += v * dx;
            } else if x > a {
                acc += v * (x - a);
            }
        }
        acc
    };
    let c: Vec<f64> = edges.iter().map(|&e| cdf(e)).collect();
    c.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Quantile of unsorted data (nearest rank).
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = data.iter().cloned().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)]
}

/// Mass of [c − r, c + r] divided by 2r, with its binomial standard error.
pub fn bin_density(samples: &[f64], centre: f64, r: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let k = samples.iter().filter(|v| (*v - centre).abs() <= r).count() as f64;
    let p = k / n;
    (p / (2.0 * r), (p * (1.0 - p) / n).sqrt() / (2.0 * r))
}

/// Histogram density with one cell centred on each grid node.
pub fn estimate_density(ens: &PathEnsemble, grid: &Grid) -> Result<DensityField, McError> {
    if ens.is_empty() {
        return Err(McError::Empty);
    }
    histogram_field(&ens.terminal, grid, true, &ens.x0, ens.t)
}

fn histogram_field(points: &[Vec<f64>], grid: &Grid, check_cover: bool, x0: &[f64], t: f64) -> Result<DensityField, McError> {
    let d = grid.dim();
    let ax = grid.axes[0];
    if grid.axes.iter().any(|a| *a != ax) {
        return Err(McError::Unsupported("histogram grids need identical axes".into()));
    }
    if points[0].len() != d {
        return Err(ModelError::Dimension("grid dimension does not match the ensemble".into()).into());
    }
    let dx = ax.step();
    let (lo, hi) = (ax.lo - 0.5 * dx, ax.node(ax.n - 1) + 0.5 * dx);
    if check_cover {
        for k in 0..d {
            let c: Vec<f64> = points.iter().map(|p| p[k]).collect();
            let (a, b) = (quantile(&c, 0.005), quantile(&c, 0.995));
            if a < lo || b > hi {
                return Err(McError::Coverage(format!("axis {k}: quantile box [{a}, {b}] vs cells [{lo}, {hi}]")));
            }
        }
    }
    let mut values = vec![0.0; grid.len()];
    let w = 1.0 / (points.len() as f64 * dx.powi(d as i32));
    for p in points {
        let mut idx = 0;
        let mut stride = 1;
        let mut inside = true;
        for v in p {
            let j = ((v - ax.lo) / dx).round();
            if !(j >= 0.0 && j < ax.n as f64) {
                inside = false;
                break;
            }
            idx += j as usize * stride;
            stride *= ax.n;
        }
        if inside {
            values[idx] += w;
        }
    }
    Ok(DensityField {
        dim: d,
        nodes: ax.n,
        dx,
        lo: ax.lo,
        values,
        provenance: Provenance { kind: "monte-carlo".into(), z: x0.to_vec(), t, exponent: SCHEME.into() },
        truncation: None,
    })
}

/// Settings of the renewal check; `mass_times` feed the near-diagonal mass bound.
#[derive(Debug, Clone)]
pub struct RenewalOptions {
    pub t: f64,
    pub paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub time_nodes: usize,
    pub mass_times: Vec<f64>,
}

impl Default for RenewalOptions {
    fn default() -> RenewalOptions {
        RenewalOptions { t: 0.5, paths: 100_000, seed: 7, steps: 200, time_nodes: 12, mass_times: vec![0.05, 0.1] }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RenewalReport {
    pub t: f64,
    pub truncation: Option<f64>,
    /// μ(|u| > q), the rate of tail jumps.
    pub tail_rate: f64,
    pub l1: f64,
    pub sup: f64,
    pub lhs_mass: f64,
    pub rhs_mass: f64,
    /// (t, ∫_{|y−x|≤t^{1/α}} p_t(x,y)dy) from the start point x = 0.
    pub near_diagonal: Vec<(f64, f64)>,
    pub mass_constant: f64,
    pub y: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Both sides of p_t = e^{−λt}p_t^trunc + ∫_0^t e^{−λs}(p_{t−s} ∗ μ_tail ∗ p_s^trunc) ds
/// from x = 0, λ = μ(|u| > q).
///
/// The left side is the parametrix density of the untruncated model; on the right
/// p^trunc is a Monte Carlo histogram and p_{t−s} ∗ μ_tail is inverted from its
/// Fourier transform, which needs constant coefficients in d = 1.
pub fn renewal_check(
    model: &ModelSpec,
    params: &NumericalParams,
    grid: &Grid,
    opts: &RenewalOptions,
) -> Result<RenewalReport, McError> {
    model.check()?;
    if model.dimension != 1 || !model.is_translation_invariant() {
        return Err(McError::Unsupported("the renewal check needs a constant-coefficient model in d = 1".into()));
    }
    if model.nu.as_ref().is_some_and(|nu| !nu.atoms_expr.is_empty()) {
        return Err(McError::MissingTailSplit("ν has atoms besides the removal of long μ-jumps".into()));
    }
    let t = opts.t;
    let mut full = model.clone();
    full.nu = None;
    let mut times: Vec<f64> = opts.mass_times.iter().cloned().filter(|&s| s < t).collect();
    times.push(t);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let x0 = vec![0.0];
    let run = neumann_run(&full, params, &times, &[x0.clone()], grid)?;
    let y: Vec<f64> = run.density.y_points.iter().map(|p| p[0]).collect();
    let dx = grid.cell_volume();
    let fr = model.frozen(&x0)?;
    let m_t = times.len() - 1;
    let lhs = run.density.row(m_t, 0).to_vec();
    let mut near_diagonal = Vec::new();
    for (m, &s) in times.iter().enumerate() {
        if opts.mass_times.iter().any(|&v| (v - s).abs() < 1e-12) {
            let r = s.powf(1.0 / fr.alpha);
            let mass: f64 = run.density.row(m, 0).iter().zip(&y).filter(|(_, v)| v.abs() <= r).map(|(p, _)| p * dx).sum();
            near_diagonal.push((s, mass));
        }
    }
    let mass_constant = near_diagonal.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);

    let (rhs, tail_rate) = match model.truncation() {
        None => (lhs.clone(), 0.0),
        Some(q) => {
            let rate = fr.mu_tail_mass(q);
            let (nodes, weights) = gauss_legendre_on(opts.time_nodes, 0.0, t);
            let mut order: Vec<usize> = (0..nodes.len()).collect();
            order.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
            let (nodes, weights): (Vec<f64>, Vec<f64>) = order.iter().map(|&k| (nodes[k], weights[k])).unzip();
            let mut check: Vec<f64> = nodes.clone();
            check.push(t);
            let ens = simulate_checkpoints(model, &x0, &check, t / opts.steps as f64, opts.paths, opts.seed)?;
            let hist = |pts: &[Vec<f64>]| histogram_field(pts, grid, false, &x0, t).map(|f| f.values);
            let mut rhs: Vec<f64> = hist(&ens.terminal)?.iter().map(|v| v * (-rate * t).exp()).collect();
            let b = model.drift_at(&x0)?[0];
            let n = y.len();
            let lat = Lattice::new(1, 2 * n, dx);
            for (k, (&s, &w)) in nodes.iter().zip(&weights).enumerate() {
                let h_s = hist(&ens.skeletons[k])?;
                let kernel = tail_kernel(&lat, &fr, b, q, t - s)?;
                let f = w * (-rate * s).exp() * dx;
                for j in 0..n {
                    let mut acc = 0.0;
                    for (i, hv) in h_s.iter().enumerate() {
                        if *hv != 0.0 {
                            acc += hv * kernel[n + j - i];
                        }
                    }
                    rhs[j] += f * acc;
                }
            }
            (rhs, rate)
        }
    };
    let l1 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).sum::<f64>() * dx;
    let sup = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(RenewalReport {
        t,
        truncation: model.truncation(),
        tail_rate,
        l1,
        sup,
        lhs_mass: lhs.iter().sum::<f64>() * dx,
        rhs_mass: rhs.iter().sum::<f64>() * dx,
        near_diagonal,
        mass_constant,
        y,
        lhs,
        rhs,
    })
}

/// Cell averages of p_r ∗ μ_tail on the lattice offsets (k − N/2)Δ.
fn tail_kernel(lat: &Lattice, fr: &crate::model::Frozen, b: f64, q: f64, r: f64) -> Result<Vec<f64>, McError> {
    let a = q.min(1.0);
    let mut spec = Vec::with_capacity(lat.total());
    for l in 0..lat.total() {
        let xi = lat.frequency(l)[0];
        let mut tail = Complex64::new(0.0, 0.0);
        for at in &fr.atoms {
            let s = xi * at.dir[0];
            let win = radial_exponent_closed(fr.alpha, s, a) - radial_window(fr.alpha, s, a, q);
            tail += (Complex64::new(q.powf(-fr.alpha) / fr.alpha, 0.0) - win) * (fr.lambda * at.weight);
        }
        let psi = frozen_exponent(fr, &[xi])? - Complex64::i() * xi * b;
        spec.push(tail * (-psi * r).exp() * sinc_factor(&[xi], lat.dx));
    }
    Ok(lat.invert(&mut spec))
}

/// Empirical characteristic function of samples at ξ.
pub fn empirical_cf(samples: &[Vec<f64>], xi: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for p in samples {
        acc += Complex64::from_polar(1.0, dot(xi, p));
    }
    acc / samples.len() as f64
}
