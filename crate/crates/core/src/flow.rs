//! Compensated and mollified drift, deterministic flows and the stable drift correction.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{norm, ModelError, ModelSpec, NumericalParams};
use crate::quad::{self, power_integral};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("time {t} outside (0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("need 0 <= s < t, got s = {s}, t = {t}")]
    Interval { s: f64, t: f64 },
    #[error("step size underflow at time {0}")]
    StepUnderflow(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// b_t(x): the drift after moving the compensator threshold to (1∧t)^{1/α(x)}.
pub fn compensated_drift(model: &ModelSpec, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    if !(t > 0.0) {
        return Err(FlowError::NonPositiveTime(t));
    }
    let mut b = model.drift_at(x)?;
    if t >= 1.0 {
        return Ok(b);
    }
    let fr = model.frozen(x)?;
    let lo = t.powf(1.0 / fr.alpha);
    let radial = power_integral(fr.alpha, lo, 1.0);
    let ups = fr.intrinsic_drift();
    for k in 0..b.len() {
        b[k] -= ups[k] * radial;
    }
    for (u, m) in model.nu_atoms(x)? {
        let r = norm(&u);
        if r > lo && r <= 1.0 {
            for k in 0..b.len() {
                b[k] -= m * u[k];
            }
        }
    }
    if let Some(q) = model.truncation() {
        // ν = -1{|u|>q} μ contributes +∫_{max(lo,q)<|u|≤1} u μ(du).
        let start = lo.max(q);
        if start < 1.0 {
            let r = power_integral(fr.alpha, start, 1.0);
            for k in 0..b.len() {
                b[k] += ups[k] * r;
            }
        }
    }
    Ok(b)
}

/// Smooth bump Z·exp(-1/(1-|x|²)) on the unit ball, normalized to unit mass.
#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    pub dim: usize,
    pub norm_const: f64,
}

fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

impl Mollifier {
    pub fn new(dim: usize) -> Mollifier {
        static Z: OnceLock<[f64; 2]> = OnceLock::new();
        let z = Z.get_or_init(|| {
            let one = quad::integrate(|x| bump(x * x), -1.0, 1.0, 1e-15, 1e-14, 2000).unwrap_or(f64::NAN);
            let two = 2.0 * std::f64::consts::PI
                * quad::integrate(|r| r * bump(r * r), 0.0, 1.0, 1e-15, 1e-14, 2000).unwrap_or(f64::NAN);
            [1.0 / one, 1.0 / two]
        });
        Mollifier { dim, norm_const: z[dim.clamp(1, 2) - 1] }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        self.norm_const * bump(v.iter().map(|a| a * a).sum())
    }

    /// w_h(v) = h^{-d} w(v/h).
    pub fn scaled(&self, h: f64, v: &[f64]) -> f64 {
        let s: Vec<f64> = v.iter().map(|a| a / h).collect();
        self.value(&s) / h.powi(self.dim as i32)
    }

    /// Tensor Gauss nodes on the unit ball with the normalized profile folded into the weights.
    fn rule(&self, n: usize) -> Vec<(Vec<f64>, f64)> {
        let (x, w) = quad::gauss_legendre(n);
        let mut out = Vec::new();
        if self.dim == 1 {
            for (a, wa) in x.iter().zip(&w) {
                out.push((vec![*a], wa * self.value(&[*a])));
            }
        } else {
            for (a, wa) in x.iter().zip(&w) {
                for (b, wb) in x.iter().zip(&w) {
                    let v = self.value(&[*a, *b]);
                    if v > 0.0 {
                        out.push((vec![*a, *b], wa * wb * v));
                    }
                }
            }
        }
        out
    }
}

/// θ(x) = α(x) + 𝔪/2.
pub fn theta(model: &ModelSpec, params: &NumericalParams, x: &[f64]) -> Result<f64, FlowError> {
    Ok(model.alpha_at(x)? + 0.5 * params.m_frak(model))
}

fn rule_cached(dim: usize, n: usize) -> &'static [(Vec<f64>, f64)] {
    static RULES: OnceLock<Vec<Vec<(Vec<f64>, f64)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        let mut v = Vec::new();
        for d in 1..=2 {
            for n in [16usize, 32, 64] {
                let m = Mollifier::new(d);
                let mut r = m.rule(n);
                let total: f64 = r.iter().map(|p| p.1).sum();
                for p in &mut r {
                    p.1 /= total;
                }
                v.push(r);
            }
        }
        v
    });
    let idx = (dim.clamp(1, 2) - 1) * 3 + match n {
        16 => 0,
        32 => 1,
        _ => 2,
    };
    &rules[idx]
}

/// B_t(x) = ∫ b_t(y) w_{t^{1/θ(x)}}(x - y) dy.
pub fn mollified_drift(model: &ModelSpec, params: &NumericalParams, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    let horizon = params.horizon;
    if !(t > 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(FlowError::OutOfRange { t, horizon });
    }
    if model.drift.iter().all(|e| e.is_constant()) && model.is_symmetric() && model.nu.is_none() {
        return Ok(model.drift_at(x)?);
    }
    let h = t.powf(1.0 / theta(model, params, x)?);
    let d = model.dimension;
    let eval = |n: usize| -> Result<Vec<f64>, FlowError> {
        let mut acc = vec![0.0; d];
        let mut y = vec![0.0; d];
        for (v, w) in rule_cached(d, n) {
            for k in 0..d {
                y[k] = x[k] - h * v[k];
            }
            let b = compensated_drift(model, &y, t)?;
            for k in 0..d {
                acc[k] += w * b[k];
            }
        }
        Ok(acc)
    };
    let mut prev = eval(16)?;
    for n in [32usize, 64] {
        let next = eval(n)?;
        let diff = norm(&crate::model::sub(&next, &prev));
        prev = next;
        if diff <= 1e-7 {
            break;
        }
    }
    Ok(prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// dχ/dt = B_t(χ).
    Forward,
    /// dκ/dt = -B_t(κ).
    Backward,
    /// dχ/ds = B_{T-s}(χ) on [0, T].
    Anchored,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSolution {
    pub direction: Direction,
    pub horizon: f64,
    /// Grading exponent g = 1/ε_B of the map u ↦ s.
    pub grading: f64,
    /// Time nodes: the graded mesh plus every accepted integrator step.
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    /// dχ/du at each node, in the graded variable.
    pub slopes: Vec<Vec<f64>>,
}

impl FlowSolution {
    fn graded(&self, s: f64) -> f64 {
        time_to_graded(self.direction, self.horizon, self.grading, s)
    }

    fn locate(&self, u: f64) -> usize {
        let us = |i: usize| self.graded(self.times[i]);
        let n = self.times.len();
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if us(mid) <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Cubic Hermite interpolation in the graded time variable; returns (χ, dχ/du).
    fn hermite(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let u = self.graded(s.clamp(0.0, self.horizon));
        if self.times.len() == 1 {
            return (self.positions[0].clone(), self.slopes[0].clone());
        }
        let k = self.locate(u);
        let (u0, u1) = (self.graded(self.times[k]), self.graded(self.times[k + 1]));
        let h = u1 - u0;
        let r = ((u - u0) / h).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * r) * (1.0 - r) * (1.0 - r),
            r * (1.0 - r) * (1.0 - r),
            r * r * (3.0 - 2.0 * r),
            r * r * (r - 1.0),
        );
        let (d00, d10, d01, d11) = (6.0 * r * r - 6.0 * r, 3.0 * r * r - 4.0 * r + 1.0, 6.0 * r - 6.0 * r * r, 3.0 * r * r - 2.0 * r);
        let (p0, p1, m0, m1) = (&self.positions[k], &self.positions[k + 1], &self.slopes[k], &self.slopes[k + 1]);
        let x = (0..p0.len()).map(|c| h00 * p0[c] + h10 * h * m0[c] + h01 * p1[c] + h11 * h * m1[c]).collect();
        let dx = (0..p0.len()).map(|c| (d00 * p0[c] + d01 * p1[c]) / h + d10 * m0[c] + d11 * m1[c]).collect();
        (x, dx)
    }

    /// Position at time s by cubic interpolation.
    pub fn at(&self, s: f64) -> Vec<f64> {
        self.hermite(s).0
    }

    /// dχ/ds of the interpolant at time s.
    pub fn velocity(&self, s: f64) -> Vec<f64> {
        let (_, dx) = self.hermite(s);
        let u = self.graded(s.clamp(0.0, self.horizon));
        let (_, ds) = graded_to_time(self.direction, self.horizon, self.grading, u);
        dx.iter().map(|v| v / ds).collect()
    }

    pub fn end(&self) -> &[f64] {
        self.positions.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn to_csv(&self) -> String {
        let d = self.positions.first().map(|p| p.len()).unwrap_or(0);
        let mut s = String::from("t");
        for k in 1..=d {
            s.push_str(&format!(",x{k}"));
        }
        s.push('\n');
        for (t, p) in self.times.iter().zip(&self.positions) {
            s.push_str(&format!("{t:.12e}"));
            for v in p {
                s.push_str(&format!(",{v:.12e}"));
            }
            s.push('\n');
        }
        s
    }
}

fn time_to_graded(dir: Direction, horizon: f64, g: f64, s: f64) -> f64 {
    match dir {
        Direction::Anchored => 1.0 - (1.0 - s / horizon).max(0.0).powf(1.0 / g),
        _ => (s / horizon).max(0.0).powf(1.0 / g),
    }
}

fn graded_to_time(dir: Direction, horizon: f64, g: f64, u: f64) -> (f64, f64) {
    // Returns (s, ds/du).
    match dir {
        Direction::Anchored => {
            let r = (1.0 - u).max(0.0);
            (horizon * (1.0 - r.powf(g)), horizon * g * r.powf(g - 1.0))
        }
        _ => (horizon * u.powf(g), horizon * g * u.powf(g - 1.0)),
    }
}

struct GradedPath {
    u: Vec<f64>,
    x: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
}

/// Adaptive RK4 with step doubling in the graded variable, forcing a node at each checkpoint.
/// `slope_scale(u)` converts a slope error in u into the tolerance units (≈ tol/residual_tol · du/ds).
fn integrate_graded<F, S>(field: F, slope_scale: S, x0: &[f64], checkpoints: &[f64], tol: f64) -> Result<GradedPath, FlowError>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>, FlowError>,
    S: Fn(f64) -> f64,
{
    let d = x0.len();
    let mut u = checkpoints[0];
    let mut x = x0.to_vec();
    let mut path = GradedPath { u: vec![u], x: vec![x.clone()], dx: vec![field(u, &x)?] };
    let mut h = (checkpoints.get(1).copied().unwrap_or(1.0) - u) / 4.0;
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(p, q)| p + c * q).collect() };
    let step = |u: f64, x: &[f64], k1: &[f64], h: f64| -> Result<Vec<f64>, FlowError> {
        let k2 = field(u + 0.5 * h, &axpy(x, k1, 0.5 * h))?;
        let k3 = field(u + 0.5 * h, &axpy(x, &k2, 0.5 * h))?;
        let k4 = field(u + h, &axpy(x, &k3, h))?;
        Ok((0..d).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
    };
    for &target in &checkpoints[1..] {
        while u < target - 1e-15 {
            let hh = h.min(target - u);
            let k1 = path.dx.last().cloned().unwrap_or_default();
            let full = step(u, &x, &k1, hh)?;
            let mid = step(u, &x, &k1, 0.5 * hh)?;
            let kmid = field(u + 0.5 * hh, &mid)?;
            let half = step(u + 0.5 * hh, &mid, &kmid, 0.5 * hh)?;
            let mut err = norm(&crate::model::sub(&full, &half)) / 15.0;
            let xn: Vec<f64> = (0..d).map(|i| half[i] + (half[i] - full[i]) / 15.0).collect();
            let kn = field(u + hh, &xn)?;
            if err <= tol {
                // Interpolation check at the step midpoint: cubic Hermite value and slope
                // against the half-step solution and the field there.
                let mut dev: f64 = 0.0;
                for i in 0..d {
                    let hv = 0.5 * (x[i] + xn[i]) + hh / 8.0 * (k1[i] - kn[i]);
                    let hs = 1.5 * (xn[i] - x[i]) / hh - 0.25 * (k1[i] + kn[i]);
                    // the difference quotient cannot resolve slopes below its rounding level
                    let floor = 8.0 * f64::EPSILON * (1.0 + x[i].abs()) / hh;
                    let slope_dev = ((hs - kmid[i]).abs() - floor).max(0.0);
                    dev = dev.max((hv - mid[i]).abs()).max(slope_dev * slope_scale(u + 0.5 * hh));
                }
                err = err.max(dev);
            }
            if err <= tol {
                x = xn;
                u = if target - (u + hh) < 1e-15 { target } else { u + hh };
                path.u.push(u);
                path.x.push(x.clone());
                path.dx.push(kn);
                let grow = if err > 0.0 { (0.9 * (tol / err).powf(0.2)).min(4.0) } else { 4.0 };
                h = hh * grow;
            } else if hh < 1e-13 {
                return Err(FlowError::StepUnderflow(u));
            } else {
                h = hh * (0.9 * (tol / err).powf(0.2)).max(0.1);
            }
        }
    }
    Ok(path)
}

/// Target for ‖dχ/ds − B_s(χ)‖ of the interpolant at step midpoints (kept below 1e-6).
const RESIDUAL_TOL: f64 = 2.5e-7;

/// Number of graded mesh intervals used by `solve_flow`.
pub const FLOW_MESH: usize = 32;

/// Solves the flow ODE on the graded mesh t_k = T (k/K)^{1/ε_B}.
pub fn solve_flow(
    model: &ModelSpec,
    params: &NumericalParams,
    seed: &[f64],
    t: f64,
    direction: Direction,
) -> Result<FlowSolution, FlowError> {
    let mesh: Vec<f64> = (0..=FLOW_MESH).map(|k| k as f64 / FLOW_MESH as f64).collect();
    solve_flow_on(model, params, seed, t, direction, &mesh, |s, x| mollified_drift(model, params, x, s))
}

/// Flow for an arbitrary time-dependent field, with nodes forced at graded points `mesh` ⊂ [0,1].
/// `field(s, x)` is the velocity at flow time s (B_s for forward/backward, B_{t-s} for anchored).
pub fn solve_flow_on<F>(
    model: &ModelSpec,
    params: &NumericalParams,
    seed: &[f64],
    t: f64,
    direction: Direction,
    mesh: &[f64],
    field: F,
) -> Result<FlowSolution, FlowError>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>, FlowError>,
{
    if !(t > 0.0) || t > params.horizon * (1.0 + 1e-12) {
        return Err(FlowError::OutOfRange { t, horizon: params.horizon });
    }
    if seed.len() != model.dimension {
        return Err(ModelError::Dimension("seed point does not match the model dimension".into()).into());
    }
    let g = 1.0 / model.eps_b();
    let sign = if direction == Direction::Backward { -1.0 } else { 1.0 };
    let rhs = |u: f64, x: &[f64]| -> Result<Vec<f64>, FlowError> {
        let (s, ds) = graded_to_time(direction, t, g, u);
        if ds == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let time = if direction == Direction::Anchored { t - s } else { s };
        if !(time > 0.0) {
            return Ok(vec![0.0; x.len()]);
        }
        let b = field(time.min(t), x)?;
        Ok(b.iter().map(|v| sign * ds * v).collect())
    };
    // Midpoint slopes must match the field to RESIDUAL_TOL in flow time.
    let scale = |u: f64| {
        let ds = graded_to_time(direction, t, g, u).1;
        // below ds ~ 1e-6 the slope carries rounding of x/du amplified by 1/ds
        if ds > 0.0 { 1e-8 / (RESIDUAL_TOL * ds.max(1e-6)) } else { 0.0 }
    };
    let path = integrate_graded(rhs, scale, seed, mesh, 1e-8)?;
    let times = path.u.iter().map(|&u| graded_to_time(direction, t, g, u).0).collect();
    Ok(FlowSolution { direction, horizon: t, grading: g, times, positions: path.x, slopes: path.dx })
}

/// W(t,s,x) = t^{-1/α}(υ/α) ∫_s^t r^{1/α-2} dr.
pub fn w_correction(model: &ModelSpec, t: f64, s: f64, x: &[f64]) -> Result<Vec<f64>, FlowError> {
    if !(0.0 <= s && s < t) {
        return Err(FlowError::Interval { s, t });
    }
    let fr = model.frozen(x)?;
    let a = fr.alpha;
    let ups = fr.intrinsic_drift();
    let integral = if s == 0.0 {
        if 1.0 / a - 1.0 > 0.0 {
            t.powf(1.0 / a - 1.0) / (1.0 / a - 1.0)
        } else {
            f64::INFINITY
        }
    } else {
        power_integral(2.0 - 1.0 / a, s, t)
    };
    let c = t.powf(-1.0 / a) / a * integral;
    Ok(ups.iter().map(|v| v * c).collect())
}

/// Fitted C in sup_x |b_t(x)| ≤ C t^{-1/2} over the given samples.
pub fn fit_drift_constant(model: &ModelSpec, points: &[Vec<f64>], times: &[f64]) -> Result<f64, FlowError> {
    let mut c: f64 = 0.0;
    for &t in times {
        for p in points {
            c = c.max(norm(&compensated_drift(model, p, t)?) * t.sqrt());
        }
    }
    Ok(c)
}

/// Residual ‖dχ/ds − v_s(χ)‖ of the interpolant at node midpoints, for the field `field`
/// given in flow time (as in `solve_flow_on`).
pub fn flow_residual<F>(sol: &FlowSolution, field: F) -> Result<f64, FlowError>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>, FlowError>,
{
    let sign = if sol.direction == Direction::Backward { -1.0 } else { 1.0 };
    let mut worst: f64 = 0.0;
    for w in sol.times.windows(2) {
        let (u0, u1) = (sol.graded(w[0]), sol.graded(w[1]));
        let (m, _) = graded_to_time(sol.direction, sol.horizon, sol.grading, 0.5 * (u0 + u1));
        let time = if sol.direction == Direction::Anchored { sol.horizon - m } else { m };
        if !(time > 0.0) {
            continue;
        }
        let f = field(time, &sol.at(m))?;
        let v = sol.velocity(m);
        let r: Vec<f64> = v.iter().zip(&f).map(|(d, b)| d - sign * b).collect();
        worst = worst.max(norm(&r));
    }
    Ok(worst)
}
