//! Fubini evaluation of the remainder-term conditions
//! ∫ t^{-d/α} N(x, {u : |u| ≥ threshold, |v − x − u| ≤ t^{1/α}}) dx, normalized by the
//! volume of the unit ball.
//!
//! Each μ-atom is integrated in coordinates along its direction: x = v − pℓ − sℓ⊥, so
//! the admissible jump lengths form the chord p ± √(r² − s²) and its μ-mass is closed form.

use serde::Serialize;

use super::{fit_line, ParametrixError};
use crate::model::{norm, ModelSpec};
use crate::quad::{gauss_legendre_on, integrate};

/// Which threshold and scale enter the condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConditionKind {
    /// Threshold t^{1/α(x) − 𝔮}, scale t^{1/α(x)} with the local index.
    ShiftedThreshold { q_frak: f64 },
    /// Threshold and scale t^{1/α} for a free index α.
    ScaleThreshold { alpha: f64 },
    /// Threshold t^𝔯, scale t^{1/α}.
    PowerThreshold { r_frak: f64, alpha: f64 },
}

impl ConditionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConditionKind::ShiftedThreshold { .. } => "shifted-threshold",
            ConditionKind::ScaleThreshold { .. } => "scale-threshold",
            ConditionKind::PowerThreshold { .. } => "power-threshold",
        }
    }

    /// (threshold, ball radius, t^{-d/α}) at a state with index `alpha_x`.
    fn at(&self, t: f64, alpha_x: f64, d: usize) -> (f64, f64, f64) {
        let d = d as f64;
        match *self {
            ConditionKind::ShiftedThreshold { q_frak } => {
                (t.powf(1.0 / alpha_x - q_frak), t.powf(1.0 / alpha_x), t.powf(-d / alpha_x))
            }
            ConditionKind::ScaleThreshold { alpha } => (t.powf(1.0 / alpha), t.powf(1.0 / alpha), t.powf(-d / alpha)),
            ConditionKind::PowerThreshold { r_frak, alpha } => (t.powf(r_frak), t.powf(1.0 / alpha), t.powf(-d / alpha)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionSweep {
    pub kind: ConditionKind,
    pub v: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Fitted power of t (log-log slope) across the sweep.
    pub exponent: Option<f64>,
}

/// Half window of the x-integral for perturbation atoms.
pub const ATOM_WINDOW: f64 = 50.0;
const PERP_NODES: usize = 24;

fn quad(f: impl FnMut(f64) -> f64, a: f64, b: f64, what: &'static str) -> Result<f64, ParametrixError> {
    integrate(f, a, b, 1e-12, 1e-8, 4000).map_err(|source| ParametrixError::Term { term: what, source })
}

/// ∫_a^b ρ^{-1-α} dρ.
fn radial_mass(alpha: f64, a: f64, b: f64) -> f64 {
    if b > a {
        (a.powf(-alpha) - b.powf(-alpha)) / alpha
    } else {
        0.0
    }
}

/// Condition integral at one time.
pub fn condition_integral(model: &ModelSpec, kind: ConditionKind, t: f64, v: &[f64]) -> Result<f64, ParametrixError> {
    model.check()?;
    let d = model.dimension;
    if v.len() != d {
        return Err(ParametrixError::Mesh("v does not match the model dimension".into()));
    }
    if !(t > 0.0) {
        return Err(ParametrixError::Mesh("t must be positive".into()));
    }
    if model.sigma.rotation.is_some() {
        return Err(ParametrixError::Unsupported("state-dependent atom directions".into()));
    }
    let has_atoms = model.nu.as_ref().is_some_and(|nu| !nu.atoms_expr.is_empty());
    if has_atoms && d != 1 {
        return Err(ParametrixError::Unsupported("perturbation atoms are supported in d = 1 only".into()));
    }
    let q_cut = model.truncation().unwrap_or(f64::INFINITY);
    let ball = if d == 1 { 2.0 } else { std::f64::consts::PI };
    let (amin, amax) = (model.bounds.alpha_min, model.bounds.alpha_max);
    // widest ball radius over the index range (t < 1 or t ≥ 1)
    let r_cap = [amin, amax].iter().map(|&a| kind.at(t, a, d).1).fold(0.0, f64::max);
    let thr_lo = [amin, amax].iter().map(|&a| kind.at(t, a, d).0).fold(f64::INFINITY, f64::min);

    let mut total = 0.0;
    for (i, atom) in model.sigma.atoms.iter().enumerate() {
        if atom.weight == 0.0 {
            continue;
        }
        let dir = atom.dir.clone();
        let perp: Vec<f64> = if d == 2 { vec![-dir[1], dir[0]] } else { vec![] };
        // s = r_cap·sin θ removes the square-root edge of the chord
        let (thetas, tw) = if d == 2 { gauss_legendre_on(PERP_NODES, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2) } else { (vec![0.0], vec![1.0]) };
        for (&th, &w_th) in thetas.iter().zip(&tw) {
            let (s, jac) = if d == 2 { (r_cap * th.sin(), r_cap * th.cos()) } else { (0.0, 1.0) };
            let mut err = None;
            let mut along = |p: f64| -> f64 {
                let x: Vec<f64> = (0..d).map(|k| v[k] - p * dir[k] - if d == 2 { s * perp[k] } else { 0.0 }).collect();
                let fr = match model.frozen(&x) {
                    Ok(f) => f,
                    Err(e) => {
                        err = Some(e);
                        return 0.0;
                    }
                };
                let (thr, r, scale) = kind.at(t, fr.alpha, d);
                if s.abs() > r {
                    return 0.0;
                }
                let half = (r * r - s * s).sqrt();
                let a = (p - half).max(thr).max(0.0);
                let b = (p + half).min(q_cut);
                scale * fr.lambda * fr.atoms[i].weight * radial_mass(fr.alpha, a.max(1e-300), b)
            };
            let lo = thr_lo - r_cap;
            let knee = thr_lo + r_cap;
            let far = 10.0 * knee.max(1.0);
            let mut acc = quad(&mut along, lo, knee, "condition chord")?;
            acc += quad(&mut along, knee, far, "condition chord")?;
            // p = far / u on (0, 1]
            acc += quad(|u| if u <= 0.0 { 0.0 } else { along(far / u) * far / (u * u) }, 0.0, 1.0, "condition tail")?;
            if let Some(e) = err {
                return Err(e.into());
            }
            total += w_th * jac * acc;
        }
    }

    if has_atoms {
        let mut err = None;
        let atoms_part = |x0: f64| -> f64 {
            let x = [x0];
            let (fr, atoms) = match (model.frozen(&x), model.nu_atoms(&x)) {
                (Ok(f), Ok(a)) => (f, a),
                (Err(e), _) | (_, Err(e)) => {
                    err = Some(e);
                    return 0.0;
                }
            };
            let (thr, r, scale) = kind.at(t, fr.alpha, 1);
            atoms
                .iter()
                .filter(|(u, _)| norm(u) >= thr && (v[0] - x0 - u[0]).abs() <= r)
                .map(|(_, m)| scale * m)
                .sum()
        };
        let mut f = atoms_part;
        let pieces = 400;
        let h = 2.0 * ATOM_WINDOW / pieces as f64;
        let mut acc = 0.0;
        for k in 0..pieces {
            let a = v[0] - ATOM_WINDOW + k as f64 * h;
            acc += quad(&mut f, a, a + h, "condition atoms")?;
        }
        if let Some(e) = err {
            return Err(e.into());
        }
        total += acc;
    }
    Ok(total / ball)
}

/// Values over a t-sweep and their fitted power of t.
pub fn condition_integrals(model: &ModelSpec, kind: ConditionKind, times: &[f64], v: &[f64]) -> Result<ConditionSweep, ParametrixError> {
    let values = times.iter().map(|&t| condition_integral(model, kind, t, v)).collect::<Result<Vec<f64>, _>>()?;
    let pts: Vec<(f64, f64)> = times.iter().zip(&values).filter(|(_, y)| **y > 0.0).map(|(t, y)| (t.ln(), y.ln())).collect();
    Ok(ConditionSweep { kind, v: v.to_vec(), times: times.to_vec(), values, exponent: fit_line(&pts).map(|f| f.slope) })
}

/// Default sweep t = 2^{-k}, k = 1..8.
pub fn default_times() -> Vec<f64> {
    (1..=8).rev().map(|k| 0.5f64.powi(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::builtin;

    #[test]
    fn unit_threshold_at_unit_time_gives_the_tail_mass() {
        let model = builtin("const-alpha").unwrap();
        let want = 1.0 / 1.5;
        for kind in [ConditionKind::ScaleThreshold { alpha: 1.5 }, ConditionKind::PowerThreshold { r_frak: 0.3, alpha: 1.5 }] {
            let got = condition_integral(&model, kind, 1.0, &[0.4]).unwrap();
            assert!((got - want).abs() < 1e-6, "{}: {got}", kind.name());
        }
    }

    #[test]
    fn planar_tail_mass_matches_too() {
        let mut model = builtin("rotation-sde").unwrap();
        model.sigma.rotation = None;
        let got = condition_integral(&model, ConditionKind::ScaleThreshold { alpha: 1.5 }, 1.0, &[0.2, -0.1]).unwrap();
        let want = 4.0 / 1.5;
        assert!((got - want).abs() < 1e-3 * want, "{got} vs {want}");
    }

    #[test]
    fn single_reference_measure_meets_the_scale_condition() {
        let model = builtin("const-alpha").unwrap();
        let sweep = condition_integrals(&model, ConditionKind::ScaleThreshold { alpha: 1.5 }, &default_times(), &[0.0]).unwrap();
        let bound = -model.bounds.alpha_max / model.bounds.alpha_min - 0.1;
        assert!(sweep.exponent.unwrap() >= bound, "{:?}", sweep);
    }

    #[test]
    fn dominated_variable_index_meets_the_power_condition() {
        let model = builtin("var-alpha-1d").unwrap();
        let r_frak = 0.8 / model.bounds.alpha_max;
        for alpha in [model.bounds.alpha_min, model.bounds.alpha_max] {
            let sweep = condition_integrals(&model, ConditionKind::PowerThreshold { r_frak, alpha }, &default_times(), &[0.5]).unwrap();
            assert!(sweep.exponent.unwrap() > -1.0, "{:?}", sweep);
        }
        let sweep = condition_integrals(&model, ConditionKind::ShiftedThreshold { q_frak: 0.1 }, &default_times(), &[0.5]).unwrap();
        assert!(sweep.exponent.unwrap() > -1.0, "{:?}", sweep);
    }

    #[test]
    fn resetting_atoms_accumulate_at_the_origin() {
        // jumps −x land on 0 from every x, so the integral near v = 0 grows with the window
        let model = builtin("resetting").unwrap();
        let kind = ConditionKind::PowerThreshold { r_frak: 0.5, alpha: 0.8 };
        let at_zero = condition_integral(&model, kind, 0.1, &[0.0]).unwrap();
        let away = condition_integral(&model, kind, 0.1, &[3.0]).unwrap();
        assert!(at_zero > 5.0 * away, "{at_zero} vs {away}");
    }

    #[test]
    fn rotations_are_unsupported() {
        let model = builtin("rotation-sde").unwrap();
        let err = condition_integral(&model, ConditionKind::ScaleThreshold { alpha: 1.5 }, 0.5, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, ParametrixError::Unsupported(_)));
    }
}
