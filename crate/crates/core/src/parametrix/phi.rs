//! Pointwise error kernel Φ_t(x,y) = A1 + … + A6 + B1 + B2 from the integro-differential
//! form of L and L^{t,y,cut} applied to p⁰_t(·,y).
//!
//! This is the per-term oracle: slow (radial quadrature per pair) but every piece is
//! separately inspectable. The series itself uses the bulk and Fourier assemblies.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use super::ParametrixError;
use crate::flow::{compensated_drift, mollified_drift, solve_flow, Direction};
use crate::frozen::{choose_grid, frozen_field, sigma0, cut_half_width, FieldOptions, SpectralField};
use crate::model::{dot, Atom, Frozen, ModelSpec, NumericalParams};
use crate::quad::{integrate, power_integral, QuadError};

/// The eight pieces of Φ_t(x,y).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhiTerms {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub b1: f64,
    pub b2: f64,
}

impl PhiTerms {
    pub fn total(&self) -> f64 {
        self.a1 + self.a2 + self.a3 + self.a4 + self.a5 + self.a6 + self.b1 + self.b2
    }

    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("A1", self.a1),
            ("A2", self.a2),
            ("A3", self.a3),
            ("A4", self.a4),
            ("A5", self.a5),
            ("A6", self.a6),
            ("B1", self.b1),
            ("B2", self.b2),
        ]
    }
}

/// Everything about p⁰_t(·,y) that does not depend on x.
pub struct PhiEntry {
    pub kappa: Vec<f64>,
    /// B_t(κ_t(y)).
    pub drift_at_kappa: Vec<f64>,
    pub field: SpectralField,
    pub frozen: Frozen,
    pub zeta: f64,
    peak: f64,
}

impl PhiEntry {
    fn offset(&self, x: &[f64]) -> Vec<f64> {
        self.kappa.iter().zip(x).map(|(k, v)| k - v).collect()
    }

    /// Range of ρ with w − ρℓ inside the field's grid (empty when lo ≥ hi).
    fn support(&self, w: &[f64], dir: &[f64]) -> (f64, f64) {
        let hw = self.field.grid.half_width();
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for (wk, lk) in w.iter().zip(dir) {
            if lk.abs() < 1e-15 {
                if wk.abs() > hw {
                    return (0.0, 0.0);
                }
                continue;
            }
            let (a, b) = ((wk - hw) / lk, (wk + hw) / lk);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        (lo, hi)
    }
}

/// Per-(y, t) cache of flows, drifts and differentiable frozen fields.
#[derive(Default)]
pub struct PhiCache {
    entries: RwLock<HashMap<(Vec<u64>, u64), Arc<PhiEntry>>>,
}

impl PhiCache {
    pub fn new() -> PhiCache {
        PhiCache::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, model: &ModelSpec, params: &NumericalParams, y: &[f64], t: f64) -> Result<Arc<PhiEntry>, ParametrixError> {
        let key = (y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.to_bits());
        if let Some(e) = self.entries.read().ok().and_then(|m| m.get(&key).cloned()) {
            return Ok(e);
        }
        let kappa = solve_flow(model, params, y, t, Direction::Backward)?.end().to_vec();
        let drift_at_kappa = mollified_drift(model, params, &kappa, t)?;
        let d = model.dimension;
        let frozen = model.frozen(y)?;
        let want = cut_half_width(model, params, y, t)?;
        let grid = choose_grid(d, params.freq_nodes(d), want, sigma0(&frozen), frozen.alpha, t)?;
        let field = frozen_field(model, params, y, t, &grid, FieldOptions { cell: None, derivatives: true })?;
        let peak = field.value.iter().cloned().fold(0.0, f64::max);
        let zeta = params.zeta(model, frozen.alpha);
        let e = Arc::new(PhiEntry { kappa, drift_at_kappa, field, frozen, zeta, peak });
        if let Ok(mut m) = self.entries.write() {
            m.entry(key).or_insert_with(|| e.clone());
        }
        Ok(e)
    }
}

fn term_err(term: &'static str) -> impl Fn(QuadError) -> ParametrixError {
    move |source| ParametrixError::Term { term, source }
}

/// Composite adaptive quadrature over `pieces` equal parts.
fn pieces_integral<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, pieces: usize, abs_tol: f64) -> Result<f64, QuadError> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let h = (hi - lo) / pieces as f64;
    let mut acc = 0.0;
    for k in 0..pieces {
        let a = lo + k as f64 * h;
        acc += integrate(&mut f, a, a + h, abs_tol / pieces as f64, 1e-9, 2000)?;
    }
    Ok(acc)
}

/// ∫_lo^hi (p⁰(x+ρℓ) − p⁰(x) − ∇_x p⁰(x)·ρℓ) ρ^{-1-α} dρ, with the second-order Taylor
/// expansion on the first two field cells.
fn second_difference(e: &PhiEntry, w: &[f64], dir: &[f64], alpha: f64, lo: f64, hi: f64, term: &'static str) -> Result<f64, ParametrixError> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let f0 = e.field.value_at(w);
    let g = e.field.grad_at(w);
    let gl = dot(&g, dir);
    let switch = (2.0 * e.field.grid.dx).min(hi);
    let mut acc = 0.0;
    if lo < switch {
        let h = e.field.hess_at(w);
        let d = dir.len();
        let mut quad_form = 0.0;
        for j in 0..d {
            for k in 0..d {
                quad_form += dir[j] * h[j * d + k] * dir[k];
            }
        }
        acc += 0.5 * quad_form * (switch.powf(2.0 - alpha) - lo.powf(2.0 - alpha)) / (2.0 - alpha);
    }
    let start = lo.max(switch);
    let mut shifted = vec![0.0; w.len()];
    let integrand = |rho: f64| {
        for k in 0..w.len() {
            shifted[k] = w[k] - rho * dir[k];
        }
        (e.field.value_at(&shifted) - f0 + rho * gl) * rho.powf(-1.0 - alpha)
    };
    acc += pieces_integral(integrand, start, hi, 8, 1e-10 * e.peak).map_err(term_err(term))?;
    Ok(acc)
}

/// ∫_lo^∞ p⁰(x+ρℓ) ρ^{-1-α} dρ over the support of the field.
fn shifted_tail(e: &PhiEntry, w: &[f64], dir: &[f64], alpha: f64, lo: f64, term: &'static str) -> Result<f64, ParametrixError> {
    let (s_lo, s_hi) = e.support(w, dir);
    let (a, b) = (lo.max(s_lo), s_hi);
    let mut shifted = vec![0.0; w.len()];
    let integrand = |rho: f64| {
        for k in 0..w.len() {
            shifted[k] = w[k] - rho * dir[k];
        }
        e.field.value_at(&shifted) * rho.powf(-1.0 - alpha)
    };
    pieces_integral(integrand, a, b, 16, 1e-10 * e.peak * lo.powf(-1.0 - alpha)).map_err(term_err(term))
}

fn coupled<'a>(x_atoms: &'a [Atom], y_atoms: &'a [Atom]) -> Result<(), ParametrixError> {
    if x_atoms.len() != y_atoms.len() {
        return Err(ParametrixError::Uncoupled(x_atoms.len(), y_atoms.len()));
    }
    Ok(())
}

/// Φ_t(x,y) split into its eight terms.
pub fn phi_kernel(
    model: &ModelSpec,
    params: &NumericalParams,
    t: f64,
    x: &[f64],
    y: &[f64],
    cache: &PhiCache,
) -> Result<PhiTerms, ParametrixError> {
    let e = cache.entry(model, params, y, t)?;
    let fx = model.frozen(x)?;
    let fy = &e.frozen;
    coupled(&fx.atoms, &fy.atoms)?;
    let w = e.offset(x);
    let p0 = e.field.value_at(&w);
    // ∇_x p⁰ = −∇p^{y,cut}(κ − x)
    let grad: Vec<f64> = e.field.grad_at(&w).iter().map(|v| -v).collect();
    let big_r = t.powf(e.zeta);
    let r_x = t.powf(1.0 / fx.alpha);
    let r_y = t.powf(1.0 / fy.alpha);
    let mut terms = PhiTerms { a1: -p0 * fx.mu_tail_mass(big_r), a2: -p0 * model.nu_tail_mass(x, r_x)?, ..PhiTerms::default() };

    let b_t = compensated_drift(model, x, t)?;
    let diff: Vec<f64> = b_t.iter().zip(&e.drift_at_kappa).map(|(a, b)| a - b).collect();
    terms.a3 = dot(&diff, &grad);

    // ν atoms, and the removal of μ-jumps longer than q
    let q = model.truncation();
    for (u, m) in model.nu_atoms(x)? {
        let shifted: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - b).collect();
        let r = crate::model::norm(&u);
        if r <= r_x {
            terms.a4 += m * (e.field.value_at(&shifted) - p0 - dot(&grad, &u));
        } else {
            terms.b2 += m * e.field.value_at(&shifted);
        }
    }
    if let Some(q) = q {
        for a in &fx.atoms {
            let c = fx.lambda * a.weight;
            if c == 0.0 {
                continue;
            }
            if q < r_x {
                terms.a4 -= c * second_difference(&e, &w, &a.dir, fx.alpha, q, r_x, "A4")?;
            }
            terms.b2 -= c * shifted_tail(&e, &w, &a.dir, fx.alpha, q.max(r_x), "B2")?;
        }
    }

    // coupled atoms of μ(x,·) − μ(y,·) on |u| ≤ t^{ζ(y)}
    let same = fx.alpha == fy.alpha && fx.lambda == fy.lambda && fx.atoms == fy.atoms;
    if !same {
        for (ax, ay) in fx.atoms.iter().zip(&fy.atoms) {
            if ax.weight != 0.0 {
                terms.a5 += fx.lambda * ax.weight * second_difference(&e, &w, &ax.dir, fx.alpha, 0.0, big_r, "A5")?;
            }
            if ay.weight != 0.0 {
                terms.a5 -= fy.lambda * ay.weight * second_difference(&e, &w, &ay.dir, fy.alpha, 0.0, big_r, "A5")?;
            }
        }
        let ups_x = fx.intrinsic_drift();
        let ups_y = fy.intrinsic_drift();
        let mut shift = vec![0.0; w.len()];
        for k in 0..w.len() {
            shift[k] = ups_x[k] * power_integral(fx.alpha, r_x, big_r) - ups_y[k] * power_integral(fy.alpha, r_y, big_r);
        }
        terms.a6 = dot(&grad, &shift);
    }

    for a in &fx.atoms {
        if a.weight != 0.0 {
            terms.b1 += fx.lambda * a.weight * shifted_tail(&e, &w, &a.dir, fx.alpha, big_r, "B1")?;
        }
    }
    Ok(terms)
}

/// p⁰_t(x,y) from the same cache.
pub fn zero_order_at(model: &ModelSpec, params: &NumericalParams, t: f64, x: &[f64], y: &[f64], cache: &PhiCache) -> Result<f64, ParametrixError> {
    let e = cache.entry(model, params, y, t)?;
    Ok(e.field.value_at(&e.offset(x)))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::examples::builtin;
    use crate::frozen::{bound_kernel, BoundKernel};
    use crate::grid::Grid;
    use crate::parametrix::fourier::fourier_series;

    #[test]
    fn constant_coefficients_leave_only_the_tail_terms() {
        let model = builtin("const-alpha").unwrap();
        let params = NumericalParams::default();
        let cache = PhiCache::new();
        for (t, x, y) in [(0.1, 0.0, 0.3), (0.5, -1.0, 0.2), (0.02, 0.4, 0.41)] {
            let p = phi_kernel(&model, &params, t, &[x], &[y], &cache).unwrap();
            for (name, v) in p.named() {
                if name != "A1" && name != "B1" {
                    assert_eq!(v, 0.0, "{name} at t = {t}");
                }
            }
            assert!(p.a1 < 0.0 && p.b1 > 0.0);
        }
    }

    /// Φ from the spectral bracket of the constant-coefficient path.
    fn fourier_phi(name: &str, t: f64) -> (Grid, Vec<f64>, usize) {
        let model = builtin(name).unwrap();
        let params = NumericalParams { k_max: 1, ..NumericalParams::default() };
        let grid = Grid::parse("-8:8:512", 1).unwrap();
        let run = fourier_series(&model, &params, &[t], &grid, &[grid.nearest(&[0.0])]).unwrap();
        (grid, run.phi_lattice[0].clone(), run.lattice.nodes / 2)
    }

    #[test]
    fn terms_sum_to_the_spectral_kernel() {
        for name in ["const-alpha", "truncated-noise"] {
            let model = builtin(name).unwrap();
            let params = NumericalParams::default();
            let cache = PhiCache::new();
            for t in [0.05, 0.3] {
                let (grid, lattice, centre) = fourier_phi(name, t);
                let dx = grid.cell_volume();
                let scale = lattice.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for k in [-40isize, -9, -3, 0, 2, 7, 25, 60] {
                    let y = k as f64 * dx;
                    let want = lattice[(centre as isize + k) as usize];
                    let got = phi_kernel(&model, &params, t, &[0.0], &[y], &cache).unwrap().total();
                    assert!((got - want).abs() <= 2e-3 * scale, "{name}, t = {t}, y = {y}: {got} vs {want} (scale {scale})");
                }
            }
        }
    }

    #[test]
    fn principal_tail_term_obeys_its_bound() {
        let model = builtin("var-alpha-1d").unwrap();
        let params = NumericalParams::default();
        let cache = PhiCache::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s_frak = params.s_frak(&model);
        let amin = model.bounds.alpha_min;
        let delta = params.delta_k1(&model);
        let n = params.n_k1(&model);
        let zeta_min = params.zeta(&model, model.bounds.alpha_max);
        let mut ratios = Vec::new();
        for _ in 0..100 {
            let t = 0.02 + 0.98 * rng.gen::<f64>().powi(2);
            let x = 4.0 * rng.gen::<f64>() - 2.0;
            let y = x + (2.0 * rng.gen::<f64>() - 1.0) * 2.0 * t.powf(0.5);
            let terms = phi_kernel(&model, &params, t, &[x], &[y], &cache).unwrap();
            let p0 = zero_order_at(&model, &params, t, &[x], &[y], &cache).unwrap();
            let chi = solve_flow(&model, &params, &[x], t, Direction::Forward).unwrap().end().to_vec();
            let k1 = bound_kernel(
                &BoundKernel::K1 {
                    c: params.c_decay,
                    zeta_x: params.zeta(&model, model.alpha_at(&[x]).unwrap()),
                    zeta_min,
                    delta,
                    n,
                    chi_x: chi,
                    y: vec![y],
                },
                t,
            );
            ratios.push(terms.a1.abs() / (t.powf(-1.0 + s_frak * amin) * (p0 + k1)));
        }
        let fitted = ratios[..50].iter().cloned().fold(0.0, f64::max);
        let worst = ratios[50..].iter().cloned().fold(0.0, f64::max);
        assert!(fitted.is_finite() && fitted > 0.0);
        assert!(worst <= 2.0 * fitted, "fitted C = {fitted}, held-out worst {worst}");
    }

    #[test]
    fn state_dependent_terms_are_active_on_var_alpha() {
        let model = builtin("var-alpha-1d").unwrap();
        let params = NumericalParams::default();
        let cache = PhiCache::new();
        let p = phi_kernel(&model, &params, 0.2, &[0.3], &[0.8], &cache).unwrap();
        assert!(p.a3 != 0.0 && p.a5 != 0.0);
        // symmetric atoms: no first moment, so the annulus terms cancel
        assert_eq!((p.a2, p.a4, p.a6, p.b2), (0.0, 0.0, 0.0, 0.0));
        assert!(p.total().is_finite());
    }

    #[test]
    fn terms_agree_with_the_bulk_assembly() {
        use crate::parametrix::bulk::{assemble, node_time};
        use crate::parametrix::TimeMesh;
        let model = builtin("var-alpha-1d").unwrap();
        let params = NumericalParams::default();
        let grid = Grid::parse("-16:16:256", 1).unwrap();
        let mesh = TimeMesh::graded(0.5, 8, 2.0);
        let rows: Vec<usize> = [-1.0, 0.5].iter().map(|&x| grid.nearest(&[x])).collect();
        let bulk = assemble(&model, &params, &grid, &mesh, &rows, &[0.5], false).unwrap();
        let cache = PhiCache::new();
        let n = grid.len();
        for m in [4, 8] {
            let t = node_time(&mesh, m);
            for &r in &rows {
                let x = grid.point(r);
                let row = &bulk.phi[m][r * n..(r + 1) * n];
                let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut worst: f64 = 0.0;
                for j in (0..n).step_by(3) {
                    let y = grid.point(j);
                    if (y[0] - x[0]).abs() > 2.0 {
                        continue;
                    }
                    let got = phi_kernel(&model, &params, t, &x, &y, &cache).unwrap().total();
                    worst = worst.max((got - row[j]).abs());
                }
                assert!(worst <= 0.01 * scale, "t = {t}, x = {x:?}: worst {worst}, scale {scale}");
            }
        }
    }
}
