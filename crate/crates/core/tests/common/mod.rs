//! Oracles and sampled checks shared by the property suites and the acceptance run.
#![allow(dead_code)]

use proptest::prelude::*;

use stablekit::examples::{builtin, registry};
use stablekit::expr::{BinOp, Expr, Func, Var};
use stablekit::flow::{solve_flow, w_correction, Direction};
use stablekit::model::{stable_exponent, w1_sphere, Atom, Bounds, ModelSpec, NumericalParams, SphericalMeasure};
use stablekit::montecarlo::simulate_paths;
use stablekit::quad::integrate;

pub type Check = Result<(), String>;

// ---------- W1 ----------

pub fn chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Minimum over the vertices of the transport polytope: every spanning tree of the
/// bipartite graph carries at most one feasible plan.
pub fn w1_exhaustive(p: &[Atom], q: &[Atom]) -> f64 {
    let (m, n) = (p.len(), q.len());
    let edges: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; k];
    fn next(pick: &mut [usize], total: usize) -> bool {
        let k = pick.len();
        for i in (0..k).rev() {
            if pick[i] < total - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    for (i, v) in pick.iter_mut().enumerate() {
        *v = i;
    }
    loop {
        let tree: Vec<(usize, usize)> = pick.iter().map(|&e| edges[e]).collect();
        if let Some(plan) = tree_plan(&tree, p, q) {
            let cost: f64 = tree.iter().zip(&plan).map(|(&(i, j), f)| f * chord(&p[i].dir, &q[j].dir)).sum();
            best = best.min(cost);
        }
        if !next(&mut pick, edges.len()) {
            break;
        }
    }
    best
}

/// Flows on a spanning tree by peeling leaves; None if not a tree or infeasible.
fn tree_plan(tree: &[(usize, usize)], p: &[Atom], q: &[Atom]) -> Option<Vec<f64>> {
    let m = p.len();
    let mut rest: Vec<f64> = p.iter().map(|a| a.weight).chain(q.iter().map(|a| a.weight)).collect();
    let mut flow = vec![f64::NAN; tree.len()];
    let mut alive = vec![true; tree.len()];
    for _ in 0..tree.len() {
        let mut deg = vec![0usize; rest.len()];
        for (e, &(i, j)) in tree.iter().enumerate() {
            if alive[e] {
                deg[i] += 1;
                deg[m + j] += 1;
            }
        }
        let (e, leaf) = tree.iter().enumerate().filter(|(e, _)| alive[*e]).find_map(|(e, &(i, j))| {
            if deg[i] == 1 {
                Some((e, i))
            } else if deg[m + j] == 1 {
                Some((e, m + j))
            } else {
                None
            }
        })?;
        let (i, j) = tree[e];
        let other = if leaf == i { m + j } else { i };
        let f = rest[leaf];
        if f < -1e-12 {
            return None;
        }
        flow[e] = f;
        rest[leaf] = 0.0;
        rest[other] -= f;
        alive[e] = false;
    }
    if rest.iter().any(|r| r.abs() > 1e-9) {
        return None;
    }
    Some(flow)
}

pub fn circle_measure(max: usize) -> impl Strategy<Value = Vec<Atom>> {
    prop::collection::vec((0.0..std::f64::consts::TAU, 0.05f64..1.0), 1..=max).prop_map(|raw| {
        let total: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter().map(|(a, w)| Atom { dir: vec![a.cos(), a.sin()], weight: w / total }).collect()
    })
}

pub fn check_w1_exhaustive(p: &[Atom], q: &[Atom]) -> Check {
    let fast = w1_sphere(p, q).map_err(|e| e.to_string())?;
    let slow = w1_exhaustive(p, q);
    if (fast - slow).abs() < 1e-10 {
        Ok(())
    } else {
        Err(format!("W1 {fast} vs exhaustive {slow}"))
    }
}

pub fn check_w1_metric(p: &[Atom], q: &[Atom], r: &[Atom]) -> Check {
    let d = |a: &[Atom], b: &[Atom]| w1_sphere(a, b).unwrap();
    if d(p, p).abs() >= 1e-10 {
        return Err(format!("W1(P,P) = {}", d(p, p)));
    }
    if (d(p, q) - d(q, p)).abs() >= 1e-10 {
        return Err("W1 is not symmetric".into());
    }
    if d(p, r) > d(p, q) + d(q, r) + 1e-10 {
        return Err("triangle inequality fails".into());
    }
    Ok(())
}

// ---------- exponent ----------

pub fn exponent_inputs() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (0usize..100, prop::collection::vec(-4.0f64..4.0, 2), prop::collection::vec(-30.0f64..30.0, 2))
}

pub fn check_conjugate((which, z, xi): (usize, Vec<f64>, Vec<f64>)) -> Check {
    let reg = registry();
    let model = builtin(reg[which % reg.len()].name).unwrap();
    let d = model.dimension;
    let (z, xi) = (&z[..d], &xi[..d]);
    let minus: Vec<f64> = xi.iter().map(|v| -v).collect();
    let (a, _) = stable_exponent(&model, z, xi).map_err(|e| e.to_string())?;
    let (b, _) = stable_exponent(&model, z, &minus).map_err(|e| e.to_string())?;
    if (a - b.conj()).norm() <= 1e-10 * a.norm().max(1.0) {
        Ok(())
    } else {
        Err(format!("{}: ψ(ξ) = {a}, ψ(−ξ) = {b}", model.name))
    }
}

// ---------- expressions ----------

pub fn expr_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0f64..100.0).prop_map(Expr::Num),
        (0usize..2).prop_map(|i| Expr::Var(Var::X(i))),
        Just(Expr::Var(Var::T)),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        let unary = prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp), Just(Func::Abs), Just(Func::Tanh), Just(Func::Sqrt), Just(Func::Log)];
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
            (unary, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            prop::collection::vec(inner.clone(), 2..4).prop_map(|v| Expr::Call(Func::Min, v)),
            prop::collection::vec(inner.clone(), 2..4).prop_map(|v| Expr::Call(Func::Max, v)),
            (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Expr::Call(Func::Clamp, vec![a, b, c])),
        ]
    })
}

pub fn expr_inputs() -> impl Strategy<Value = (Expr, Vec<f64>, f64)> {
    (expr_tree(), prop::collection::vec(-3.0f64..3.0, 2), 0.0f64..1.0)
}

pub fn check_expr_round_trip((e, x, t): (Expr, Vec<f64>, f64)) -> Check {
    let text = e.to_string();
    let back = Expr::parse(&text).map_err(|err| format!("`{text}`: {err}"))?;
    if back != e {
        return Err(format!("`{text}` parses to a different tree"));
    }
    match (e.eval(&x, Some(t)), back.eval(&x, Some(t))) {
        (Ok(a), Ok(b)) if a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()) => Ok(()),
        (Err(_), Err(_)) => Ok(()),
        (a, b) => Err(format!("`{text}`: {a:?} vs {b:?}")),
    }
}

// ---------- W(t,s,x) ----------

pub fn one_dim(alpha: f64, plus: f64) -> ModelSpec {
    ModelSpec {
        name: "w-identity".into(),
        dimension: 1,
        alpha: Expr::constant(alpha),
        lambda: Expr::constant(1.0),
        drift: vec![Expr::constant(0.0)],
        sigma: SphericalMeasure { atoms: vec![Atom { dir: vec![1.0], weight: plus }, Atom { dir: vec![-1.0], weight: 1.0 - plus }], rotation: None },
        nu: None,
        bounds: Bounds { alpha_min: alpha, alpha_max: alpha, lambda_min: 1.0, lambda_max: 1.0 },
        eta: 1.0,
        h_frak: 1.0,
        eps_balance: 1.0,
    }
}

pub fn w_inputs() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..0.95, 0.0f64..1.0, 0.05f64..1.0)
}

pub fn check_w_identity((alpha, plus, t): (f64, f64, f64)) -> Check {
    let m = one_dim(alpha, plus);
    let ups = m.intrinsic_drift(&[0.0]).unwrap()[0];
    let total = integrate(|s| w_correction(&m, t, s, &[0.0]).unwrap()[0], 0.0, t, 1e-13, 1e-11, 4000).map_err(|e| e.to_string())?;
    if (total - ups).abs() <= 1e-8 * ups.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("α = {alpha}, t = {t}: ∫W = {total}, υ = {ups}"))
    }
}

// ---------- seed determinism ----------

pub fn seed_inputs() -> impl Strategy<Value = (usize, u64, usize)> {
    (0usize..100, any::<u64>(), 1usize..4)
}

pub fn check_seed((which, seed, threads): (usize, u64, usize)) -> Check {
    let reg = registry();
    let model = builtin(reg[which % reg.len()].name).unwrap();
    let x0 = vec![0.5; model.dimension];
    let a = simulate_paths(&model, &x0, 0.2, 0.01, 64, seed).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let b = pool.install(|| simulate_paths(&model, &x0, 0.2, 0.01, 64, seed)).map_err(|e| e.to_string())?;
    if a == b && a.to_csv() == b.to_csv() {
        Ok(())
    } else {
        Err(format!("{} seed {seed}: ensembles differ with {threads} threads", model.name))
    }
}

// ---------- flow comparability ----------

pub struct Sample {
    t: f64,
    /// |κ_t(y) − x|
    base: f64,
    /// |κ_{t−s}(y) − χ_s(x)|
    moved: f64,
    /// t^{1/α(x) + ε_κ}
    slack: f64,
}

pub fn comparability_samples(model: &ModelSpec, params: &NumericalParams, seed: u64) -> Vec<Sample> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = model.dimension;
    let eps_kappa = model.eta / 8.0 * model.eps_nu().min(model.eps_b());
    let mut out = Vec::new();
    for _ in 0..12 {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: f64 = [0.05, 0.2, 0.6, 1.0][rng.gen_range(0..4)];
        let back = solve_flow(model, params, &y, t, Direction::Backward).unwrap();
        let fwd = solve_flow(model, params, &x, t, Direction::Forward).unwrap();
        let kt = back.end().to_vec();
        let base = kt.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let alpha_x = model.alpha_at(&x).unwrap();
        for frac in [0.25, 0.5, 0.9] {
            let s = frac * t;
            let k = back.at(t - s);
            let c = fwd.at(s);
            let moved = k.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out.push(Sample { t, base, moved, slack: t.powf(1.0 / alpha_x + eps_kappa) });
        }
    }
    out
}

pub fn holds(c: f64, s: &Sample, eps_b: f64) -> bool {
    let g = (c * s.t.powf(eps_b)).exp();
    let tol = 1e-9 * (1.0 + s.base);
    s.moved <= g * s.base + c * s.slack + tol && s.moved >= s.base / g - c * s.slack - tol
}

/// Smallest C (on a doubling-then-bisection search) for which every sample holds.
pub fn fitted_constant(samples: &[Sample], eps_b: f64) -> f64 {
    let ok = |c: f64| samples.iter().all(|s| holds(c, s, eps_b));
    if ok(0.0) {
        return 0.0;
    }
    let mut hi = 1e-3;
    while !ok(hi) {
        hi *= 2.0;
        assert!(hi < 1e6, "no constant found");
    }
    let mut lo = hi / 2.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Fits C on one sample set per builtin and checks a second set against 2C; returns the fits.
pub fn check_flow_comparability() -> Result<Vec<(String, f64)>, String> {
    let params = NumericalParams::default();
    let mut fits = Vec::new();
    for t in registry() {
        let model = builtin(t.name).unwrap();
        let eps_b = model.eps_b();
        let fit = fitted_constant(&comparability_samples(&model, &params, 1), eps_b);
        if !fit.is_finite() {
            return Err(format!("{}: no finite constant", t.name));
        }
        for s in &comparability_samples(&model, &params, 2) {
            if !holds(2.0 * fit.max(1e-3), s, eps_b) {
                return Err(format!("{}: C = {fit}, t = {}, base {}, moved {}", t.name, s.t, s.base, s.moved));
            }
        }
        fits.push((t.name.to_string(), fit));
    }
    Ok(fits)
}
