//! Registry of named builtin models.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::model::{Atom, Bounds, ModelSpec, NuAtom, PerturbationKernel, Rotation, SphericalMeasure};

#[derive(Debug, Error, PartialEq)]
pub enum ExampleError {
    #[error("unknown model `{0}`; run list-models for the registered names")]
    UnknownName(String),
    #[error("model `{model}` has no parameter `{param}`")]
    UnknownParameter { model: String, param: String },
    #[error("parameter `{param}` = {value} outside [{min}, {max}]")]
    OutOfRange { param: String, value: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSchema {
    pub name: &'static str,
    pub default: f64,
    pub min: f64,
    pub max: f64,
    pub description: &'static str,
}

type Generator = fn(&BTreeMap<&'static str, f64>) -> ModelSpec;

pub struct ModelTemplate {
    pub name: &'static str,
    pub parameters: Vec<ParamSchema>,
    pub anchor: &'static str,
    generate: Generator,
}

impl ModelTemplate {
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec, ExampleError> {
        let mut values: BTreeMap<&'static str, f64> = self.parameters.iter().map(|p| (p.name, p.default)).collect();
        for (k, &v) in overrides {
            let Some(p) = self.parameters.iter().find(|p| p.name == k) else {
                return Err(ExampleError::UnknownParameter { model: self.name.into(), param: k.clone() });
            };
            if !(v >= p.min && v <= p.max) {
                return Err(ExampleError::OutOfRange { param: k.clone(), value: v, min: p.min, max: p.max });
            }
            values.insert(p.name, v);
        }
        let mut m = (self.generate)(&values);
        m.name = self.name.to_string();
        Ok(m)
    }
}

fn param(name: &'static str, default: f64, min: f64, max: f64, description: &'static str) -> ParamSchema {
    ParamSchema { name, default, min, max, description }
}

fn expr(text: &str) -> Expr {
    Expr::parse(text).expect("builtin expression parses")
}

fn num(v: f64) -> Expr {
    Expr::constant(v)
}

fn const_alpha_spec(alpha: f64, lambda: f64) -> ModelSpec {
    ModelSpec {
        name: String::new(),
        dimension: 1,
        alpha: num(alpha),
        lambda: num(lambda),
        drift: vec![num(0.0)],
        sigma: SphericalMeasure::symmetric_1d(),
        nu: None,
        bounds: Bounds { alpha_min: alpha, alpha_max: alpha, lambda_min: lambda, lambda_max: lambda },
        eta: 1.0,
        h_frak: 1.0,
        eps_balance: 1.0,
    }
}

fn const_cauchy(_: &BTreeMap<&'static str, f64>) -> ModelSpec {
    const_alpha_spec(1.0, 2.0 / PI)
}

fn const_alpha(p: &BTreeMap<&'static str, f64>) -> ModelSpec {
    const_alpha_spec(p["alpha"], p["lambda"])
}

fn var_alpha_1d(p: &BTreeMap<&'static str, f64>) -> ModelSpec {
    let (a0, amp, drift) = (p["alpha0"], p["amplitude"], p["drift"]);
    let (lo, hi) = (p["alpha_min"], p["alpha_max"]);
    // tanh keeps α strictly inside (a0 - amp, a0 + amp); the clamp only bites when
    // the bounds are narrower than that band.
    let alpha = expr(&format!("clamp({a0} + {amp}*tanh(x1), {lo}, {hi})"));
    let amin = (a0 - amp).max(lo);
    let amax = (a0 + amp).min(hi);
    ModelSpec {
        name: String::new(),
        dimension: 1,
        alpha,
        lambda: num(1.0),
        drift: vec![expr(&format!("{drift}*sin(x1)"))],
        sigma: SphericalMeasure::symmetric_1d(),
        nu: None,
        bounds: Bounds { alpha_min: amin, alpha_max: amax, lambda_min: 1.0, lambda_max: 1.0 },
        eta: 1.0,
        h_frak: 0.9,
        eps_balance: 0.5,
    }
}

fn resetting(p: &BTreeMap<&'static str, f64>) -> ModelSpec {
    let alpha = p["alpha"];
    let mass = expr("1/(1+abs(x1))");
    ModelSpec {
        nu: Some(PerturbationKernel {
            atoms_expr: vec![
                NuAtom { jump: vec![expr("x1")], mass: mass.clone() },
                NuAtom { jump: vec![expr("-x1")], mass },
            ],
            truncate: None,
            beta: num(0.0),
            eps_nu: alpha,
        }),
        ..const_alpha_spec(alpha, 1.0)
    }
}

fn rotation_sde(p: &BTreeMap<&'static str, f64>) -> ModelSpec {
    let alpha = p["alpha"];
    let atom = |x: f64, y: f64| Atom { dir: vec![x, y], weight: 0.25 };
    // Unit mass on each of ±e1, ±e2 is intensity 4 times the uniform probability.
    let lambda = 4.0;
    ModelSpec {
        name: String::new(),
        dimension: 2,
        alpha: num(alpha),
        lambda: num(lambda),
        drift: vec![num(0.0), num(0.0)],
        sigma: SphericalMeasure {
            atoms: vec![atom(1.0, 0.0), atom(-1.0, 0.0), atom(0.0, 1.0), atom(0.0, -1.0)],
            rotation: Some(Rotation::TowardPosition { inner: 1.0, outer: 2.0 }),
        },
        nu: None,
        bounds: Bounds { alpha_min: alpha, alpha_max: alpha, lambda_min: lambda, lambda_max: lambda },
        eta: 1.0,
        h_frak: 1.0,
        eps_balance: 1.0,
    }
}

fn truncated_noise(p: &BTreeMap<&'static str, f64>) -> ModelSpec {
    let alpha = p["alpha"];
    ModelSpec {
        nu: Some(PerturbationKernel { atoms_expr: Vec::new(), truncate: Some(p["q"]), beta: num(0.0), eps_nu: alpha }),
        ..const_alpha_spec(alpha, p["lambda"])
    }
}

/// All registered templates, in listing order.
pub fn registry() -> Vec<ModelTemplate> {
    vec![
        ModelTemplate {
            name: "const-cauchy",
            parameters: Vec::new(),
            anchor: "symmetric Cauchy process in d=1: alpha = 1, lambda = 2/pi, closed-form density t/(pi(t^2+x^2))",
            generate: const_cauchy,
        },
        ModelTemplate {
            name: "const-alpha",
            parameters: vec![
                param("alpha", 1.5, 0.1, 1.95, "stability index"),
                param("lambda", 1.0, 0.01, 100.0, "intensity"),
            ],
            anchor: "symmetric alpha-stable Levy process in d=1",
            generate: const_alpha,
        },
        ModelTemplate {
            name: "var-alpha-1d",
            parameters: vec![
                param("alpha0", 1.5, 0.2, 1.9, "centre of alpha(x)"),
                param("amplitude", 0.3, 0.0, 0.8, "alpha(x) = alpha0 + amplitude*tanh(x)"),
                param("alpha_min", 1.2, 0.1, 1.95, "lower clamp of alpha(x)"),
                param("alpha_max", 1.8, 0.1, 1.95, "upper clamp of alpha(x)"),
                param("drift", 0.2, 0.0, 2.0, "b(x) = drift*sin(x)"),
            ],
            anchor: "stable-like kernel with variable index dominated by one spherical measure (Fubini condition check)",
            generate: var_alpha_1d,
        },
        ModelTemplate {
            name: "resetting",
            parameters: vec![param("alpha", 0.8, 0.1, 1.95, "stability index of the principal part")],
            anchor: "resetting kernel: from x the process jumps to 0 or doubles its value at rate 1/(1+|x|); density unbounded near 0",
            generate: resetting,
        },
        ModelTemplate {
            name: "rotation-sde",
            parameters: vec![param("alpha", 1.5, 0.1, 1.95, "index of the independent stable coordinates")],
            anchor: "SDE dX = a(X-) dZ with independent stable coordinates; a(x) = id for |x| <= 1, a rotation with a(x)e1 = x/|x| for |x| >= 2",
            generate: rotation_sde,
        },
        ModelTemplate {
            name: "truncated-noise",
            parameters: vec![
                param("alpha", 1.5, 0.1, 1.95, "stability index"),
                param("lambda", 1.0, 0.01, 100.0, "intensity"),
                param("q", 0.5, 0.01, 10.0, "jumps longer than q are removed"),
            ],
            anchor: "stable noise with jumps longer than q removed; tail split for the renewal identity",
            generate: truncated_noise,
        },
    ]
}

pub fn template(name: &str) -> Result<ModelTemplate, ExampleError> {
    registry().into_iter().find(|t| t.name == name).ok_or_else(|| ExampleError::UnknownName(name.to_string()))
}

pub fn get_model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec, ExampleError> {
    template(name)?.build(overrides)
}

pub fn builtin(name: &str) -> Result<ModelSpec, ExampleError> {
    get_model(name, &BTreeMap::new())
}

#[derive(Serialize)]
struct Listing<'a> {
    name: &'a str,
    parameters: &'a [ParamSchema],
    paper_anchor: &'a str,
}

/// JSON array of {name, parameters, paper_anchor}.
pub fn list_models() -> String {
    let reg = registry();
    let items: Vec<Listing> =
        reg.iter().map(|t| Listing { name: t.name, parameters: &t.parameters, paper_anchor: t.anchor }).collect();
    serde_json::to_string_pretty(&items).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, NumericalParams, SampleGrid};

    fn report(name: &str) -> crate::model::ValidationReport {
        let m = builtin(name).unwrap();
        validate_model(&m, &NumericalParams::default(), &SampleGrid::default_for(m.dimension))
    }

    #[test]
    fn every_builtin_validates() {
        for t in registry() {
            let r = report(t.name);
            assert!(r.all_passed, "{}: {:?}", t.name, r.conditions.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        }
    }

    #[test]
    fn const_cauchy_has_unit_alpha() {
        let m = builtin("const-cauchy").unwrap();
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(m.alpha_at(&[x]).unwrap(), 1.0);
        }
    }

    #[test]
    fn rotation_sends_e1_to_position() {
        let m = builtin("rotation-sde").unwrap();
        let x = [3.0 * 0.6, 3.0 * 0.8];
        let atoms = m.sigma.at(&x);
        assert!((atoms[0].dir[0] - 0.6).abs() < 1e-12 && (atoms[0].dir[1] - 0.8).abs() < 1e-12);
        assert!((atoms[1].dir[0] + 0.6).abs() < 1e-12 && (atoms[1].dir[1] + 0.8).abs() < 1e-12);
        assert!((atoms[2].dir[0] + 0.8).abs() < 1e-12 && (atoms[2].dir[1] - 0.6).abs() < 1e-12);
        let inner = m.sigma.at(&[0.3, -0.5]);
        assert_eq!(inner[0].dir, vec![1.0, 0.0]);
    }

    #[test]
    fn rotation_nondegeneracy_matches_operator_norm() {
        // a(x) is orthogonal, so ‖a(x)^{-1}‖ = 1 and the M1 value with unit atom masses is 2.
        let m = builtin("rotation-sde").unwrap();
        let r = report("rotation-sde");
        let lambda = m.lambda_at(&[0.0, 0.0]).unwrap();
        assert!((lambda * r.get("M1").unwrap().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn resetting_tail_holds_for_every_beta() {
        let m = builtin("resetting").unwrap();
        for beta in [0.01, 0.5, 2.0, 10.0] {
            for x in [-3.0, -0.4, 0.0, 0.7, 2.0] {
                for k in 0..12 {
                    let r = 0.5f64.powi(k);
                    let tail = m.nu_abs_tail_mass(&[x], r).unwrap();
                    assert!(tail <= 2.0 * r.powf(-beta) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn unknown_names_and_parameters() {
        assert_eq!(builtin("nonexistent").unwrap_err(), ExampleError::UnknownName("nonexistent".into()));
        let mut o = BTreeMap::new();
        o.insert("alpha".to_string(), 2.5);
        assert!(matches!(get_model("const-alpha", &o), Err(ExampleError::OutOfRange { .. })));
        o.clear();
        o.insert("beta".to_string(), 1.0);
        assert!(matches!(get_model("const-alpha", &o), Err(ExampleError::UnknownParameter { .. })));
    }

    #[test]
    fn listing_is_json_array() {
        let v: serde_json::Value = serde_json::from_str(&list_models()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), registry().len());
        assert!(v[0].get("paper_anchor").is_some());
    }
}
