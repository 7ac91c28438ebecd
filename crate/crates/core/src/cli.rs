//! Command-line surface. Exit codes: 0 success, 1 I/O, 2 validation or usage failure,
//! 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::examples::{get_model, list_models, ExampleError};
use crate::frozen::FrozenError;
use crate::grid::{Grid, GridError};
use crate::model::{validate_model, ModelError, ModelSpec, NumericalParams, SampleGrid};
use crate::montecarlo::{bin_probabilities, quantile, renewal_check, simulate_checkpoints, simulate_paths, Histogram, McError, RenewalOptions};
use crate::parametrix::{condition_integrals, neumann_density, ConditionKind, ParametrixError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure in {term}: {message}")]
    Numerical { term: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) | CliError::Validation(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }
}

impl From<ExampleError> for CliError {
    fn from(e: ExampleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Quad { term, source } => CliError::Numerical { term, message: source.to_string() },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<FrozenError> for CliError {
    fn from(e: FrozenError) -> Self {
        CliError::Numerical { term: "frozen density".into(), message: e.to_string() }
    }
}

impl From<ParametrixError> for CliError {
    fn from(e: ParametrixError) -> Self {
        let term = match &e {
            ParametrixError::Term { term, .. } => term.to_string(),
            ParametrixError::Divergence { k, .. } => format!("Neumann term {k}"),
            ParametrixError::Singularity(_) => "time convolution".into(),
            ParametrixError::Uncoupled(..) => "atom coupling".into(),
            ParametrixError::Unsupported(_) => "kernel structure".into(),
            ParametrixError::Flow(_) => "flow".into(),
            ParametrixError::Frozen(_) => "frozen density".into(),
            ParametrixError::Quad(_) => "quadrature".into(),
            ParametrixError::Mesh(_) | ParametrixError::Model(_) => String::new(),
        };
        match e {
            ParametrixError::Model(m) => m.into(),
            ParametrixError::Mesh(m) => CliError::Usage(m),
            other => CliError::Numerical { term, message: other.to_string() },
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Parametrix(p) => p.into(),
            McError::Model(m) => m.into(),
            McError::Step { .. } | McError::NoPaths => CliError::Usage(e.to_string()),
            other => CliError::Numerical { term: "monte carlo".into(), message: other.to_string() },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stablekit", version, about = "Parametrix transition densities for stable-like Markov processes")]
pub struct Cli {
    /// Worker threads (falls back to STABLEKIT_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Builtin model name or path to a model JSON file.
    #[arg(long)]
    pub model: String,
    /// Template parameter override `name=value` (builtin models only).
    #[arg(long = "set", value_parser = parse_override)]
    pub set: Vec<(String, f64)>,
    /// NumericalParams JSON file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Overrides the number of Neumann terms.
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    /// RNG seed (falls back to STABLEKIT_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample-based check of the model conditions.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parametrix density p_t(x, ·) on a grid.
    Density {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated times in (0, 1].
        #[arg(long, allow_hyphen_values = true, default_value = "0.5")]
        t: String,
        #[arg(long, allow_hyphen_values = true, default_value = "-8:8:512")]
        grid: String,
        /// Start points, `;`-separated, coordinates `,`-separated.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual norms and their decay in t.
    Residual {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true, default_value = "0.0625,0.125,0.25,0.5,1")]
        t: String,
        #[arg(long, allow_hyphen_values = true, default_value = "-8:8:256")]
        grid: String,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Terminal positions of simulated paths.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
        t: f64,
        /// Step; defaults to t/200.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Total variation between the parametrix density and Monte Carlo histograms (d = 1).
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true, default_value = "0.5")]
        t: String,
        #[arg(long, allow_hyphen_values = true, default_value = "-32:32:256")]
        grid: String,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Step; defaults to (last time)/200.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep of a remainder-term condition integral in t.
    Conditions {
        #[command(flatten)]
        model: ModelArgs,
        /// shifted-threshold, scale-threshold or power-threshold.
        #[arg(long, default_value = "power-threshold")]
        kind: String,
        /// 𝔮 of the shifted threshold.
        #[arg(long)]
        q_frak: Option<f64>,
        /// 𝔯 of the power threshold.
        #[arg(long)]
        r_frak: Option<f64>,
        /// Free index of the scale and power thresholds (defaults to α_max).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        v: Option<String>,
        #[arg(long, allow_hyphen_values = true, default_value = "0.00390625,0.0078125,0.015625,0.03125,0.0625,0.125,0.25,0.5")]
        t: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discrepancy between the density and its renewal over long jumps.
    Renewal {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.5)]
        t: f64,
        #[arg(long, allow_hyphen_values = true, default_value = "-32:32:256")]
        grid: String,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Registered builtin models with their parameters.
    ListModels,
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not name=value"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("{what}: `{p}` is not a number"))))
        .collect()
}

fn parse_point(s: Option<&str>, d: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let Some(s) = s else { return Ok(vec![0.0; d]) };
    let p = parse_floats(s, what)?;
    if p.len() != d {
        return Err(CliError::Usage(format!("{what} has {} coordinates, the model has d = {d}", p.len())));
    }
    Ok(p)
}

fn parse_points(s: Option<&str>, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
    match s {
        None => Ok(vec![vec![0.0; d]]),
        Some(s) => s.split(';').map(|p| parse_point(Some(p), d, "x")).collect(),
    }
}

fn seed_of(args: &SeedArgs) -> Result<u64, CliError> {
    if let Some(s) = args.seed {
        return Ok(s);
    }
    match std::env::var("STABLEKIT_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("STABLEKIT_SEED=`{v}` is not an integer"))),
        Err(_) => Err(CliError::Usage("Monte Carlo needs --seed or STABLEKIT_SEED".into())),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Resolved model, numerical parameters and provenance.
pub struct RunConfig {
    pub model: ModelSpec,
    pub params: NumericalParams,
    pub model_hash: String,
}

impl RunConfig {
    pub fn from_args(args: &ModelArgs) -> Result<RunConfig, CliError> {
        let path = Path::new(&args.model);
        let model = if args.model.ends_with(".json") || path.is_file() {
            if !args.set.is_empty() {
                return Err(CliError::Usage("--set applies to builtin models only".into()));
            }
            ModelSpec::from_json(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        } else {
            let overrides: BTreeMap<String, f64> = args.set.iter().cloned().collect();
            get_model(&args.model, &overrides)?
        };
        model.check()?;
        let mut params = match &args.params {
            Some(p) => {
                let text = read(p)?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de)
                    .map_err(|e| CliError::Validation(format!("{}: at `{}`: {}", p.display(), e.path(), e.inner())))?
            }
            None => NumericalParams::default(),
        };
        if let Some(k) = args.k_max {
            params.k_max = k;
        }
        params.check(&model)?;
        let model_hash = format!("{:x}", Sha256::digest(model.to_json().as_bytes()));
        Ok(RunConfig { model, params, model_hash })
    }

    fn provenance(&self, command: &str, seed: Option<u64>) -> serde_json::Value {
        json!({
            "command": command,
            "model": self.model.name,
            "model_hash": self.model_hash,
            "params": self.params,
            "seed": seed,
            "version": VERSION,
        })
    }

    fn csv_header(&self, command: &str, seed: Option<u64>) -> String {
        let params = serde_json::to_string(&self.params).unwrap_or_default();
        let seed = seed.map_or("none".to_string(), |s| s.to_string());
        format!(
            "# stablekit {VERSION} {command}\n# model={} sha256={}\n# params={params}\n# seed={seed}\n",
            self.model.name, self.model_hash
        )
    }
}

fn to_stdout(body: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(body.as_bytes()).and_then(|_| out.flush()) {
        // a closed reader (`| head`) is not an error of ours
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

/// Output sink: a directory, or stdout when none was given.
struct Sink(Option<PathBuf>);

impl Sink {
    fn write(&self, name: &str, body: &str) -> Result<(), CliError> {
        match &self.0 {
            None => to_stdout(body),
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|source| CliError::Io { path: p.display().to_string(), source })
            }
        }
    }

    /// JSON goes to stdout only when there is no directory and no CSV for this command.
    fn report(&self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).unwrap_or_default() + "\n";
        self.write(name, &text)
    }
}

fn envelope<T: Serialize>(provenance: serde_json::Value, report: &T) -> serde_json::Value {
    json!({ "provenance": provenance, "report": report })
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

fn validate(cfg: &RunConfig, sink: &Sink) -> Result<(), CliError> {
    let report = validate_model(&cfg.model, &cfg.params, &SampleGrid::default_for(cfg.model.dimension));
    sink.report("validation.json", &envelope(cfg.provenance("validate", None), &report))?;
    if !report.all_passed {
        let failed: Vec<&str> = report.conditions.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Validation(format!("conditions {} fail", failed.join(", "))));
    }
    Ok(())
}

fn density(cfg: &RunConfig, t: &str, grid: &str, x: Option<&str>, sink: &Sink) -> Result<(), CliError> {
    let d = cfg.model.dimension;
    let times = parse_floats(t, "t")?;
    let grid = Grid::parse(grid, d)?;
    let xs = parse_points(x, d)?;
    let (field, report) = neumann_density(&cfg.model, &cfg.params, &times, &xs, &grid)?;
    let mut csv = cfg.csv_header("density", None);
    let xh: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    let yh: Vec<String> = (1..=d).map(|k| format!("y{k}")).collect();
    csv.push_str(&format!("t,{},{},p\n", xh.join(","), yh.join(",")));
    for (m, &tm) in field.mesh.times.iter().enumerate() {
        for (i, xp) in field.x_points.iter().enumerate() {
            let xs: Vec<String> = xp.iter().map(|&v| fmt(v)).collect();
            for (y, &p) in field.y_points.iter().zip(field.row(m, i)) {
                let ys: Vec<String> = y.iter().map(|&v| fmt(v)).collect();
                csv.push_str(&format!("{},{},{},{}\n", fmt(tm), xs.join(","), ys.join(","), fmt(p)));
            }
        }
    }
    sink.write("density.csv", &csv)?;
    if sink.0.is_some() {
        sink.report("density.json", &envelope(cfg.provenance("density", None), &report))?;
    }
    Ok(())
}

fn residual(cfg: &RunConfig, t: &str, grid: &str, x: Option<&str>, sink: &Sink) -> Result<(), CliError> {
    let d = cfg.model.dimension;
    let times = parse_floats(t, "t")?;
    let grid = Grid::parse(grid, d)?;
    let xs = parse_points(x, d)?;
    let (_, report) = neumann_density(&cfg.model, &cfg.params, &times, &xs, &grid)?;
    let mut csv = cfg.csv_header("residual", None);
    csv.push_str("t,norm_inf1,sup\n");
    for ((t, n), s) in report.times.iter().zip(&report.norm_inf1).zip(&report.sup) {
        csv.push_str(&format!("{},{},{}\n", fmt(*t), fmt(*n), fmt(*s)));
    }
    if sink.0.is_some() {
        sink.write("residual.csv", &csv)?;
    }
    sink.report("residual.json", &envelope(cfg.provenance("residual", None), &report))
}

fn simulate(cfg: &RunConfig, x0: Option<&str>, t: f64, h: Option<f64>, n: usize, seed: u64, sink: &Sink) -> Result<(), CliError> {
    let x0 = parse_point(x0, cfg.model.dimension, "x0")?;
    let ens = simulate_paths(&cfg.model, &x0, t, h.unwrap_or(t / 200.0), n, seed)?;
    let csv = cfg.csv_header("simulate", Some(seed)) + &ens.to_csv();
    sink.write("paths.csv", &csv)?;
    if sink.0.is_some() {
        sink.write("paths.json", &(ens.sidecar_json() + "\n"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    t: f64,
    total_variation: f64,
    lo: f64,
    hi: f64,
    bins: usize,
    parametrix_mass: f64,
}

#[allow(clippy::too_many_arguments)]
fn compare(
    cfg: &RunConfig,
    t: &str,
    grid: &str,
    x0: Option<&str>,
    n: usize,
    h: Option<f64>,
    bins: usize,
    seed: u64,
    sink: &Sink,
) -> Result<(), CliError> {
    if cfg.model.dimension != 1 {
        return Err(CliError::Usage("compare works in d = 1".into()));
    }
    let times = parse_floats(t, "t")?;
    let grid = Grid::parse(grid, 1)?;
    let x0 = parse_point(x0, 1, "x0")?;
    let last = *times.last().ok_or_else(|| CliError::Usage("no times".into()))?;
    let h = h.unwrap_or(last / 200.0);
    let (field, _) = neumann_density(&cfg.model, &cfg.params, &times, std::slice::from_ref(&x0), &grid)?;
    let ens = simulate_checkpoints(&cfg.model, &x0, &times, h, n, seed)?;
    let ys: Vec<f64> = field.y_points.iter().map(|y| y[0]).collect();
    let dx = grid.axes[0].step();
    let mut rows = Vec::new();
    for (m, &tm) in times.iter().enumerate() {
        let samples: Vec<f64> = if m + 1 == times.len() {
            ens.terminal_1d()
        } else {
            ens.skeletons[m].iter().map(|p| p[0]).collect()
        };
        let (lo, hi) = (quantile(&samples, 0.005), quantile(&samples, 0.995));
        let hist = Histogram::new(&samples, lo, hi, bins);
        let row = field.row(m, 0);
        let q = bin_probabilities(&ys, row, dx, &hist.edges());
        rows.push(CompareRow {
            t: tm,
            total_variation: hist.total_variation(&q),
            lo,
            hi,
            bins,
            parametrix_mass: row.iter().sum::<f64>() * dx,
        });
    }
    let mut csv = cfg.csv_header("compare", Some(seed));
    csv.push_str("t,total_variation,lo,hi,bins,parametrix_mass\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", fmt(r.t), fmt(r.total_variation), fmt(r.lo), fmt(r.hi), r.bins, fmt(r.parametrix_mass)));
    }
    sink.write("compare.csv", &csv)?;
    if sink.0.is_some() {
        sink.report("compare.json", &envelope(cfg.provenance("compare", Some(seed)), &rows))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conditions(
    cfg: &RunConfig,
    kind: &str,
    q_frak: Option<f64>,
    r_frak: Option<f64>,
    alpha: Option<f64>,
    v: Option<&str>,
    t: &str,
    sink: &Sink,
) -> Result<(), CliError> {
    let b = cfg.model.bounds;
    let alpha = alpha.unwrap_or(b.alpha_max);
    let kind = match kind {
        "shifted-threshold" => ConditionKind::ShiftedThreshold { q_frak: q_frak.unwrap_or(0.0) },
        "scale-threshold" => ConditionKind::ScaleThreshold { alpha },
        "power-threshold" => ConditionKind::PowerThreshold { r_frak: r_frak.unwrap_or(0.9 / b.alpha_max), alpha },
        other => return Err(CliError::Usage(format!("unknown condition kind `{other}`"))),
    };
    let v = parse_point(v, cfg.model.dimension, "v")?;
    let times = parse_floats(t, "t")?;
    let sweep = condition_integrals(&cfg.model, kind, &times, &v)?;
    let mut csv = cfg.csv_header("conditions", None);
    csv.push_str("t,value\n");
    for (t, val) in sweep.times.iter().zip(&sweep.values) {
        csv.push_str(&format!("{},{}\n", fmt(*t), fmt(*val)));
    }
    sink.write("conditions.csv", &csv)?;
    if sink.0.is_some() {
        sink.report("conditions.json", &envelope(cfg.provenance("conditions", None), &sweep))?;
    }
    Ok(())
}

fn renewal(cfg: &RunConfig, t: f64, grid: &str, paths: usize, seed: u64, sink: &Sink) -> Result<(), CliError> {
    let grid = Grid::parse(grid, cfg.model.dimension)?;
    let opts = RenewalOptions { t, paths, seed, ..RenewalOptions::default() };
    let report = renewal_check(&cfg.model, &cfg.params, &grid, &opts)?;
    sink.report("renewal.json", &envelope(cfg.provenance("renewal", Some(seed)), &report))
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("STABLEKIT_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("STABLEKIT_THREADS=`{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let run = || -> Result<(), CliError> {
        match cli.command {
            Command::ListModels => to_stdout(&format!("{}\n", list_models())),
            Command::Validate { model, out } => validate(&RunConfig::from_args(&model)?, &Sink(out)),
            Command::Density { model, t, grid, x, out } => density(&RunConfig::from_args(&model)?, &t, &grid, x.as_deref(), &Sink(out)),
            Command::Residual { model, t, grid, x, out } => residual(&RunConfig::from_args(&model)?, &t, &grid, x.as_deref(), &Sink(out)),
            Command::Simulate { model, x0, t, h, n, seed, out } => {
                simulate(&RunConfig::from_args(&model)?, x0.as_deref(), t, h, n, seed_of(&seed)?, &Sink(out))
            }
            Command::Compare { model, t, grid, x0, n, h, bins, seed, out } => {
                compare(&RunConfig::from_args(&model)?, &t, &grid, x0.as_deref(), n, h, bins, seed_of(&seed)?, &Sink(out))
            }
            Command::Conditions { model, kind, q_frak, r_frak, alpha, v, t, out } => {
                conditions(&RunConfig::from_args(&model)?, &kind, q_frak, r_frak, alpha, v.as_deref(), &t, &Sink(out))
            }
            Command::Renewal { model, t, grid, paths, seed, out } => {
                renewal(&RunConfig::from_args(&model)?, t, &grid, paths, seed_of(&seed)?, &Sink(out))
            }
        }
    };
    match threads(cli.threads)? {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stablekit: {e}");
            e.exit_code()
        }
    }
}
