//! Command-line front end. Every run resolves its settings from flags, an
//! optional JSON config file, and defaults (flags win), executes one
//! subcommand, writes its outputs plus a fully-resolved `config.json`
//! sidecar, and exits 0 on success, 1 on a validation error, 2 on an
//! inconclusive experiment, 3 on a failed pass criterion.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::builtins::{self, ParamValue, Params};
use crate::experiments::{
    support_lower, support_upper, truncation_consistency, wong_zakai_convergence,
    ConvergenceReport, McSettings, Verdict,
};
use crate::expr::lyapunov_from_expression;
use crate::integrate::{integrate_sde, solve_skeleton, TrajectoryStatus};
use crate::lyapunov::{audit_sde, DomainSpec};
use crate::models::{SdeModel, WzVariant};
use crate::paths::{CameronMartinPath, DyadicWienerPath};
use crate::report;

pub const DEFAULT_SEED: u64 = 42;
const SEED_ENV: &str = "WZ_LAB_SEED";
const DEFAULT_OUT_DIR: &str = "wz-lab-out";
const DEFAULT_LEVELS: [u32; 4] = [2, 4, 6, 8];
const DEFAULT_LEVEL_FINE: u32 = 12;
const DEFAULT_SAMPLES: usize = 500;
const DEFAULT_DELTA: f64 = 0.25;
const DEFAULT_EPSILON: f64 = 0.3;

/// One run's full settings, as written to the `config.json` sidecar.
/// Unknown keys are rejected so that typos fail loudly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub level_fine: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<HSpec>,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none")]
    pub v_expr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

/// Control path: either a shorthand string ("zero", "slope:c" or
/// "slope:c1,c2,.."), or explicit breakpoints with one slope row per
/// interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HSpec {
    Text(String),
    Explicit {
        breakpoints: Vec<f64>,
        slopes: Vec<Vec<f64>>,
    },
}

impl HSpec {
    /// Builds the path for a driver of the given dimension. A single slope
    /// broadcasts across all components.
    pub fn build(&self, dim: usize) -> Result<CameronMartinPath, String> {
        match self {
            HSpec::Text(text) => {
                if text == "zero" {
                    return Ok(CameronMartinPath::zero(dim));
                }
                let Some(rest) = text.strip_prefix("slope:") else {
                    return Err(format!(
                        "unrecognized control spec {text:?} (expected \"zero\" or \"slope:c1,c2,..\")"
                    ));
                };
                let slopes = parse_float_list(rest)
                    .map_err(|e| format!("bad slope in {text:?}: {e}"))?;
                let slopes = broadcast(slopes, dim)
                    .map_err(|_| format!("control spec {text:?} has the wrong width for {dim} components"))?;
                CameronMartinPath::constant_slope(&slopes).map_err(|e| e.to_string())
            }
            HSpec::Explicit {
                breakpoints,
                slopes,
            } => {
                let mut flat = Vec::with_capacity(slopes.len() * dim);
                for row in slopes {
                    let row = broadcast(row.clone(), dim).map_err(|_| {
                        format!(
                            "each slope row needs {dim} entries, got {}",
                            row.len()
                        )
                    })?;
                    flat.extend_from_slice(&row);
                }
                CameronMartinPath::new(dim, breakpoints.clone(), flat)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

fn parse_float_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("{p:?} is not a number"))
        })
        .collect()
}

fn broadcast(values: Vec<f64>, dim: usize) -> Result<Vec<f64>, ()> {
    if values.len() == dim {
        Ok(values)
    } else if values.len() == 1 {
        Ok(vec![values[0]; dim])
    } else {
        Err(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "wz-lab",
    version,
    about = "Numerical laboratory for polygonal-noise approximation of stochastic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the stochastic equation along one sampled Wiener path.
    Simulate(SimulateArgs),
    /// Solve the deterministic skeleton equation for a control path.
    Skeleton(SkeletonArgs),
    /// Estimate how fast polygonal-driver solutions approach the limit.
    #[command(name = "wong-zakai")]
    WongZakai(WongZakaiArgs),
    /// Estimate how often the solution strays from its matched skeleton.
    #[command(name = "support-upper")]
    SupportUpper(SupportUpperArgs),
    /// Estimate how often the solution tracks a chosen control path.
    #[command(name = "support-lower")]
    SupportLower(SupportLowerArgs),
    /// Check truncated and plain runs agree while inside the ball.
    Truncation(TruncationArgs),
    /// Audit the growth and dissipation conditions for a model.
    Lyapunov(LyapunovArgs),
    /// Render the chart for a saved convergence report.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file; explicit flags win over its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for outputs, created if missing.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<String>,
    /// Primary output file, overriding the default inside --out-dir.
    #[arg(long, value_name = "FILE")]
    out: Option<String>,
    /// Cap on concurrent samples; results do not depend on it.
    #[arg(long, value_name = "K")]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Built-in model name.
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
    /// Model parameter override, repeatable (e.g. --param sigma=0.4).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Starting state, comma-separated.
    #[arg(long, value_name = "X1,..", value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Dyadic refinement level of the simulated path.
    #[arg(long = "L", value_name = "LEVEL")]
    level_fine: Option<u32>,
    /// Noise seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SkeletonArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Control path ("zero" or "slope:c1,c2,..").
    #[arg(long, value_name = "SPEC")]
    h: Option<String>,
    /// Dyadic level of the solver grid.
    #[arg(long, value_name = "LEVEL")]
    n: Option<u32>,
}

#[derive(Args, Debug)]
struct WongZakaiArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Coefficient arrangement: "skeleton" or "shifted".
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Polygonal levels to compare, comma-separated.
    #[arg(long, value_name = "N1,N2,..", value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Distance threshold counted as an exceedance.
    #[arg(long, value_name = "D")]
    delta: Option<f64>,
    /// Monte Carlo sample count.
    #[arg(long = "M", value_name = "COUNT")]
    mc_samples: Option<usize>,
    /// Dyadic refinement level of the reference solution.
    #[arg(long = "L", value_name = "LEVEL")]
    level_fine: Option<u32>,
    /// Control path ("zero" or "slope:c1,c2,..").
    #[arg(long, value_name = "SPEC")]
    h: Option<String>,
    /// Noise seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SupportUpperArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Polygonal levels to compare, comma-separated.
    #[arg(long, value_name = "N1,N2,..", value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Distance threshold counted as an exceedance.
    #[arg(long, value_name = "D")]
    delta: Option<f64>,
    /// Monte Carlo sample count.
    #[arg(long = "M", value_name = "COUNT")]
    mc_samples: Option<usize>,
    /// Dyadic refinement level of the reference solution.
    #[arg(long = "L", value_name = "LEVEL")]
    level_fine: Option<u32>,
    /// Noise seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SupportLowerArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Polygonal levels to compare, comma-separated.
    #[arg(long, value_name = "N1,N2,..", value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Tube radius around the skeleton.
    #[arg(long, value_name = "E")]
    epsilon: Option<f64>,
    /// Monte Carlo sample count.
    #[arg(long = "M", value_name = "COUNT")]
    mc_samples: Option<usize>,
    /// Dyadic refinement level of the reference solution.
    #[arg(long = "L", value_name = "LEVEL")]
    level_fine: Option<u32>,
    /// Control path the tube is centered on.
    #[arg(long, value_name = "SPEC")]
    h: Option<String>,
    /// Noise seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TruncationArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Coefficient arrangement: "skeleton" or "shifted".
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Truncation radii to sweep, comma-separated.
    #[arg(long, value_name = "R1,R2,..", value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Polygonal level of the drivers.
    #[arg(long, value_name = "LEVEL")]
    n: Option<u32>,
    /// Independent noise draws per radius.
    #[arg(long, value_name = "COUNT")]
    trials: Option<usize>,
    /// Dyadic refinement level of the drivers.
    #[arg(long = "L", value_name = "LEVEL")]
    level_fine: Option<u32>,
    /// Optional control path ("zero" or "slope:c1,c2,..").
    #[arg(long, value_name = "SPEC")]
    h: Option<String>,
    /// Noise seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct LyapunovArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Custom Lyapunov function (e.g. "x1^2 + x2^2"); the model's
    /// registered one is used when absent.
    #[arg(long = "V", value_name = "EXPR")]
    v_expr: Option<String>,
    /// Dissipation exponent threshold.
    #[arg(long, value_name = "T")]
    theta: Option<f64>,
    /// Dissipation rate threshold.
    #[arg(long, value_name = "E")]
    eta: Option<f64>,
    /// Trace growth constant.
    #[arg(long = "C", value_name = "C")]
    c_bound: Option<f64>,
    /// Trace offset constant.
    #[arg(long = "M", value_name = "M")]
    m_bound: Option<f64>,
    /// Sampling region: box:LO:HI, ball:R, or logradial.
    #[arg(long, value_name = "SPEC")]
    domain: Option<String>,
    /// Number of audit points.
    #[arg(long, value_name = "COUNT")]
    samples: Option<usize>,
    /// Sampling seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Convergence report JSON to render.
    #[arg(long, value_name = "FILE")]
    input: Option<String>,
}

/// Parses argv and executes one subcommand, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<i32, String> {
    match command {
        Command::Simulate(a) => run_simulate(a),
        Command::Skeleton(a) => run_skeleton(a),
        Command::WongZakai(a) => run_wong_zakai(a),
        Command::SupportUpper(a) => run_support_upper(a),
        Command::SupportLower(a) => run_support_lower(a),
        Command::Truncation(a) => run_truncation(a),
        Command::Lyapunov(a) => run_lyapunov(a),
        Command::Plot(a) => run_plot(a),
    }
}

fn load_config(path: &Option<PathBuf>, expected_command: &str) -> Result<RunConfig, String> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(cmd) = &config.command {
        if cmd != expected_command {
            return Err(format!(
                "config {} is for command {cmd:?}, invoked as {expected_command:?}",
                path.display()
            ));
        }
    }
    Ok(config)
}

fn resolve_seed(cli: Option<u64>, file: Option<u64>) -> Result<u64, String> {
    if let Some(seed) = cli.or(file) {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("{SEED_ENV} must be an unsigned integer, got {text:?}")),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_SEED),
        Err(e) => Err(format!("{SEED_ENV}: {e}")),
    }
}

fn parse_param(text: &str) -> Result<(String, ParamValue), String> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| format!("--param needs KEY=VALUE, got {text:?}"))?;
    if key.trim().is_empty() {
        return Err(format!("--param needs a key, got {text:?}"));
    }
    if let Ok(x) = value.trim().parse::<f64>() {
        return Ok((key.trim().to_string(), ParamValue::Scalar(x)));
    }
    let list = parse_float_list(value)
        .map_err(|e| format!("--param value {value:?} is neither a number nor a comma list ({e})"))?;
    Ok((key.trim().to_string(), ParamValue::Vector(list)))
}

/// Model name plus merged parameters, CLI overrides winning per key.
fn resolve_model_spec(
    cli: &ModelArgs,
    file: &RunConfig,
) -> Result<(String, Params), String> {
    let name = cli
        .model
        .clone()
        .or_else(|| file.model.clone())
        .ok_or("--model is required")?;
    let mut params: Params = file.params.clone().unwrap_or_default();
    for raw in &cli.params {
        let (key, value) = parse_param(raw)?;
        params.insert(key, value);
    }
    Ok((name, params))
}

fn apply_x0(model: SdeModel, x0: Option<Vec<f64>>) -> Result<SdeModel, String> {
    match x0 {
        Some(v) => model.with_x0(v).map_err(|e| e.to_string()),
        None => Ok(model),
    }
}

fn parse_variant(text: &str) -> Result<WzVariant, String> {
    match text {
        "skeleton" => Ok(WzVariant::Skeleton),
        "shifted" => Ok(WzVariant::Shifted),
        other => Err(format!("unknown variant {other:?} (skeleton or shifted)")),
    }
}

fn verdict_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Pass => 0,
        Verdict::Inconclusive => 2,
        Verdict::Fail => 3,
    }
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, String> {
    match workers {
        None => Ok(f()),
        Some(0) => Err("--workers must be at least 1".into()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| format!("cannot build worker pool: {e}"))?;
            Ok(pool.install(f))
        }
    }
}

/// Where outputs land: the primary file, the directory holding it (which
/// also receives the config sidecar and any secondary files), and the
/// resolved settings to record.
struct OutPlan {
    dir: PathBuf,
    primary: PathBuf,
    out_dir: String,
    out: Option<String>,
}

fn out_plan(common: &CommonArgs, file: &RunConfig, default_name: &str) -> OutPlan {
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| DEFAULT_OUT_DIR.to_string());
    let out = common.out.clone().or_else(|| file.out.clone());
    match &out {
        Some(f) => {
            let primary = PathBuf::from(f);
            let dir = primary
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            OutPlan {
                dir,
                primary,
                out_dir,
                out,
            }
        }
        None => {
            let dir = PathBuf::from(&out_dir);
            let primary = dir.join(default_name);
            OutPlan {
                dir,
                primary,
                out_dir,
                out,
            }
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_sidecar(plan: &OutPlan, resolved: &RunConfig) -> Result<(), String> {
    let text = report::to_json_pretty(resolved).map_err(|e| e.to_string())?;
    write_file(&plan.dir.join("config.json"), &text)
}

fn none_if_empty(params: Params) -> Option<Params> {
    if params.is_empty() {
        None
    } else {
        Some(params)
    }
}

/// Writes report.json, the CSV table, and (with two or more levels) the
/// chart, all named after the primary file's stem.
fn emit_convergence_outputs(
    plan: &OutPlan,
    rep: &ConvergenceReport,
) -> Result<(), String> {
    ensure_dir(&plan.dir)?;
    write_file(
        &plan.primary,
        &report::to_json_pretty(rep).map_err(|e| e.to_string())?,
    )?;
    let stem = plan
        .primary
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    write_file(
        &plan.dir.join(format!("{stem}.csv")),
        &report::convergence_csv(rep),
    )?;
    if rep.estimates.len() >= 2 {
        report::emit_plot(rep, &plan.dir.join(format!("{stem}.svg")))
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn status_text(status: TrajectoryStatus) -> String {
    match status {
        TrajectoryStatus::Completed => "completed".into(),
        TrajectoryStatus::Escaped { time } => format!("escaped at t={time}"),
        TrajectoryStatus::NonFinite { time } => format!("non-finite at t={time}"),
    }
}

fn run_simulate(a: SimulateArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "simulate")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let level_fine = a.level_fine.or(file.level_fine).unwrap_or(DEFAULT_LEVEL_FINE);
    let seed = resolve_seed(a.seed, file.seed)?;
    let plan = out_plan(&a.common, &file, "trajectory.csv");

    let w = Arc::new(
        DyadicWienerPath::sample(model.noise_dim, level_fine, seed).map_err(|e| e.to_string())?,
    );
    let traj = integrate_sde(&model, &w, &model.x0).map_err(|e| e.to_string())?;

    ensure_dir(&plan.dir)?;
    write_file(&plan.primary, &report::trajectory_csv(&traj))?;
    let resolved = RunConfig {
        command: Some("simulate".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        x0: Some(model.x0.clone()),
        level_fine: Some(level_fine),
        seed: Some(seed),
        workers: a.common.workers.or(file.workers),
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "simulate {name}: {} -> {}",
        status_text(traj.status()),
        plan.primary.display()
    );
    Ok(0)
}

fn run_skeleton(a: SkeletonArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "skeleton")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let n = a.n.or(file.n).unwrap_or(DEFAULT_LEVEL_FINE);
    let hspec = a
        .h
        .clone()
        .map(HSpec::Text)
        .or_else(|| file.h.clone())
        .unwrap_or_else(|| HSpec::Text("zero".into()));
    let h = hspec.build(model.noise_dim)?;
    let plan = out_plan(&a.common, &file, "skeleton.csv");

    let traj = solve_skeleton(&model, &h, &model.x0, n).map_err(|e| e.to_string())?;

    ensure_dir(&plan.dir)?;
    write_file(&plan.primary, &report::trajectory_csv(&traj))?;
    let resolved = RunConfig {
        command: Some("skeleton".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        x0: Some(model.x0.clone()),
        n: Some(n),
        h: Some(hspec),
        workers: a.common.workers.or(file.workers),
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "skeleton {name}: {} -> {}",
        status_text(traj.status()),
        plan.primary.display()
    );
    Ok(0)
}

fn run_wong_zakai(a: WongZakaiArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "wong-zakai")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let variant_name = a
        .variant
        .clone()
        .or_else(|| file.variant.clone())
        .unwrap_or_else(|| "skeleton".into());
    let variant = parse_variant(&variant_name)?;
    let levels = a
        .levels
        .clone()
        .or_else(|| file.levels.clone())
        .unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let delta = a.delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
    let samples = a.mc_samples.or(file.mc_samples).unwrap_or(DEFAULT_SAMPLES);
    let level_fine = a.level_fine.or(file.level_fine).unwrap_or(DEFAULT_LEVEL_FINE);
    let seed = resolve_seed(a.seed, file.seed)?;
    let hspec = a
        .h
        .clone()
        .map(HSpec::Text)
        .or_else(|| file.h.clone())
        .unwrap_or_else(|| HSpec::Text("zero".into()));
    let h = hspec.build(model.noise_dim)?;
    let workers = a.common.workers.or(file.workers);
    let plan = out_plan(&a.common, &file, "report.json");

    let sys = model.reduce(variant);
    let mc = McSettings {
        samples,
        level_fine,
        seed,
    };
    let rep = with_workers(workers, || {
        wong_zakai_convergence(&sys, &name, &h, &model.x0, &levels, delta, mc)
    })?
    .map_err(|e| e.to_string())?;

    emit_convergence_outputs(&plan, &rep)?;
    let resolved = RunConfig {
        command: Some("wong-zakai".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        variant: Some(variant_name),
        x0: Some(model.x0.clone()),
        levels: Some(levels),
        delta: Some(delta),
        mc_samples: Some(samples),
        level_fine: Some(level_fine),
        seed: Some(seed),
        h: Some(hspec),
        workers,
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "wong-zakai {name}: verdict={:?} -> {}",
        rep.verdict,
        plan.primary.display()
    );
    Ok(verdict_code(rep.verdict))
}

fn run_support_upper(a: SupportUpperArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "support-upper")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let levels = a
        .levels
        .clone()
        .or_else(|| file.levels.clone())
        .unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let delta = a.delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
    let samples = a.mc_samples.or(file.mc_samples).unwrap_or(DEFAULT_SAMPLES);
    let level_fine = a.level_fine.or(file.level_fine).unwrap_or(DEFAULT_LEVEL_FINE);
    let seed = resolve_seed(a.seed, file.seed)?;
    let workers = a.common.workers.or(file.workers);
    let plan = out_plan(&a.common, &file, "report.json");

    let mc = McSettings {
        samples,
        level_fine,
        seed,
    };
    let rep = with_workers(workers, || support_upper(&model, &levels, delta, mc))?
        .map_err(|e| e.to_string())?;

    emit_convergence_outputs(&plan, &rep)?;
    let resolved = RunConfig {
        command: Some("support-upper".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        x0: Some(model.x0.clone()),
        levels: Some(levels),
        delta: Some(delta),
        mc_samples: Some(samples),
        level_fine: Some(level_fine),
        seed: Some(seed),
        workers,
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "support-upper {name}: verdict={:?} -> {}",
        rep.verdict,
        plan.primary.display()
    );
    Ok(verdict_code(rep.verdict))
}

fn run_support_lower(a: SupportLowerArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "support-lower")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let levels = a
        .levels
        .clone()
        .or_else(|| file.levels.clone())
        .unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let epsilon = a.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
    let samples = a.mc_samples.or(file.mc_samples).unwrap_or(DEFAULT_SAMPLES);
    let level_fine = a.level_fine.or(file.level_fine).unwrap_or(DEFAULT_LEVEL_FINE);
    let seed = resolve_seed(a.seed, file.seed)?;
    let hspec = a
        .h
        .clone()
        .map(HSpec::Text)
        .or_else(|| file.h.clone())
        .unwrap_or_else(|| HSpec::Text("zero".into()));
    let h = hspec.build(model.noise_dim)?;
    let workers = a.common.workers.or(file.workers);
    let plan = out_plan(&a.common, &file, "report.json");

    let mc = McSettings {
        samples,
        level_fine,
        seed,
    };
    let rep = with_workers(workers, || support_lower(&model, &h, &levels, epsilon, mc))?
        .map_err(|e| e.to_string())?;

    emit_convergence_outputs(&plan, &rep)?;
    let resolved = RunConfig {
        command: Some("support-lower".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        x0: Some(model.x0.clone()),
        levels: Some(levels),
        epsilon: Some(epsilon),
        mc_samples: Some(samples),
        level_fine: Some(level_fine),
        seed: Some(seed),
        h: Some(hspec),
        workers,
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "support-lower {name}: verdict={:?} -> {}",
        rep.verdict,
        plan.primary.display()
    );
    Ok(verdict_code(rep.verdict))
}

fn run_truncation(a: TruncationArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "truncation")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let variant_name = a
        .variant
        .clone()
        .or_else(|| file.variant.clone())
        .unwrap_or_else(|| "shifted".into());
    let variant = parse_variant(&variant_name)?;
    let radii = a
        .radii
        .clone()
        .or_else(|| file.radii.clone())
        .unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
    let n = a.n.or(file.n).unwrap_or(4);
    let trials = a.trials.or(file.trials).unwrap_or(100);
    let level_fine = a.level_fine.or(file.level_fine).unwrap_or(DEFAULT_LEVEL_FINE);
    let seed = resolve_seed(a.seed, file.seed)?;
    let hspec = a.h.clone().map(HSpec::Text).or_else(|| file.h.clone());
    let h = match &hspec {
        Some(spec) => Some(spec.build(model.noise_dim)?),
        None => None,
    };
    let workers = a.common.workers.or(file.workers);
    let plan = out_plan(&a.common, &file, "report.json");

    let sys = model.reduce(variant);
    let rep = with_workers(workers, || {
        truncation_consistency(
            &sys,
            &name,
            h.as_ref(),
            &model.x0,
            &radii,
            n,
            trials,
            level_fine,
            seed,
        )
    })?
    .map_err(|e| e.to_string())?;

    ensure_dir(&plan.dir)?;
    write_file(
        &plan.primary,
        &report::to_json_pretty(&rep).map_err(|e| e.to_string())?,
    )?;
    let stem = plan
        .primary
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    write_file(
        &plan.dir.join(format!("{stem}.csv")),
        &report::truncation_csv(&rep),
    )?;
    let resolved = RunConfig {
        command: Some("truncation".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        variant: Some(variant_name),
        x0: Some(model.x0.clone()),
        radii: Some(radii),
        n: Some(n),
        trials: Some(trials),
        level_fine: Some(level_fine),
        seed: Some(seed),
        h: hspec,
        workers,
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!(
        "truncation {name}: verdict={:?} -> {}",
        rep.verdict,
        plan.primary.display()
    );
    Ok(verdict_code(rep.verdict))
}

fn run_lyapunov(a: LyapunovArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "lyapunov")?;
    let (name, params) = resolve_model_spec(&a.model, &file)?;
    let built = builtins::build(&name, &params).map_err(|e| e.to_string())?;
    let model = apply_x0(built.model, a.model.x0.clone().or_else(|| file.x0.clone()))?;
    let v_expr = a.v_expr.clone().or_else(|| file.v_expr.clone());
    let theta = a.theta.or(file.theta);
    let eta = a.eta.or(file.eta);
    let c_bound = a.c_bound.or(file.c_bound);
    let m_bound = a.m_bound.or(file.m_bound);
    let data = match &v_expr {
        Some(src) => lyapunov_from_expression(
            src,
            model.state_dim,
            theta.unwrap_or(1.0),
            eta.unwrap_or(1.0),
            c_bound.unwrap_or(1.0),
            m_bound.unwrap_or(1.0),
        )
        .map_err(|e| e.to_string())?,
        None => {
            let base = built.lyapunov;
            if theta.is_some() || eta.is_some() || c_bound.is_some() || m_bound.is_some() {
                let (t, e, c, m) = (
                    theta.unwrap_or(base.theta),
                    eta.unwrap_or(base.eta),
                    c_bound.unwrap_or(base.c_bound),
                    m_bound.unwrap_or(base.m_bound),
                );
                base.with_constants(t, e, c, m).map_err(|e| e.to_string())?
            } else {
                base
            }
        }
    };
    let domain_text = a
        .domain
        .clone()
        .or_else(|| file.domain.clone())
        .unwrap_or_else(|| "box:-10:10".into());
    let spec = DomainSpec::parse(&domain_text).map_err(|e| e.to_string())?;
    let samples = a.samples.or(file.samples).unwrap_or(2000);
    let seed = resolve_seed(a.seed, file.seed)?;
    let workers = a.common.workers.or(file.workers);
    let plan = out_plan(&a.common, &file, "audit.json");

    let rep = with_workers(workers, || audit_sde(&model, &data, &spec, samples, seed))?
        .map_err(|e| e.to_string())?;

    ensure_dir(&plan.dir)?;
    write_file(&plan.primary, &rep.to_json())?;
    let resolved = RunConfig {
        command: Some("lyapunov".into()),
        model: Some(name.clone()),
        params: none_if_empty(params),
        v_expr,
        theta: Some(data.theta),
        eta: Some(data.eta),
        c_bound: Some(data.c_bound),
        m_bound: Some(data.m_bound),
        domain: Some(domain_text),
        samples: Some(samples),
        seed: Some(seed),
        workers,
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    for (cond, audit) in &rep.conditions {
        println!(
            "lyapunov {name}: {cond} {}",
            if audit.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if rep.all_pass() { 0 } else { 3 })
}

fn run_plot(a: PlotArgs) -> Result<i32, String> {
    let file = load_config(&a.common.config, "plot")?;
    let input = a
        .input
        .clone()
        .or_else(|| file.input.clone())
        .ok_or("--input is required")?;
    let text =
        fs::read_to_string(&input).map_err(|e| format!("cannot read {input}: {e}"))?;
    let rep: ConvergenceReport =
        serde_json::from_str(&text).map_err(|e| format!("{input}: {e}"))?;
    let plan = out_plan(&a.common, &file, "chart.svg");

    ensure_dir(&plan.dir)?;
    report::emit_plot(&rep, &plan.primary).map_err(|e| e.to_string())?;
    let resolved = RunConfig {
        command: Some("plot".into()),
        input: Some(input),
        out_dir: Some(plan.out_dir.clone()),
        out: plan.out.clone(),
        ..RunConfig::default()
    };
    write_sidecar(&plan, &resolved)?;
    println!("plot: {} -> {}", rep.model, plan.primary.display());
    Ok(0)
}
