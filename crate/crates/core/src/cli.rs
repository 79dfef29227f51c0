//! Config files, trace CSVs and the `run` / `compare` commands.
//!
//! A config is a TOML document:
//!
//! ```toml
//! schema = "mabo-config/1"
//! n_agents = 2
//! acquisitions = ["lcb"]        # one entry for all agents, or one per agent
//! rho = 10.0
//! max_admm_iters = 200
//! primal_tol = 1e-6            # optional; stops early together with dual_tol
//! dual_tol = 1e-6
//!
//! [domain]
//! lower = [0.0]
//! upper = [10.0]
//!
//! [[functions]]
//! kind = "quadratic"
//! center = [1.0]
//!
//! [[functions]]
//! kind = "quadratic"
//! center = [3.0]
//! ```
//!
//! Instead of `functions`, a `[platoon]` table selects the fuel benchmark with
//! one vehicle per agent.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::acquisition::{AcquisitionKind, AcquisitionSpec};
use crate::admm::Residuals;
use crate::agent::{HyperMode, DEFAULT_N0};
use crate::domain::BoxDomain;
use crate::error::Error;
use crate::gp::{GpConfig, HyperBounds, KernelParams};
use crate::objective::{Objective, SharedObjective};
use crate::platoon::{sample_fleet, true_platoon_optimum, FleetConfig, FuelModel, SpeedDomain};
use crate::runtime::{
    run_mabo, run_model_based_admm, AgentConfig, Execution, RunConfig, RunTrace, DEFAULT_MAX_ADMM_ITERS,
    DEFAULT_RHO,
};

pub const SCHEMA: &str = "mabo-config/1";

#[derive(Debug)]
pub enum CliError {
    /// Config does not parse or violates the schema; `path` names the field.
    Schema { path: String, msg: String },
    Runtime(Error),
    Io(String),
}

impl CliError {
    fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Schema { path: path.into(), msg: msg.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema { path, msg } => write!(f, "config error at `{path}`: {msg}"),
            CliError::Runtime(e) => write!(f, "run failed: {e}"),
            CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Mabo,
    ModelAdmm,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerAgent<T> {
    One(T),
    Each(Vec<T>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatoonSection {
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    d: Option<f64>,
    perturbation: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionSection {
    kind: String,
    center: Option<Vec<f64>>,
    scale: Option<f64>,
    value: Option<f64>,
    #[serde(default)]
    opaque: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperSection {
    mode: String,
    signal_variance: Option<f64>,
    lengthscale: Option<PerAgent<f64>>,
    noise_variance: Option<f64>,
    signal_variance_bounds: Option<(f64, f64)>,
    lengthscale_bounds: Option<(f64, f64)>,
    noise_variance_bounds: Option<(f64, f64)>,
    standardize: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema: String,
    n_agents: usize,
    domain: DomainSection,
    acquisitions: PerAgent<String>,
    rho: Option<f64>,
    beta: Option<f64>,
    xi: Option<f64>,
    inner_iters: Option<PerAgent<usize>>,
    n0: Option<usize>,
    max_admm_iters: Option<usize>,
    seed: Option<u64>,
    noise_std: Option<f64>,
    primal_tol: Option<f64>,
    dual_tol: Option<f64>,
    execution: Option<String>,
    hyperparameters: Option<HyperSection>,
    platoon: Option<PlatoonSection>,
    functions: Option<Vec<FunctionSection>>,
}

/// Built-in test cost for one agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// `scale · ‖x − center‖²`
    Quadratic { center: Vec<f64>, scale: f64 },
    Zero,
    Constant(f64),
}

impl Objective for Builtin {
    fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            Builtin::Quadratic { center, scale } => {
                scale * x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
            }
            Builtin::Zero => 0.0,
            Builtin::Constant(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSource {
    pub function: Builtin,
    /// Only callable as a black box; the model-based baseline cannot use it.
    pub opaque: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSource {
    Platoon { fleet: Vec<FuelModel>, domain: SpeedDomain },
    Functions(Vec<FunctionSource>),
}

/// A validated config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub run: RunConfig,
    pub source: OracleSource,
}

impl Experiment {
    pub fn oracles(&self) -> Vec<SharedObjective> {
        match &self.source {
            OracleSource::Platoon { fleet, .. } => fleet.iter().map(|m| Arc::new(*m) as SharedObjective).collect(),
            OracleSource::Functions(fs) => fs.iter().map(|f| Arc::new(f.function.clone()) as SharedObjective).collect(),
        }
    }

    /// Known models for the baseline, or the field that rules them out.
    pub fn models(&self) -> Result<Vec<SharedObjective>, CliError> {
        if let OracleSource::Functions(fs) = &self.source {
            if let Some(i) = fs.iter().position(|f| f.opaque) {
                return Err(CliError::schema(
                    format!("functions[{i}].opaque"),
                    "the model-based baseline needs known models; this function is black-box only",
                ));
            }
        }
        Ok(self.oracles())
    }

    /// Minimizer of the platoon's total fuel use, if this is the benchmark.
    pub fn true_optimum(&self) -> Result<Option<f64>, CliError> {
        match &self.source {
            OracleSource::Platoon { fleet, domain } => Ok(Some(true_platoon_optimum(fleet, domain)?.0)),
            OracleSource::Functions(_) => Ok(None),
        }
    }
}

fn per_agent<T: Clone>(v: PerAgent<T>, n: usize, path: &str) -> Result<Vec<T>, CliError> {
    match v {
        PerAgent::One(x) => Ok(vec![x; n]),
        PerAgent::Each(xs) if xs.len() == 1 => Ok(vec![xs[0].clone(); n]),
        PerAgent::Each(xs) if xs.len() == n => Ok(xs),
        PerAgent::Each(xs) => Err(CliError::schema(path, format!("expected 1 or {n} entries, got {}", xs.len()))),
    }
}

fn positive(v: f64, path: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::schema(path, format!("must be > 0, got {v}")))
    }
}

fn non_negative(v: f64, path: &str) -> Result<f64, CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::schema(path, format!("must be >= 0, got {v}")))
    }
}

fn bounds(b: (f64, f64), path: &str) -> Result<(f64, f64), CliError> {
    if b.0 > 0.0 && b.0 <= b.1 && b.1.is_finite() {
        Ok(b)
    } else {
        Err(CliError::schema(path, format!("need 0 < lo <= hi, got [{}, {}]", b.0, b.1)))
    }
}

fn hyper_mode(h: HyperSection, domain: &BoxDomain) -> Result<(HyperMode, GpConfig), CliError> {
    let gp = GpConfig { standardize: h.standardize.unwrap_or(true) };
    let dim = domain.dim();
    match h.mode.as_str() {
        "refit" => {
            let mut b = HyperBounds::for_domain(domain);
            if let Some(v) = h.signal_variance_bounds {
                b.signal_variance = bounds(v, "hyperparameters.signal_variance_bounds")?;
            }
            if let Some(v) = h.lengthscale_bounds {
                b.lengthscales = vec![bounds(v, "hyperparameters.lengthscale_bounds")?; dim];
            }
            if let Some(v) = h.noise_variance_bounds {
                b.noise_variance = bounds(v, "hyperparameters.noise_variance_bounds")?;
            }
            Ok((HyperMode::Refit(b), gp))
        }
        "fixed" => {
            let sf = positive(
                h.signal_variance
                    .ok_or_else(|| CliError::schema("hyperparameters.signal_variance", "required when mode = \"fixed\""))?,
                "hyperparameters.signal_variance",
            )?;
            let ls = per_agent(
                h.lengthscale
                    .ok_or_else(|| CliError::schema("hyperparameters.lengthscale", "required when mode = \"fixed\""))?,
                dim,
                "hyperparameters.lengthscale",
            )?;
            for l in &ls {
                positive(*l, "hyperparameters.lengthscale")?;
            }
            let noise = non_negative(h.noise_variance.unwrap_or(0.0), "hyperparameters.noise_variance")?;
            let p = KernelParams::new(sf, ls, noise).map_err(|e| CliError::schema("hyperparameters", e.to_string()))?;
            Ok((HyperMode::Fixed(p), gp))
        }
        other => Err(CliError::schema("hyperparameters.mode", format!("expected \"refit\" or \"fixed\", got {other:?}"))),
    }
}

fn builtin(f: FunctionSection, dim: usize, path: &str) -> Result<FunctionSource, CliError> {
    let function = match f.kind.as_str() {
        "quadratic" => {
            let center = f.center.ok_or_else(|| CliError::schema(format!("{path}.center"), "required for quadratic"))?;
            if center.len() != dim || center.iter().any(|c| !c.is_finite()) {
                return Err(CliError::schema(
                    format!("{path}.center"),
                    format!("expected {dim} finite coordinates, got {center:?}"),
                ));
            }
            let scale = positive(f.scale.unwrap_or(1.0), &format!("{path}.scale"))?;
            Builtin::Quadratic { center, scale }
        }
        "zero" => Builtin::Zero,
        "constant" => {
            let v = f.value.ok_or_else(|| CliError::schema(format!("{path}.value"), "required for constant"))?;
            if !v.is_finite() {
                return Err(CliError::schema(format!("{path}.value"), "must be finite"));
            }
            Builtin::Constant(v)
        }
        other => {
            return Err(CliError::schema(
                format!("{path}.kind"),
                format!("expected quadratic, zero or constant, got {other:?}"),
            ))
        }
    };
    Ok(FunctionSource { function, opaque: f.opaque })
}

/// Parse and validate a config. `seed` overrides the file's seed.
pub fn parse_config(text: &str, seed: Option<u64>) -> Result<Experiment, CliError> {
    let raw: ConfigFile = toml::from_str(text).map_err(|e| CliError::schema("config", e.message().to_string()))?;
    if raw.schema != SCHEMA {
        return Err(CliError::schema("schema", format!("expected {SCHEMA:?}, got {:?}", raw.schema)));
    }
    let n = raw.n_agents;
    if n == 0 {
        return Err(CliError::schema("n_agents", "must be >= 1"));
    }
    let domain = BoxDomain::new(raw.domain.lower.clone(), raw.domain.upper.clone())
        .map_err(|e| CliError::schema("domain", e.to_string()))?;

    let rho = positive(raw.rho.unwrap_or(DEFAULT_RHO), "rho")?;
    let beta = positive(raw.beta.unwrap_or(4.0), "beta")?;
    let xi = non_negative(raw.xi.unwrap_or(0.01), "xi")?;
    let kinds = per_agent(raw.acquisitions, n, "acquisitions")?;
    let inner = per_agent(raw.inner_iters.unwrap_or(PerAgent::One(1)), n, "inner_iters")?;
    let mut agents = Vec::with_capacity(n);
    for (i, (name, inner_iters)) in kinds.iter().zip(inner).enumerate() {
        let kind = AcquisitionKind::parse(name).ok_or_else(|| {
            CliError::schema(format!("acquisitions[{i}]"), format!("expected lcb, ei, pi or greedy, got {name:?}"))
        })?;
        if inner_iters == 0 {
            return Err(CliError::schema(format!("inner_iters[{i}]"), "must be >= 1"));
        }
        let acquisition =
            AcquisitionSpec::new(kind, beta, xi).map_err(|e| CliError::schema(format!("acquisitions[{i}]"), e.to_string()))?;
        agents.push(AgentConfig { stream: i as u64, acquisition, inner_iters });
    }

    let n0 = raw.n0.unwrap_or(DEFAULT_N0);
    if n0 == 0 {
        return Err(CliError::schema("n0", "must be >= 1"));
    }
    let max_admm_iters = raw.max_admm_iters.unwrap_or(DEFAULT_MAX_ADMM_ITERS);
    if max_admm_iters == 0 {
        return Err(CliError::schema("max_admm_iters", "must be >= 1"));
    }
    let noise_std = non_negative(raw.noise_std.unwrap_or(0.0), "noise_std")?;
    let tolerance = match (raw.primal_tol, raw.dual_tol) {
        (None, None) => None,
        (Some(p), Some(d)) => Some(Residuals { primal: non_negative(p, "primal_tol")?, dual: non_negative(d, "dual_tol")? }),
        (Some(_), None) => return Err(CliError::schema("dual_tol", "required when primal_tol is set")),
        (None, Some(_)) => return Err(CliError::schema("primal_tol", "required when dual_tol is set")),
    };
    let execution = match raw.execution.as_deref() {
        None | Some("threaded") => Execution::Threaded,
        Some("sequential") => Execution::Sequential,
        Some(other) => {
            return Err(CliError::schema("execution", format!("expected threaded or sequential, got {other:?}")))
        }
    };
    let (hyper_mode, gp) = match raw.hyperparameters {
        Some(h) => {
            let (m, gp) = hyper_mode(h, &domain)?;
            (Some(m), gp)
        }
        None => (None, GpConfig::default()),
    };
    let seed = seed.or(raw.seed).unwrap_or(0);

    let source = match (raw.platoon, raw.functions) {
        (Some(_), Some(_)) => return Err(CliError::schema("platoon", "give either [platoon] or functions, not both")),
        (None, None) => return Err(CliError::schema("functions", "give either [platoon] or functions")),
        (Some(p), None) => {
            if domain.dim() != 1 {
                return Err(CliError::schema("domain", "the platoon benchmark is one-dimensional"));
            }
            let speed = SpeedDomain::new(domain.lower()[0], domain.upper()[0])
                .map_err(|e| CliError::schema("domain", e.to_string()))?;
            let nom = FuelModel::NOMINAL;
            let nominal = FuelModel::new(
                p.a.unwrap_or(nom.a),
                p.b.unwrap_or(nom.b),
                p.c.unwrap_or(nom.c),
                p.d.unwrap_or(nom.d),
            )
            .map_err(|e| CliError::schema("platoon", e.to_string()))?;
            let perturbation = p.perturbation.unwrap_or(0.2);
            if !(0.0..1.0).contains(&perturbation) {
                return Err(CliError::schema("platoon.perturbation", format!("must lie in [0, 1), got {perturbation}")));
            }
            let fleet = sample_fleet(&FleetConfig { nominal, n_vehicles: n, perturbation, domain: speed, seed })?;
            OracleSource::Platoon { fleet, domain: speed }
        }
        (None, Some(fs)) => {
            if fs.len() != n {
                return Err(CliError::schema("functions", format!("expected {n} entries, got {}", fs.len())));
            }
            let fs = fs
                .into_iter()
                .enumerate()
                .map(|(i, f)| builtin(f, domain.dim(), &format!("functions[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            OracleSource::Functions(fs)
        }
    };

    let run = RunConfig {
        domain,
        rho,
        max_admm_iters,
        agents,
        n0,
        seed,
        noise_std,
        hyper_mode,
        gp,
        execution,
        tolerance,
    };
    run.validate().map_err(|e| CliError::schema("config", e.to_string()))?;
    Ok(Experiment { run, source })
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<Experiment, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::schema("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, seed)
}

/// Twelve significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(";")
}

/// One row per ADMM iteration: `k,x0,r,s` then `x_i,lambda_i,y_latest_i` per
/// agent. Vector-valued cells join coordinates with `;`.
pub fn trace_csv(trace: &RunTrace) -> String {
    let n = trace.n_agents();
    let mut out = String::from("k,x0,r,s");
    for i in 0..n {
        out.push_str(&format!(",x_{i},lambda_{i},y_latest_{i}"));
    }
    out.push('\n');
    for rec in &trace.records {
        out.push_str(&format!(
            "{},{},{},{}",
            rec.k,
            fmt_vec(&rec.x0),
            fmt_num(rec.residuals.primal),
            fmt_num(rec.residuals.dual)
        ));
        for i in 0..n {
            out.push_str(&format!(",{},{},{}", fmt_vec(&rec.xs[i]), fmt_vec(&rec.lambdas[i]), fmt_num(rec.newest[i].y)));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCells {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub y_latest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub x0: Vec<f64>,
    pub r: f64,
    pub s: f64,
    pub agents: Vec<AgentCells>,
}

fn parse_num(cell: &str, line: usize) -> Result<f64, Error> {
    cell.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: not a number: {cell:?}")))
}

fn parse_vec(cell: &str, line: usize) -> Result<Vec<f64>, Error> {
    cell.split(';').map(|c| parse_num(c, line)).collect()
}

/// Inverse of [`trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, Error> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty trace".into()))?;
    let cols = header.split(',').count();
    if cols < 7 || (cols - 4) % 3 != 0 || !header.starts_with("k,x0,r,s,") {
        return Err(Error::InvalidArgument(format!("unexpected header {header:?}")));
    }
    let n = (cols - 4) / 3;
    let mut rows = Vec::new();
    for (j, line) in lines.enumerate() {
        let lineno = j + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(Error::InvalidArgument(format!("line {lineno}: expected {cols} columns, got {}", cells.len())));
        }
        let k = cells[0]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("line {lineno}: bad iteration {:?}", cells[0])))?;
        let agents = (0..n)
            .map(|i| {
                let c = 4 + 3 * i;
                Ok(AgentCells {
                    x: parse_vec(cells[c], lineno)?,
                    lambda: parse_vec(cells[c + 1], lineno)?,
                    y_latest: parse_num(cells[c + 2], lineno)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        rows.push(TraceRow {
            k,
            x0: parse_vec(cells[1], lineno)?,
            r: parse_num(cells[2], lineno)?,
            s: parse_num(cells[3], lineno)?,
            agents,
        });
    }
    Ok(rows)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn summary(label: &str, trace: &RunTrace, x_star: Option<f64>) -> String {
    let last = trace.last();
    let mut s = format!(
        "{label}: final x0 = [{}], r = {}, s = {}",
        fmt_vec(&trace.final_x0),
        fmt_num(last.residuals.primal),
        fmt_num(last.residuals.dual)
    );
    if let Some(x) = x_star {
        s.push_str(&format!(", x* = {}, |x0 - x*| = {}", fmt_num(x), fmt_num((trace.final_x0[0] - x).abs())));
    }
    s
}

/// Run one mode, write its trace to `out` and return the summary line.
pub fn cmd_run(config: &Path, out: &Path, mode: Mode, seed: Option<u64>) -> Result<String, CliError> {
    let exp = load_config(config, seed)?;
    let trace = match mode {
        Mode::Mabo => run_mabo(&exp.run, &exp.oracles())?,
        Mode::ModelAdmm => run_model_based_admm(&exp.run, &exp.models()?)?,
    };
    write_out(out, &trace_csv(&trace))?;
    let label = match mode {
        Mode::Mabo => "mabo",
        Mode::ModelAdmm => "model-admm",
    };
    Ok(summary(label, &trace, exp.true_optimum()?))
}

/// Side-by-side `x0`, `r`, `s` of both modes under the same seed.
/// One row per iteration of the longer run; a run that stopped early on its
/// residual tolerances leaves its cells empty afterwards.
pub fn compare_csv(mabo: &RunTrace, admm: &RunTrace) -> String {
    let cells = |t: &RunTrace, i: usize| match t.records.get(i) {
        Some(r) => format!("{},{},{}", fmt_vec(&r.x0), fmt_num(r.residuals.primal), fmt_num(r.residuals.dual)),
        None => ",,".to_string(),
    };
    let mut out = String::from("k,x0_mabo,r_mabo,s_mabo,x0_admm,r_admm,s_admm\n");
    for i in 0..mabo.records.len().max(admm.records.len()) {
        out.push_str(&format!("{},{},{}\n", i + 1, cells(mabo, i), cells(admm, i)));
    }
    out
}

pub fn cmd_compare(config: &Path, out: &Path) -> Result<String, CliError> {
    let exp = load_config(config, None)?;
    let models = exp.models()?;
    let admm = run_model_based_admm(&exp.run, &models)?;
    let mabo = run_mabo(&exp.run, &exp.oracles())?;
    write_out(out, &compare_csv(&mabo, &admm))?;
    let x_star = exp.true_optimum()?;
    Ok(format!("{}\n{}", summary("mabo", &mabo, x_star), summary("model-admm", &admm, x_star)))
}
