//! Text configuration files.
//!
//! A config is a sequence of `key = value;` statements; a statement may span
//! several lines and `#` starts a comment. Numeric values are arithmetic
//! expressions without variables (`-3.4`, `2*pi`, `1e-3`); vectors are
//! written `{a, b, c}`, and a scalar given for a vector key is repeated for
//! every dimension. Expression values (`dynamics.x0`, `constants.tau`,
//! `noise.density`) run to the terminating `;`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Dims, Expr};
use crate::grid::{HyperRect, UniformGrid};
use crate::model::SystemModel;
use crate::noise::{CustomDensity, Family, NoiseMode, NoiseSpec};
use crate::sim::DisturbanceMode;
use crate::synthesis::{Spec, SpecKind, SynthesisMode, SynthesisOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` is set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Invalid { line: usize, key: String, message: String },
    #[error("missing mandatory key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Model(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

/// Bounds and quantization of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub eta: Vec<f64>,
}

impl GridConfig {
    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn build(&self) -> Result<UniformGrid, ConfigError> {
        UniformGrid::new(self.lb.clone(), self.ub.clone(), self.eta.clone()).map_err(|e| ConfigError::Model(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseParams {
    /// Standard deviations (a diagonal covariance is converted on load).
    Normal { sigma: Vec<f64> },
    Uniform { lb: Vec<f64>, ub: Vec<f64> },
    Exponential { rate: Vec<f64> },
    Beta { alpha: Vec<f64>, beta: Vec<f64> },
    /// Density expression in `x0` (the offset from the mean), shared by all
    /// dimensions, supported on `[lb, ub]`.
    Custom { density: String, lb: Vec<f64>, ub: Vec<f64> },
}

impl NoiseParams {
    fn name(&self) -> &'static str {
        match self {
            NoiseParams::Normal { .. } => "normal",
            NoiseParams::Uniform { .. } => "uniform",
            NoiseParams::Exponential { .. } => "exponential",
            NoiseParams::Beta { .. } => "beta",
            NoiseParams::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub params: NoiseParams,
    pub mode: NoiseMode,
    pub cutting_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecConfig {
    pub kind: SpecKind,
    pub time_steps: usize,
    pub target: Option<(Vec<f64>, Vec<f64>)>,
    pub avoid: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    /// `0` uses every available core.
    pub threads: usize,
    pub mode: SynthesisMode,
    /// Bytes.
    pub mem_budget: Option<u128>,
    pub seed: u64,
    pub runs: usize,
    pub output: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub disturbance_mode: DisturbanceMode,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            threads: 0,
            mode: SynthesisMode::Auto,
            mem_budget: None,
            seed: 0,
            runs: 100,
            output: None,
            x0: None,
            disturbance_mode: DisturbanceMode::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub states: GridConfig,
    /// `None` for autonomous systems (a single zero input is used).
    pub inputs: Option<GridConfig>,
    pub disturbances: Option<GridConfig>,
    /// Named constants in definition order; each may use earlier ones.
    pub constants: Vec<(String, String)>,
    pub dynamics: Vec<String>,
    pub noise: NoiseConfig,
    pub spec: SpecConfig,
    pub exec: ExecConfig,
}

struct Statement {
    line: usize,
    key: String,
    value: String,
}

fn statements(text: &str) -> Result<Vec<Statement>, ConfigError> {
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut start = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for (j, part) in line.split(';').enumerate() {
            if j > 0 {
                let stmt = std::mem::take(&mut buf);
                let stmt = stmt.trim();
                if !stmt.is_empty() {
                    out.push(split_statement(stmt, start)?);
                }
            }
            if buf.trim().is_empty() && !part.trim().is_empty() {
                start = i + 1;
            }
            buf.push_str(part);
            buf.push('\n');
        }
    }
    if !buf.trim().is_empty() {
        return Err(ConfigError::Syntax {
            line: start,
            message: "statement is missing its terminating `;`".into(),
        });
    }
    Ok(out)
}

fn split_statement(stmt: &str, line: usize) -> Result<Statement, ConfigError> {
    let Some((key, value)) = stmt.split_once('=') else {
        return Err(ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, found `{stmt}`"),
        });
    };
    let key = key.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(ConfigError::Syntax {
            line,
            message: format!("bad key `{key}`"),
        });
    }
    Ok(Statement {
        line,
        key: key.to_string(),
        value: value.trim().to_string(),
    })
}

/// Values collected from statements, with their line numbers.
struct Raw {
    map: BTreeMap<String, (usize, String)>,
    constants: Vec<(String, String)>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn invalid(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        eval_number(&v).map(Some).map_err(|m| Raw::invalid(line, key, m))
    }

    fn integer(&mut self, key: &str) -> Result<Option<u128>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        if let Ok(i) = v.trim().parse::<u128>() {
            return Ok(Some(i));
        }
        let x = eval_number(&v).map_err(|m| Raw::invalid(line, key, m))?;
        if x < 0.0 || x.fract() != 0.0 || x > 1e30 {
            return Err(Raw::invalid(line, key, format!("expected a non-negative integer, got {v}")));
        }
        Ok(Some(x as u128))
    }

    /// A vector of `dim` numbers; a scalar is repeated.
    fn vector(&mut self, key: &str, dim: Option<usize>) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some((line, v)) = self.take(key) else {
            return Ok(None);
        };
        let vals = parse_vector(&v).map_err(|m| Raw::invalid(line, key, m))?;
        match (vals.len(), dim) {
            (1, Some(d)) if !v.trim_start().starts_with('{') => Ok(Some(vec![vals[0]; d])),
            (n, Some(d)) if n != d => Err(Raw::invalid(line, key, format!("expected {d} entries, got {n}"))),
            _ => Ok(Some(vals)),
        }
    }

    fn word(&mut self, key: &str) -> Option<(usize, String)> {
        self.take(key).map(|(l, v)| (l, v.trim_matches('"').to_string()))
    }

    fn grid(&mut self, prefix: &str, required: bool) -> Result<Option<GridConfig>, ConfigError> {
        let dim_key = format!("{prefix}.dim");
        let dim = self.integer(&dim_key)?.map(|d| d as usize);
        let present = dim.is_some() || ["lb", "ub", "eta"].iter().any(|k| self.map.contains_key(&format!("{prefix}.{k}")));
        if !present {
            if required {
                return Err(ConfigError::Missing(format!("{prefix}.lb")));
            }
            return Ok(None);
        }
        let lb_key = format!("{prefix}.lb");
        let lb_line = self.map.get(&lb_key).map(|(l, _)| *l);
        let lb = self.vector(&lb_key, dim)?.ok_or_else(|| ConfigError::Missing(lb_key.clone()))?;
        let dim = dim.unwrap_or(lb.len());
        if lb.len() != dim {
            return Err(Raw::invalid(lb_line.unwrap_or(0), &lb_key, format!("expected {dim} entries")));
        }
        let ub_key = format!("{prefix}.ub");
        let ub = self.vector(&ub_key, Some(dim))?.ok_or(ConfigError::Missing(ub_key))?;
        let eta_key = format!("{prefix}.eta");
        let eta = self.vector(&eta_key, Some(dim))?.ok_or(ConfigError::Missing(eta_key))?;
        Ok(Some(GridConfig { lb, ub, eta }))
    }

    fn boxed(&mut self, prefix: &str, dim: usize) -> Result<Option<(Vec<f64>, Vec<f64>)>, ConfigError> {
        let lb = self.vector(&format!("{prefix}.lb"), Some(dim))?;
        let ub = self.vector(&format!("{prefix}.ub"), Some(dim))?;
        match (lb, ub) {
            (Some(l), Some(u)) => Ok(Some((l, u))),
            (None, None) => Ok(None),
            (Some(_), None) => Err(ConfigError::Missing(format!("{prefix}.ub"))),
            (None, Some(_)) => Err(ConfigError::Missing(format!("{prefix}.lb"))),
        }
    }
}

fn eval_number(text: &str) -> Result<f64, String> {
    let e = Expr::parse(text, Dims::new(0, 0, 0), &BTreeMap::new()).map_err(|e| e.to_string())?;
    let v = e.eval(&[], &[], &[]).map_err(|e| e.to_string())?;
    if !v.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(v)
}

fn parse_vector(text: &str) -> Result<Vec<f64>, String> {
    let t = text.trim();
    let inner = match (t.strip_prefix('{'), t.ends_with('}')) {
        (Some(rest), true) => &rest[..rest.len() - 1],
        (Some(_), false) => return Err("unclosed `{`".into()),
        _ => return Ok(vec![eval_number(t)?]),
    };
    if inner.trim().is_empty() {
        return Err("empty vector".into());
    }
    inner.split(',').map(|s| eval_number(s.trim())).collect()
}

const KNOWN: &[&str] = &[
    "states.dim", "states.lb", "states.ub", "states.eta",
    "inputs.dim", "inputs.lb", "inputs.ub", "inputs.eta",
    "disturbances.dim", "disturbances.lb", "disturbances.ub", "disturbances.eta",
    "noise.type", "noise.sigma", "noise.covariance", "noise.lb", "noise.ub", "noise.rate",
    "noise.alpha", "noise.beta", "noise.density", "noise.mode", "noise.cutting_probability",
    "spec.type", "spec.time_steps", "target.lb", "target.ub", "avoid.lb", "avoid.ub",
    "exec.threads", "exec.mode", "exec.mem_budget", "exec.seed", "exec.runs", "exec.output",
    "exec.x0", "exec.disturbance_mode",
];

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Config::parse(&text)
    }

    /// Parses and validates a config, including the dynamics expressions.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut raw = Raw {
            map: BTreeMap::new(),
            constants: Vec::new(),
        };
        for s in statements(text)? {
            let is_dynamics = s.key.strip_prefix("dynamics.x").is_some_and(|i| i.parse::<usize>().is_ok());
            if let Some(name) = s.key.strip_prefix("constants.") {
                if raw.constants.iter().any(|(n, _)| n == name) {
                    return Err(ConfigError::Duplicate { line: s.line, key: s.key });
                }
                raw.constants.push((name.to_string(), s.value));
                continue;
            }
            if !is_dynamics && !KNOWN.contains(&s.key.as_str()) {
                return Err(ConfigError::UnknownKey { line: s.line, key: s.key });
            }
            if raw.map.contains_key(&s.key) {
                return Err(ConfigError::Duplicate { line: s.line, key: s.key });
            }
            raw.map.insert(s.key, (s.line, s.value));
        }

        let states = raw.grid("states", true)?.expect("required grid");
        let n = states.dim();
        let inputs = raw.grid("inputs", false)?;
        let disturbances = raw.grid("disturbances", false)?;

        let mut dynamics = Vec::with_capacity(n);
        for i in 0..n {
            let (_, v) = raw.take(&format!("dynamics.x{i}")).ok_or_else(|| ConfigError::Missing(format!("dynamics.x{i}")))?;
            dynamics.push(v);
        }
        if let Some((key, (line, _))) = raw.map.iter().find(|(k, _)| k.starts_with("dynamics.")) {
            return Err(ConfigError::Invalid {
                line: *line,
                key: key.clone(),
                message: format!("state has only {n} dimensions"),
            });
        }

        let noise = parse_noise(&mut raw, n)?;

        let (kline, kind) = raw.word("spec.type").ok_or_else(|| ConfigError::Missing("spec.type".into()))?;
        let kind = SpecKind::parse(&kind).ok_or_else(|| Raw::invalid(kline, "spec.type", format!("unknown kind `{kind}`")))?;
        let time_steps = raw.integer("spec.time_steps")?.ok_or_else(|| ConfigError::Missing("spec.time_steps".into()))? as usize;
        let target = raw.boxed("target", n)?;
        let avoid = raw.boxed("avoid", n)?;
        let spec = SpecConfig {
            kind,
            time_steps,
            target,
            avoid,
        };

        let mut exec = ExecConfig::default();
        if let Some(t) = raw.integer("exec.threads")? {
            exec.threads = t as usize;
        }
        if let Some((line, m)) = raw.word("exec.mode") {
            exec.mode = SynthesisMode::parse(&m).ok_or_else(|| Raw::invalid(line, "exec.mode", format!("unknown mode `{m}`")))?;
        }
        exec.mem_budget = raw.integer("exec.mem_budget")?;
        if let Some(s) = raw.integer("exec.seed")? {
            exec.seed = u64::try_from(s).map_err(|_| Raw::invalid(0, "exec.seed", "seed exceeds 64 bits"))?;
        }
        if let Some(r) = raw.integer("exec.runs")? {
            exec.runs = r as usize;
        }
        exec.output = raw.word("exec.output").map(|(_, v)| v);
        exec.x0 = raw.vector("exec.x0", Some(n))?;
        if let Some((line, m)) = raw.word("exec.disturbance_mode") {
            exec.disturbance_mode =
                DisturbanceMode::parse(&m).ok_or_else(|| Raw::invalid(line, "exec.disturbance_mode", format!("unknown mode `{m}`")))?;
        }

        let cfg = Config {
            states,
            inputs,
            disturbances,
            constants: raw.constants,
            dynamics,
            noise,
            spec,
            exec,
        };
        cfg.build_model()?;
        cfg.build_spec().validate(n).map_err(|e| ConfigError::Model(e.to_string()))?;
        Ok(cfg)
    }

    /// Evaluates the constants in order.
    pub fn constant_values(&self) -> Result<BTreeMap<String, f64>, ConfigError> {
        let mut values = BTreeMap::new();
        for (name, text) in &self.constants {
            let e = Expr::parse(text, Dims::new(0, 0, 0), &values)
                .map_err(|e| ConfigError::Model(format!("constant `{name}`: {e}")))?;
            let v = e.eval(&[], &[], &[]).map_err(|e| ConfigError::Model(format!("constant `{name}`: {e}")))?;
            values.insert(name.clone(), v);
        }
        Ok(values)
    }

    pub fn build_model(&self) -> Result<SystemModel, ConfigError> {
        let constants = self.constant_values()?;
        let state = self.states.build()?;
        let input = match &self.inputs {
            Some(g) => g.build()?,
            None => UniformGrid::singleton(1),
        };
        let disturbance = self.disturbances.as_ref().map(GridConfig::build).transpose()?;
        let dims = Dims::new(state.dim(), input.dim(), disturbance.as_ref().map_or(0, |g| g.dim()));
        let dynamics = self
            .dynamics
            .iter()
            .enumerate()
            .map(|(i, t)| Expr::parse(t, dims, &constants).map_err(|e| ConfigError::Model(format!("dynamics.x{i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let noise = self.build_noise(&constants)?;
        SystemModel::new(state, input, disturbance, dynamics, noise).map_err(|e| ConfigError::Model(e.to_string()))
    }

    fn build_noise(&self, constants: &BTreeMap<String, f64>) -> Result<NoiseSpec, ConfigError> {
        let family = match &self.noise.params {
            NoiseParams::Normal { sigma } => Family::Normal { sigma: sigma.clone() },
            NoiseParams::Uniform { lb, ub } => Family::Uniform {
                lo: lb.clone(),
                hi: ub.clone(),
            },
            NoiseParams::Exponential { rate } => Family::Exponential { rate: rate.clone() },
            NoiseParams::Beta { alpha, beta } => Family::Beta {
                alpha: alpha.clone(),
                beta: beta.clone(),
            },
            NoiseParams::Custom { density, lb, ub } => {
                let e = Expr::parse(density, Dims::new(1, 0, 0), constants)
                    .map_err(|e| ConfigError::Model(format!("noise.density: {e}")))?;
                let pdf = move |_: usize, z: f64| e.eval(&[z], &[], &[]).map_or(0.0, |v| if v > 0.0 { v } else { 0.0 });
                Family::Custom(CustomDensity {
                    pdf: Arc::new(pdf),
                    support: HyperRect::new(lb.clone(), ub.clone()),
                    label: density.clone(),
                })
            }
        };
        NoiseSpec::new(family, self.noise.mode, self.noise.cutting_probability).map_err(|e| ConfigError::Model(e.to_string()))
    }

    pub fn build_spec(&self) -> Spec {
        let rect = |b: &Option<(Vec<f64>, Vec<f64>)>| b.as_ref().map(|(l, u)| HyperRect::new(l.clone(), u.clone()));
        Spec {
            kind: self.spec.kind,
            horizon: self.spec.time_steps,
            target: rect(&self.spec.target),
            avoid: rect(&self.spec.avoid),
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            mode: self.exec.mode,
            threads: self.exec.threads,
            mem_budget: self.exec.mem_budget,
        }
    }
}

fn parse_noise(raw: &mut Raw, n: usize) -> Result<NoiseConfig, ConfigError> {
    let (tline, kind) = raw.word("noise.type").unwrap_or((0, "normal".into()));
    let params = match kind.as_str() {
        "normal" | "gaussian" => {
            let sigma = raw.vector("noise.sigma", Some(n))?;
            let cov_line = raw.map.get("noise.covariance").map(|(l, _)| *l).unwrap_or(0);
            let cov = match raw.map.get("noise.covariance") {
                Some((_, v)) if !v.trim_start().starts_with('{') => raw.vector("noise.covariance", Some(n))?,
                _ => raw.vector("noise.covariance", None)?,
            };
            let sigma = match (sigma, cov) {
                (Some(s), None) => s,
                (None, Some(c)) => diagonal_sigma(&c, n).map_err(|m| Raw::invalid(cov_line, "noise.covariance", m))?,
                (Some(_), Some(_)) => {
                    return Err(Raw::invalid(cov_line, "noise.covariance", "give either noise.sigma or noise.covariance"))
                }
                (None, None) => return Err(ConfigError::Missing("noise.sigma".into())),
            };
            NoiseParams::Normal { sigma }
        }
        "uniform" => NoiseParams::Uniform {
            lb: raw.vector("noise.lb", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.lb".into()))?,
            ub: raw.vector("noise.ub", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.ub".into()))?,
        },
        "exponential" => NoiseParams::Exponential {
            rate: raw.vector("noise.rate", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.rate".into()))?,
        },
        "beta" => NoiseParams::Beta {
            alpha: raw.vector("noise.alpha", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.alpha".into()))?,
            beta: raw.vector("noise.beta", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.beta".into()))?,
        },
        "custom" => NoiseParams::Custom {
            density: raw.take("noise.density").ok_or_else(|| ConfigError::Missing("noise.density".into()))?.1,
            lb: raw.vector("noise.lb", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.lb".into()))?,
            ub: raw.vector("noise.ub", Some(n))?.ok_or_else(|| ConfigError::Missing("noise.ub".into()))?,
        },
        other => return Err(Raw::invalid(tline, "noise.type", format!("unknown distribution `{other}`"))),
    };
    for key in ["noise.sigma", "noise.covariance", "noise.lb", "noise.ub", "noise.rate", "noise.alpha", "noise.beta", "noise.density"] {
        if let Some((line, _)) = raw.map.get(key) {
            return Err(Raw::invalid(*line, key, format!("not a parameter of the {} distribution", params.name())));
        }
    }
    let mode = match raw.word("noise.mode") {
        None => NoiseMode::Additive,
        Some((_, m)) if m == "additive" => NoiseMode::Additive,
        Some((_, m)) if m == "multiplicative" => NoiseMode::Multiplicative,
        Some((line, m)) => return Err(Raw::invalid(line, "noise.mode", format!("unknown mode `{m}`"))),
    };
    let cutting_probability = raw
        .number("noise.cutting_probability")?
        .ok_or_else(|| ConfigError::Missing("noise.cutting_probability".into()))?;
    Ok(NoiseConfig {
        params,
        mode,
        cutting_probability,
    })
}

/// Standard deviations from a covariance given as its diagonal (`n` entries)
/// or as a full row-major matrix (`n * n` entries) that must be diagonal.
fn diagonal_sigma(cov: &[f64], n: usize) -> Result<Vec<f64>, String> {
    let diag: Vec<f64> = if cov.len() == n {
        cov.to_vec()
    } else if cov.len() == n * n {
        for i in 0..n {
            for j in 0..n {
                if i != j && cov[i * n + j] != 0.0 {
                    return Err("only diagonal covariance matrices are supported".into());
                }
            }
        }
        (0..n).map(|i| cov[i * n + i]).collect()
    } else {
        return Err(format!("expected {n} or {} entries, got {}", n * n, cov.len()));
    };
    if let Some(v) = diag.iter().find(|v| !(**v > 0.0)) {
        return Err(format!("variance {v} is not positive"));
    }
    Ok(diag.iter().map(|v| v.sqrt()).collect())
}

struct Vector<'a>(&'a [f64]);

impl fmt::Display for Vector<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v:?}")?;
        }
        f.write_str("}")
    }
}

fn write_grid(f: &mut fmt::Formatter<'_>, name: &str, g: &GridConfig) -> fmt::Result {
    writeln!(f, "{name}.dim = {};", g.dim())?;
    writeln!(f, "{name}.lb = {};", Vector(&g.lb))?;
    writeln!(f, "{name}.ub = {};", Vector(&g.ub))?;
    writeln!(f, "{name}.eta = {};", Vector(&g.eta))
}

/// Canonical text form; parsing it yields an equal `Config`.
impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_grid(f, "states", &self.states)?;
        if let Some(g) = &self.inputs {
            write_grid(f, "inputs", g)?;
        }
        if let Some(g) = &self.disturbances {
            write_grid(f, "disturbances", g)?;
        }
        for (name, text) in &self.constants {
            writeln!(f, "constants.{name} = {text};")?;
        }
        for (i, text) in self.dynamics.iter().enumerate() {
            writeln!(f, "dynamics.x{i} = {text};")?;
        }
        writeln!(f, "noise.type = {};", self.noise.params.name())?;
        match &self.noise.params {
            NoiseParams::Normal { sigma } => writeln!(f, "noise.sigma = {};", Vector(sigma))?,
            NoiseParams::Uniform { lb, ub } => writeln!(f, "noise.lb = {};\nnoise.ub = {};", Vector(lb), Vector(ub))?,
            NoiseParams::Exponential { rate } => writeln!(f, "noise.rate = {};", Vector(rate))?,
            NoiseParams::Beta { alpha, beta } => {
                writeln!(f, "noise.alpha = {};\nnoise.beta = {};", Vector(alpha), Vector(beta))?
            }
            NoiseParams::Custom { density, lb, ub } => writeln!(
                f,
                "noise.density = {density};\nnoise.lb = {};\nnoise.ub = {};",
                Vector(lb),
                Vector(ub)
            )?,
        }
        let mode = match self.noise.mode {
            NoiseMode::Additive => "additive",
            NoiseMode::Multiplicative => "multiplicative",
        };
        writeln!(f, "noise.mode = {mode};")?;
        writeln!(f, "noise.cutting_probability = {:?};", self.noise.cutting_probability)?;
        writeln!(f, "spec.type = {};", self.spec.kind)?;
        writeln!(f, "spec.time_steps = {};", self.spec.time_steps)?;
        for (name, b) in [("target", &self.spec.target), ("avoid", &self.spec.avoid)] {
            if let Some((l, u)) = b {
                writeln!(f, "{name}.lb = {};\n{name}.ub = {};", Vector(l), Vector(u))?;
            }
        }
        let e = &self.exec;
        writeln!(f, "exec.threads = {};", e.threads)?;
        writeln!(f, "exec.mode = {};", e.mode)?;
        if let Some(b) = e.mem_budget {
            writeln!(f, "exec.mem_budget = {b};")?;
        }
        writeln!(f, "exec.seed = {};", e.seed)?;
        writeln!(f, "exec.runs = {};", e.runs)?;
        if let Some(o) = &e.output {
            writeln!(f, "exec.output = \"{o}\";")?;
        }
        if let Some(x0) = &e.x0 {
            writeln!(f, "exec.x0 = {};", Vector(x0))?;
        }
        let dm = match e.disturbance_mode {
            DisturbanceMode::Random => "random",
            DisturbanceMode::WorstCase => "worst-case",
        };
        writeln!(f, "exec.disturbance_mode = {dm};")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROBOT: &str = "
# planar robot
states.dim = 2;
states.lb = {-10, -10};  states.ub = {10, 10};
states.eta = 0.5;
inputs.lb = {-1, -1}; inputs.ub = {1, 1}; inputs.eta = {0.2, 0.2};
disturbances.lb = -1; disturbances.ub = 1; disturbances.eta = 0.2;
constants.tau = 10;
dynamics.x0 = x0 + tau*u0*cos(u1)
            + w0;
dynamics.x1 = x1 + tau*u1*sin(u1) + w0;
noise.type = normal;
noise.covariance = {0.75, 0, 0, 0.75};
noise.cutting_probability = 1e-3;
spec.type = safety;
spec.time_steps = 8;
";

    #[test]
    fn parses_robot() {
        let c = Config::parse(ROBOT).unwrap();
        assert_eq!(c.states.eta, vec![0.5, 0.5]);
        assert_eq!(c.disturbances.as_ref().unwrap().lb, vec![-1.0]);
        assert_eq!(c.noise.params, NoiseParams::Normal { sigma: vec![0.75f64.sqrt(); 2] });
        let m = c.build_model().unwrap();
        assert_eq!(m.dims(), Dims::new(2, 2, 1));
        assert_eq!(m.n_states() * m.n_inputs(), 203_401);
        assert_eq!(c.build_spec(), Spec::safety(8));
    }

    #[test]
    fn round_trips() {
        let c = Config::parse(ROBOT).unwrap();
        let again = Config::parse(&c.to_string()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn reports_errors_with_lines() {
        let missing = ROBOT.replace("dynamics.x1 = x1 + tau*u1*sin(u1) + w0;", "");
        assert_eq!(Config::parse(&missing), Err(ConfigError::Missing("dynamics.x1".into())));
        let unknown = format!("{ROBOT}\nnoise.colour = red;");
        assert!(matches!(Config::parse(&unknown), Err(ConfigError::UnknownKey { line: 18, .. })));
        let dup = format!("{ROBOT}spec.time_steps = 3;");
        assert!(matches!(Config::parse(&dup), Err(ConfigError::Duplicate { .. })));
        let bad = ROBOT.replace("states.eta = 0.5;", "states.eta = {0.5, 0.5, 0.5};");
        assert!(matches!(Config::parse(&bad), Err(ConfigError::Invalid { line: 5, .. })));
        let unterminated = format!("{ROBOT}exec.seed = 3");
        assert!(matches!(Config::parse(&unterminated), Err(ConfigError::Syntax { line: 17, .. })));
        let bad_expr = ROBOT.replace("sin(u1)", "sin(u7)");
        assert!(matches!(Config::parse(&bad_expr), Err(ConfigError::Model(_))));
        let reach = ROBOT.replace("spec.type = safety;", "spec.type = reach-avoid;");
        assert!(matches!(Config::parse(&reach), Err(ConfigError::Model(_))));
        let offdiag = ROBOT.replace("{0.75, 0, 0, 0.75}", "{0.75, 0.1, 0.1, 0.75}");
        assert!(matches!(Config::parse(&offdiag), Err(ConfigError::Invalid { .. })));
    }
}
