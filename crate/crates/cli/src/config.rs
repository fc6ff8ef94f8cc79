//! Flat `key = value` experiment configuration.
//!
//! One entry per line; `#` starts a comment. Lists are separated by `,`
//! (numbers) or `;` (expressions). Expressions use the prefix grammar of
//! [`kc_core::statistics::phase`].
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `experiment` | sample, evolve, lln, fluct, cgf, cycles, solve-pde, tree-mc, bhj, rate | required |
//! | `d` | dimension | 3 |
//! | `mu`, `epsilon` | background activity / diameter (either fixes the other) | |
//! | `lambda` | tagged activity | |
//! | `lambda_exponent` | `lambda = mu^a` instead of `lambda` | |
//! | `beta` | inverse temperature | 1 |
//! | `phi0`, `phi0_bound`, `phi0_growth` | initial perturbation | `1` |
//! | `observables` | `;`-separated observables | `vx` |
//! | `replicas`, `seed` | replica count, base seed | 100, 0 |
//! | `t` | final time | 0.5 |
//! | `sampler` | partial-rejection, whole-rejection, sequential, ideal | partial-rejection |
//! | `exclusion` | `false` selects the ideal sampler | true |
//! | `max_events` | collision budget per replica | 1000000 |
//! | `mu_list`, `lambda_list`, `epsilon_list` | scans for lln/fluct/cycles | |
//! | `grid`, `dt`, `k_max`, `n_samples` | solver parameters | 25, 0.05, 10, 20000 |
//! | `backend` | deterministic, jump, dyson, all | deterministic |
//! | `transport_sign` | as-written, forward | as-written |
//! | `g` | observable of the bhj experiment | |
//! | `candidates`, `family_size` | rate candidates, or size of the generated family | 30 |
//! | `time_budget` | wall-clock budget in seconds | none |
//! | `out` | output directory | `runs/<experiment>` |

use kc_core::gas_sim::{SamplerKind, ScalingConfig};
use kc_core::kinetic_solver::TransportSign;
use kc_core::statistics::PhaseFunction;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: field `{field}`: {msg}")]
    Field { line: usize, field: String, msg: String },
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Sample,
    Evolve,
    Lln,
    Fluct,
    Cgf,
    Cycles,
    SolvePde,
    TreeMc,
    Bhj,
    Rate,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Sample,
        Experiment::Evolve,
        Experiment::Lln,
        Experiment::Fluct,
        Experiment::Cgf,
        Experiment::Cycles,
        Experiment::SolvePde,
        Experiment::TreeMc,
        Experiment::Bhj,
        Experiment::Rate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Evolve => "evolve",
            Experiment::Lln => "lln",
            Experiment::Fluct => "fluct",
            Experiment::Cgf => "cgf",
            Experiment::Cycles => "cycles",
            Experiment::SolvePde => "solve-pde",
            Experiment::TreeMc => "tree-mc",
            Experiment::Bhj => "bhj",
            Experiment::Rate => "rate",
        }
    }

    /// Experiments that sample and evolve the particle system.
    pub fn is_microscopic(self) -> bool {
        matches!(self, Experiment::Sample | Experiment::Evolve | Experiment::Lln | Experiment::Fluct | Experiment::Cgf | Experiment::Cycles)
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Deterministic,
    Jump,
    Dyson,
    All,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "deterministic" => Ok(Backend::Deterministic),
            "jump" => Ok(Backend::Jump),
            "dyson" => Ok(Backend::Dyson),
            "all" => Ok(Backend::All),
            _ => Err(format!("unknown backend `{s}`")),
        }
    }
}

const KEYS: &[&str] = &[
    "experiment", "d", "mu", "epsilon", "lambda", "lambda_exponent", "beta", "phi0", "phi0_bound", "phi0_growth", "observables", "replicas",
    "seed", "t", "sampler", "exclusion", "max_events", "mu_list", "lambda_list", "epsilon_list", "grid", "dt", "k_max", "n_samples", "backend",
    "transport_sign", "g", "candidates", "family_size", "time_budget", "out",
];

/// Parsed entries with their line numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{body}`") })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
                return Err(ConfigError::Syntax { line, msg: format!("invalid key `{k}`") });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::Field { line, field: k.into(), msg: "unknown key".into() });
            }
            if let Some((_, first)) = entries.get(k) {
                return Err(ConfigError::Duplicate { line, key: k.into(), first: *first });
            }
            entries.insert(k.to_string(), (v.to_string(), line));
        }
        Ok(RawConfig { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        let line = self.entries.get(key).map(|e| e.1).unwrap_or(0);
        self.entries.insert(key.to_string(), (value.to_string(), line));
    }

    /// SHA-256 of the canonical `key=value` listing.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, (v, _)) in &self.entries {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn field<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Field { line: *line, field: key.into(), msg: e.to_string() }),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(Vec::new()),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| ConfigError::Field { line: *line, field: key.into(), msg: format!("`{}`: {e}", s.trim()) }))
                .collect(),
        }
    }

    fn exprs(&self, key: &str) -> Result<Vec<(String, PhaseFunction)>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(Vec::new()),
            Some((v, line)) => v
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    PhaseFunction::parse(s).map(|f| (s.to_string(), f)).map_err(|e| ConfigError::Field { line: *line, field: key.into(), msg: e.to_string() })
                })
                .collect(),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.1).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct SolverParams {
    pub grid: usize,
    pub dt: f64,
    pub k_max: usize,
    pub n_samples: usize,
    pub backend: Backend,
    pub transport_sign: TransportSign,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub beta: f64,
    /// Scaling of single-configuration experiments; `None` when a scan list
    /// or a solver experiment takes its place.
    pub scaling: Option<ScalingConfig>,
    pub lambda: Option<f64>,
    pub lambda_exponent: Option<f64>,
    pub phi0_text: String,
    pub phi0: PhaseFunction,
    pub observables: Vec<(String, PhaseFunction)>,
    pub replicas: usize,
    pub seed: u64,
    pub t: f64,
    pub sampler: SamplerKind,
    pub max_events: usize,
    pub mu_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
    pub epsilon_list: Vec<f64>,
    pub solver: SolverParams,
    pub g: Option<(String, PhaseFunction)>,
    pub candidates: Vec<(String, PhaseFunction)>,
    pub family_size: usize,
    pub time_budget: Option<f64>,
    pub out: PathBuf,
    pub hash: String,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "partial-rejection" => Ok(SamplerKind::PartialRejection),
        "whole-rejection" => Ok(SamplerKind::WholeRejection),
        "sequential" => Ok(SamplerKind::Sequential),
        "ideal" => Ok(SamplerKind::Ideal),
        _ => Err(format!("unknown sampler `{s}`")),
    }
}

impl ExperimentConfig {
    /// Typed view of a raw config; value constraints are checked separately
    /// by [`validate`].
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let experiment: Experiment = raw.field("experiment")?.ok_or_else(|| ConfigError::Missing("experiment".into()))?;
        let d: usize = raw.field("d")?.unwrap_or(3);
        let beta: f64 = raw.field("beta")?.unwrap_or(1.0);
        let mu: Option<f64> = raw.field("mu")?;
        let epsilon: Option<f64> = raw.field("epsilon")?;
        let lambda: Option<f64> = raw.field("lambda")?;
        let lambda_exponent: Option<f64> = raw.field("lambda_exponent")?;
        let scaling = match (mu, epsilon) {
            (None, None) => None,
            _ if d < 2 => None,
            (Some(m), e) => {
                let lam = lambda.or(lambda_exponent.map(|a| m.powf(a))).unwrap_or(1.0);
                let mut c = ScalingConfig::from_mu(d, m, lam, beta);
                if let Some(e) = e {
                    c.epsilon = e;
                }
                Some(c)
            }
            (None, Some(e)) => {
                let m = e.powi(1 - d as i32);
                let lam = lambda.or(lambda_exponent.map(|a| m.powf(a))).unwrap_or(1.0);
                Some(ScalingConfig::from_epsilon(d, e, lam, beta))
            }
        };
        let phi0_text = raw.get("phi0").unwrap_or("1").to_string();
        let mut phi0 = PhaseFunction::parse(&phi0_text).map_err(|e| ConfigError::Field { line: raw.line("phi0"), field: "phi0".into(), msg: e.to_string() })?;
        match raw.field::<f64>("phi0_bound")? {
            Some(b) => phi0 = phi0.with_bound(b),
            None => {
                if let Some(c) = phi0.constant_value() {
                    phi0 = phi0.with_bound(c.abs());
                }
            }
        }
        if let Some(g) = raw.field::<f64>("phi0_growth")? {
            phi0 = phi0.with_growth(g);
        }
        let mut observables = raw.exprs("observables")?;
        if observables.is_empty() {
            observables.push(("vx".into(), PhaseFunction::parse("vx").expect("literal")));
        }
        let sampler = match raw.get("sampler") {
            None => SamplerKind::PartialRejection,
            Some(s) => parse_sampler(s).map_err(|msg| ConfigError::Field { line: raw.line("sampler"), field: "sampler".into(), msg })?,
        };
        let sampler = if raw.field::<bool>("exclusion")? == Some(false) { SamplerKind::Ideal } else { sampler };
        let transport_sign = match raw.get("transport_sign") {
            None | Some("as-written") => TransportSign::AsWritten,
            Some("forward") => TransportSign::Forward,
            Some(s) => {
                return Err(ConfigError::Field { line: raw.line("transport_sign"), field: "transport_sign".into(), msg: format!("unknown sign `{s}`") })
            }
        };
        let solver = SolverParams {
            grid: raw.field("grid")?.unwrap_or(25),
            dt: raw.field("dt")?.unwrap_or(0.05),
            k_max: raw.field("k_max")?.unwrap_or(10),
            n_samples: raw.field("n_samples")?.unwrap_or(20_000),
            backend: raw.field("backend")?.unwrap_or(Backend::Deterministic),
            transport_sign,
        };
        let g = raw.exprs("g")?.into_iter().next();
        Ok(ExperimentConfig {
            experiment,
            d,
            beta,
            scaling,
            lambda,
            lambda_exponent,
            phi0_text,
            phi0,
            observables,
            replicas: raw.field("replicas")?.unwrap_or(100),
            seed: raw.field("seed")?.unwrap_or(0),
            t: raw.field("t")?.unwrap_or(0.5),
            sampler,
            max_events: raw.field("max_events")?.unwrap_or(1_000_000),
            mu_list: raw.list("mu_list")?,
            lambda_list: raw.list("lambda_list")?,
            epsilon_list: raw.list("epsilon_list")?,
            solver,
            g,
            candidates: raw.exprs("candidates")?,
            family_size: raw.field("family_size")?.unwrap_or(30),
            time_budget: raw.field("time_budget")?,
            out: raw.get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs").join(experiment.name())),
            hash: raw.hash(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    /// Tagged activity for background activity `mu`.
    pub fn lambda_for(&self, mu: f64) -> f64 {
        self.lambda.or(self.lambda_exponent.map(|a| mu.powf(a))).unwrap_or(1.0)
    }

    /// Scaling configurations the experiment runs on, in order.
    pub fn scalings(&self) -> Vec<ScalingConfig> {
        let mut out = Vec::new();
        for &mu in &self.mu_list {
            out.push(ScalingConfig::from_mu(self.d, mu, self.lambda_for(mu), self.beta));
        }
        for &e in &self.epsilon_list {
            let mu = e.powi(1 - self.d as i32);
            out.push(ScalingConfig::from_epsilon(self.d, e, self.lambda_for(mu), self.beta));
        }
        if let Some(s) = self.scaling {
            if self.lambda_list.is_empty() {
                if out.is_empty() {
                    out.push(s);
                }
            } else {
                for &l in &self.lambda_list {
                    out.push(ScalingConfig { lambda: l, ..s });
                }
            }
        }
        out
    }
}

/// One named constraint violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub name: String,
    pub message: String,
}

/// Schema, scaling and growth-class problems of a configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: &str, name: &str, message: String) {
        self.violations.push(Violation { field: field.into(), name: name.into(), message });
    }

    pub fn names(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.name.as_str()).collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for v in &self.violations {
            writeln!(f, "{} [{}]: {}", v.field, v.name, v.message)?;
        }
        Ok(())
    }
}

/// Check everything that can be checked without running.
pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    if cfg.d != 2 && cfg.d != 3 {
        r.push("d", "dimension", format!("d = {} must be 2 or 3", cfg.d));
    }
    if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
        r.push("beta", "temperature", format!("beta = {} must be positive", cfg.beta));
    }
    if !(cfg.t >= 0.0 && cfg.t.is_finite()) {
        r.push("t", "time", format!("t = {} must be nonnegative", cfg.t));
    }
    if cfg.experiment.is_microscopic() {
        if cfg.replicas == 0 {
            r.push("replicas", "replica count", "need at least one replica".into());
        }
        let scalings = cfg.scalings();
        if scalings.is_empty() {
            r.push("mu", "scaling", "set mu or epsilon, or a scan list".into());
        }
        for s in scalings {
            for v in s.violations() {
                let field = match v.name {
                    "mixed scaling" | "diameter" => "epsilon",
                    "tagged density" => "lambda",
                    "temperature" => "beta",
                    _ => "d",
                };
                r.push(field, v.name, v.message);
            }
        }
        if cfg.phi0.bound().is_none() {
            r.push("phi0_bound", "phi0 bound", "sampling needs a declared bound on phi0".into());
        }
        if cfg.phi0.growth() >= cfg.beta / 2.0 {
            r.push("phi0_growth", "growth class", format!("growth {} is not below beta/2", cfg.phi0.growth()));
        }
        if matches!(cfg.experiment, Experiment::Fluct) && cfg.replicas < 30 {
            r.push("replicas", "replica count", "fluctuation statistics need at least 30 replicas".into());
        }
        if matches!(cfg.experiment, Experiment::Cycles) && !(cfg.t > 0.0) {
            r.push("t", "time", "cycle statistics need t > 0".into());
        }
    } else {
        if cfg.d != 3 {
            r.push("d", "dimension", "grid solvers are three-dimensional".into());
        }
        if cfg.solver.grid % 2 == 0 || !(3..=129).contains(&cfg.solver.grid) {
            r.push("grid", "grid", format!("grid = {} must be odd in 3..=129", cfg.solver.grid));
        }
        if !(cfg.solver.dt > 0.0) {
            r.push("dt", "step", "dt must be positive".into());
        }
        if cfg.solver.n_samples == 0 {
            r.push("n_samples", "samples", "need at least one sample".into());
        }
        if cfg.solver.k_max > 12 {
            r.push("k_max", "k_max", "k_max must be at most 12".into());
        }
        if cfg.phi0.growth() >= cfg.beta / 4.0 {
            r.push("phi0_growth", "growth class", format!("growth {} is not below beta/4", cfg.phi0.growth()));
        }
        for (name, h) in cfg.observables.iter().chain(cfg.g.iter()).chain(cfg.candidates.iter()) {
            if h.growth() >= cfg.beta / 4.0 {
                r.push("observables", "growth class", format!("`{name}` has growth {} >= beta/4", h.growth()));
            }
        }
        if matches!(cfg.experiment, Experiment::Bhj) && cfg.g.is_none() {
            r.push("g", "missing", "bhj needs an observable `g`".into());
        }
        if matches!(cfg.experiment, Experiment::Bhj | Experiment::Rate) && (!cfg.phi0.is_homogeneous() || cfg.g.as_ref().is_some_and(|g| !g.1.is_homogeneous())) {
            r.push("phi0", "homogeneity", "grid rate computations need spatially homogeneous data".into());
        }
        if matches!(cfg.experiment, Experiment::Rate) && cfg.candidates.is_empty() && !(1..=200).contains(&cfg.family_size) {
            r.push("family_size", "candidates", "family size must be in 1..=200".into());
        }
    }
    if cfg.time_budget.is_some_and(|b| !(b > 0.0)) {
        r.push("time_budget", "budget", "time budget must be positive".into());
    }
    r
}

/// Parse and validate the file at `path`.
pub fn validate_config(path: &std::path::Path) -> Result<ValidationReport, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    Ok(validate(&ExperimentConfig::parse(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let text = "experiment = sample  # comment\nmu = 100\nlambda = 10\nphi0 = (+ 1 (* 0.5 vx (gauss 0.25)))\nphi0_bound = 2\nreplicas = 4\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.experiment, Experiment::Sample);
        assert!((c.scaling.unwrap().epsilon - 0.1).abs() < 1e-15);
        assert!(validate(&c).is_empty());
        let bad = ExperimentConfig::parse(&format!("{text}epsilon = 0.2\n")).unwrap();
        assert!(validate(&bad).names().contains(&"mixed scaling"));
        let bad = ExperimentConfig::parse(&text.replace("lambda = 10", "lambda = 100")).unwrap();
        assert!(validate(&bad).names().contains(&"tagged density"));
        let bad = ExperimentConfig::parse(&text.replace("replicas = 4", "replicas = 0")).unwrap();
        assert!(validate(&bad).names().contains(&"replica count"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        assert!(matches!(RawConfig::parse("experiment = sample\nmu 100"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(RawConfig::parse("mu = 1\nmu = 2"), Err(ConfigError::Duplicate { line: 2, first: 1, .. })));
        assert!(matches!(RawConfig::parse("colour = red"), Err(ConfigError::Field { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("experiment = lln\nmu = many"), Err(ConfigError::Field { line: 2, .. })));
        assert!(matches!(ExperimentConfig::parse("experiment = lln\nphi0 = (+ 1"), Err(ConfigError::Field { line: 2, .. })));
        assert!(matches!(ExperimentConfig::parse("mu = 1"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn hash_ignores_layout() {
        let a = RawConfig::parse("mu = 100\nexperiment = lln\n").unwrap();
        let b = RawConfig::parse("# header\nexperiment=lln\n\nmu=100").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RawConfig::parse("mu = 101\nexperiment = lln").unwrap().hash());
    }

    #[test]
    fn scans_expand_in_order() {
        let c = ExperimentConfig::parse("experiment = lln\nmu_list = 50, 100, 200\nlambda_exponent = 0.6").unwrap();
        let s = c.scalings();
        assert_eq!(s.len(), 3);
        assert!((s[2].lambda - 200f64.powf(0.6)).abs() < 1e-12);
        assert!(validate(&c).is_empty());
    }
}
