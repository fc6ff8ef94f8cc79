//! Experiment pipelines. Each pipeline returns typed rows and queues its
//! output files on the [`Ctx`]; [`run_experiment`] writes them and the
//! manifest.

use crate::config::{validate, Backend, ConfigError, Experiment, ExperimentConfig};
use crate::manifest::{sha256_hex, version_string, OutputFile, ReplicaSeed, RunManifest};
use kc_core::gas_sim::{
    cycle_frequency, evolve_with, log_to_csv, sample_initial_state_with, state_to_csv, CollisionLog, EvolveOptions, SamplingOptions, ScalingConfig,
    SimError, SystemState,
};
use kc_core::kinetic_solver::{
    estimate_f1_dyson, solve_rb_deterministic, solve_rb_jump_mc, DysonEstimate, DysonOptions, JumpOptions, KernelMatrix, PathObservable, SolverError,
    SolverEstimate, VelocityGrid,
};
use kc_core::large_deviations::{
    hj_action, legendre_rate, rate_direct, solve_bhj_for, FieldPath, HjAction, LdpError, ObservablePath, RateBackend, RateEvaluation, RateValue,
};
use kc_core::statistics::phase::Expr;
use kc_core::statistics::{
    ensemble_cumulants, empirical_cgf, fluctuation_samples, jackknife_stderr, maxwellian_integral, mean, tagged_empirical_measure, tagged_sum,
    EstimateRecord, PhaseFunction, ReplicaEnsemble, StatsError, DT_MAX,
};
use kc_core::kinetic_solver::FieldForm;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime budget exceeded: {0}")]
    Budget(String),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ldp(#[from] LdpError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(String),
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Runaway(n) => RunError::Budget(format!("more than {n} collision events in one replica")),
            SimError::Config(m) => RunError::Config(ConfigError::Invalid(m)),
            other => RunError::Sim(other),
        }
    }
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for exhausted
    /// budgets, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Budget(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Clock {
    start: Instant,
    budget: Option<f64>,
}

impl Clock {
    fn check(&self) -> Result<(), RunError> {
        match self.budget {
            Some(b) if self.start.elapsed().as_secs_f64() > b => {
                Err(RunError::Budget(format!("{:.1} s elapsed of {b} s", self.start.elapsed().as_secs_f64())))
            }
            _ => Ok(()),
        }
    }
}

/// Shared state of one run: configuration, budget, queued outputs and the
/// seeds handed out so far.
pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    clock: Clock,
    pub outputs: Vec<(String, Vec<u8>)>,
    pub seeds: Vec<ReplicaSeed>,
    kernels: BTreeMap<usize, Arc<KernelMatrix>>,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Ctx { cfg, clock: Clock { start: Instant::now(), budget: cfg.time_budget }, outputs: Vec::new(), seeds: Vec::new(), kernels: BTreeMap::new() }
    }

    fn emit(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.into(), bytes.into()));
    }

    pub fn kernel(&mut self, m: usize) -> Result<Arc<KernelMatrix>, RunError> {
        if let Some(k) = self.kernels.get(&m) {
            return Ok(k.clone());
        }
        let grid = Arc::new(VelocityGrid::new(m, self.cfg.beta)?);
        let k = Arc::new(KernelMatrix::build(grid, 3)?);
        self.kernels.insert(m, k.clone());
        Ok(k)
    }

    /// Map every replica of scaling `idx` through `f` after sampling and,
    /// when `t > 0`, evolving it. Replica `r` uses stream
    /// `idx * replicas + r` of the base seed.
    fn replicas<T: Send>(
        &mut self,
        idx: usize,
        s: &ScalingConfig,
        t: f64,
        f: impl Fn(u64, &SystemState, Option<&CollisionLog>) -> T + Sync,
    ) -> Result<Vec<T>, RunError> {
        let cfg = self.cfg;
        let n = cfg.replicas as u64;
        let clock = self.clock;
        for r in 0..n {
            self.seeds.push(ReplicaSeed { replica: r, seed: cfg.seed, stream: idx as u64 * n + r });
        }
        (0..n)
            .into_par_iter()
            .map(|r| {
                clock.check()?;
                let stream = idx as u64 * n + r;
                let state = sample_initial_state_with(s, &cfg.phi0, cfg.seed, stream, SamplingOptions { kind: cfg.sampler, ..Default::default() })?;
                if t > 0.0 {
                    let (end, log) = evolve_with(&state, t, EvolveOptions { max_events: cfg.max_events, ..Default::default() })?;
                    Ok(f(r, &end, Some(&log)))
                } else {
                    Ok(f(r, &state, None))
                }
            })
            .collect()
    }

    /// `<M phi(t), h>` for each observable, with a grid-resolution tolerance
    /// from a coarser grid. Exact quadrature at `t = 0`.
    pub fn limit_pairings(&mut self, hs: &[PhaseFunction], t: f64) -> Result<Vec<(f64, f64)>, RunError> {
        let cfg = self.cfg;
        if t == 0.0 {
            return Ok(hs.iter().map(|h| (maxwellian_integral(&product(&cfg.phi0, h), cfg.beta, cfg.d, 0.0), 0.0)).collect());
        }
        if cfg.d != 3 {
            return Err(SolverError::Unsupported(cfg.d).into());
        }
        let m = cfg.solver.grid;
        let coarse = (m - 6).max(9) | 1;
        let mut vals = Vec::new();
        for mm in [m, coarse] {
            let k = self.kernel(mm)?;
            let traj = solve_rb_deterministic(&k, &cfg.phi0, &[t], cfg.solver.dt)?;
            vals.push(hs.iter().map(|h| traj.pairing(0, h)).collect::<Vec<f64>>());
        }
        Ok(vals[0].iter().zip(&vals[1]).map(|(a, b)| (*a, (a - b).abs())).collect())
    }
}

fn product(a: &PhaseFunction, b: &PhaseFunction) -> PhaseFunction {
    PhaseFunction::from_expr(Expr::Mul(vec![a.expr().clone(), b.expr().clone()]))
}

fn square(h: &PhaseFunction) -> PhaseFunction {
    PhaseFunction::from_expr(Expr::Pow(Box::new(h.expr().clone()), 2))
}

fn exp_of(h: &PhaseFunction) -> PhaseFunction {
    PhaseFunction::from_expr(Expr::Exp(Box::new(h.expr().clone())))
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory");
    for r in rows {
        w.write_record(r).expect("in-memory");
    }
    w.into_inner().expect("flush")
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let n = x.len() as f64;
    if x.len() < 2 {
        return (m, 0.0);
    }
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
}

/// `sum a / sum b` over replicas with a leave-one-replica-out jackknife error.
pub fn ratio_estimate(pairs: &[(f64, f64)]) -> (f64, f64) {
    let (sa, sb) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let r = if sb > 0.0 { sa / sb } else { 0.0 };
    if pairs.len() < 2 {
        return (r, 0.0);
    }
    let loo: Vec<f64> = pairs.iter().map(|p| if sb - p.1 > 0.0 { (sa - p.0) / (sb - p.1) } else { 0.0 }).collect();
    (r, jackknife_stderr(&loo))
}

fn observable_values(cfg: &ExperimentConfig, s: &SystemState) -> Vec<f64> {
    cfg.observables.iter().map(|(_, h)| tagged_empirical_measure(s, h)).collect()
}

fn sample(ctx: &mut Ctx) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let mut header = vec!["mu".to_string(), "lambda".into(), "replica".into(), "n_background".into(), "n_tagged".into(), "min_distance".into()];
    header.extend(cfg.observables.iter().map(|o| o.0.clone()));
    let mut rows = Vec::new();
    for (i, s) in cfg.scalings().iter().enumerate() {
        let out = ctx.replicas(i, s, 0.0, |r, st, _| {
            let mut row = vec![e(s.mu), e(s.lambda), r.to_string(), (st.len() - st.tagged_count()).to_string(), st.tagged_count().to_string(), e(st.min_distance())];
            row.extend(observable_values(cfg, st).into_iter().map(e));
            (row, (i == 0 && r == 0).then(|| state_to_csv(st)))
        })?;
        for (row, state) in out {
            rows.push(row);
            if let Some(csv) = state {
                ctx.emit("state_0.csv", csv);
            }
        }
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.emit("sample.csv", csv_table(&h, &rows));
    Ok(())
}

fn evolve_pipeline(ctx: &mut Ctx) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let mut header: Vec<String> =
        ["mu", "lambda", "replica", "events", "ties", "momentum_drift", "energy_drift", "n_tagged"].iter().map(|s| s.to_string()).collect();
    header.extend(cfg.observables.iter().map(|o| o.0.clone()));
    let mut rows = Vec::new();
    for (i, s) in cfg.scalings().iter().enumerate() {
        let out = ctx.replicas(i, s, 0.0, |r, st, _| -> Result<_, RunError> {
            let (end, log) = if cfg.t > 0.0 {
                evolve_with(st, cfg.t, EvolveOptions { max_events: cfg.max_events, ..Default::default() })?
            } else {
                (st.clone(), CollisionLog { tags: st.particles.iter().map(|p| p.tag).collect(), ..Default::default() })
            };
            let (p0, p1) = (st.momentum(), end.momentum());
            let dp = (0..3).map(|k| (p1[k] - p0[k]).abs()).fold(0.0, f64::max);
            let de = (end.energy() - st.energy()).abs();
            let mut row = vec![e(s.mu), e(s.lambda), r.to_string(), log.events.len().to_string(), log.ties.to_string(), e(dp), e(de), end.tagged_count().to_string()];
            row.extend(observable_values(cfg, &end).into_iter().map(e));
            Ok((row, (i == 0 && r == 0).then(|| (state_to_csv(&end), log_to_csv(&log)))))
        })?;
        for o in out {
            let (row, first) = o?;
            rows.push(row);
            if let Some((st, log)) = first {
                ctx.emit("state_0.csv", st);
                ctx.emit("log_0.csv", log);
            }
        }
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.emit("evolve.csv", csv_table(&h, &rows));
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnRow {
    pub mu: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub observable: String,
    pub replicas: usize,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub grid_tolerance: f64,
    pub abs_error: f64,
}

/// Replica mean of the tagged empirical measure against the limit pairing,
/// one row per scaling and observable.
pub fn lln(ctx: &mut Ctx) -> Result<Vec<LlnRow>, RunError> {
    let cfg = ctx.cfg;
    let hs: Vec<PhaseFunction> = cfg.observables.iter().map(|o| o.1.clone()).collect();
    let targets = ctx.limit_pairings(&hs, cfg.t)?;
    let mut rows = Vec::new();
    for (i, s) in cfg.scalings().iter().enumerate() {
        let vals = ctx.replicas(i, s, cfg.t, |_, st, _| observable_values(cfg, st))?;
        for (j, (name, _)) in cfg.observables.iter().enumerate() {
            let col: Vec<f64> = vals.iter().map(|v| v[j]).collect();
            let (m, se) = mean_stderr(&col);
            rows.push(LlnRow {
                mu: s.mu,
                epsilon: s.epsilon,
                lambda: s.lambda,
                observable: name.clone(),
                replicas: col.len(),
                mean: m,
                stderr: se,
                target: targets[j].0,
                grid_tolerance: targets[j].1,
                abs_error: (m - targets[j].0).abs(),
            });
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![e(r.mu), e(r.epsilon), e(r.lambda), r.observable.clone(), r.replicas.to_string(), e(r.mean), e(r.stderr), e(r.target), e(r.grid_tolerance), e(r.abs_error)]
        })
        .collect();
    ctx.emit("lln.csv", csv_table(&["mu", "epsilon", "lambda", "observable", "replicas", "mean", "stderr", "target", "grid_tolerance", "abs_error"], &table));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctRow {
    pub mu: f64,
    pub lambda: f64,
    pub observable: String,
    pub replicas: usize,
    pub variance: f64,
    pub variance_stderr: f64,
    pub target: f64,
    pub grid_tolerance: f64,
    pub k3: f64,
    pub k3_stderr: f64,
}

/// Variance and third k-statistic of the fluctuation field against
/// `int M phi(t) h^2` and 0.
pub fn fluct(ctx: &mut Ctx) -> Result<Vec<FluctRow>, RunError> {
    let cfg = ctx.cfg;
    let sq: Vec<PhaseFunction> = cfg.observables.iter().map(|o| square(&o.1)).collect();
    let targets = ctx.limit_pairings(&sq, cfg.t)?;
    let mut rows = Vec::new();
    for (i, s) in cfg.scalings().iter().enumerate() {
        let vals = ctx.replicas(i, s, cfg.t, |_, st, _| observable_values(cfg, st))?;
        let streams: Vec<u64> = (0..vals.len() as u64).map(|r| i as u64 * cfg.replicas as u64 + r).collect();
        for (j, (name, _)) in cfg.observables.iter().enumerate() {
            let col: Vec<f64> = vals.iter().map(|v| v[j]).collect();
            let zeta = fluctuation_samples(&col, s.lambda)?;
            let k = ensemble_cumulants(&zeta, 3)?;
            ctx.emit(format!("zeta_{i}_{j}.csv"), ReplicaEnsemble::new(streams.clone(), zeta)?.to_csv());
            rows.push(FluctRow {
                mu: s.mu,
                lambda: s.lambda,
                observable: name.clone(),
                replicas: col.len(),
                variance: k[1].value,
                variance_stderr: k[1].stderr,
                target: targets[j].0,
                grid_tolerance: targets[j].1,
                k3: k[2].value,
                k3_stderr: k[2].stderr,
            });
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![e(r.mu), e(r.lambda), r.observable.clone(), r.replicas.to_string(), e(r.variance), e(r.variance_stderr), e(r.target), e(r.grid_tolerance), e(r.k3), e(r.k3_stderr)]
        })
        .collect();
    ctx.emit(
        "fluct.csv",
        csv_table(&["mu", "lambda", "observable", "replicas", "variance", "variance_stderr", "target", "grid_tolerance", "k3", "k3_stderr"], &table),
    );
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgfRow {
    pub mu: f64,
    pub lambda: f64,
    pub observable: String,
    pub replicas: usize,
    pub cgf: f64,
    pub stderr: f64,
    pub jackknife_bias: f64,
    pub target: f64,
    pub grid_tolerance: f64,
}

/// Rescaled empirical CGF of `sum_tagged H(z(t))` against
/// `int M phi(t) e^H - 1`.
pub fn cgf(ctx: &mut Ctx) -> Result<Vec<CgfRow>, RunError> {
    let cfg = ctx.cfg;
    let eh: Vec<PhaseFunction> = cfg.observables.iter().map(|o| exp_of(&o.1)).collect();
    let targets = ctx.limit_pairings(&eh, cfg.t)?;
    let mut rows = Vec::new();
    for (i, s) in cfg.scalings().iter().enumerate() {
        let sums = ctx.replicas(i, s, cfg.t, |_, st, _| cfg.observables.iter().map(|o| tagged_sum(st, &o.1)).collect::<Vec<f64>>())?;
        for (j, (name, _)) in cfg.observables.iter().enumerate() {
            let col: Vec<f64> = sums.iter().map(|v| v[j]).collect();
            let c = empirical_cgf(&col, s.lambda)?;
            rows.push(CgfRow {
                mu: s.mu,
                lambda: s.lambda,
                observable: name.clone(),
                replicas: col.len(),
                cgf: c.value,
                stderr: c.stderr,
                jackknife_bias: c.jackknife_bias,
                target: targets[j].0 - 1.0,
                grid_tolerance: targets[j].1,
            });
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![e(r.mu), e(r.lambda), r.observable.clone(), r.replicas.to_string(), e(r.cgf), e(r.stderr), e(r.jackknife_bias), e(r.target), e(r.grid_tolerance)])
        .collect();
    ctx.emit("cgf.csv", csv_table(&["mu", "lambda", "observable", "replicas", "cgf", "stderr", "jackknife_bias", "target", "grid_tolerance"], &table));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub epsilon: f64,
    pub mu: f64,
    pub with_collision: usize,
    pub with_cycle: usize,
    pub fraction: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncounterRow {
    pub mu: f64,
    pub lambda: f64,
    pub tagged_collisions: usize,
    pub tagged_tagged: usize,
    pub fraction: f64,
    pub stderr: f64,
}

/// Cycle frequency of backward clusters over the `epsilon_list` scan, and the
/// share of tagged-tagged collisions over the `lambda_list` scan.
pub fn cycles(ctx: &mut Ctx) -> Result<(Vec<CycleRow>, Vec<EncounterRow>), RunError> {
    let cfg = ctx.cfg;
    let mut crow = Vec::new();
    let mut idx = 0;
    for &eps in &cfg.epsilon_list {
        let mu = eps.powi(1 - cfg.d as i32);
        let s = ScalingConfig::from_epsilon(cfg.d, eps, cfg.lambda_for(mu), cfg.beta);
        let per = ctx.replicas(idx, &s, cfg.t, |_, _, log| cycle_frequency(log.expect("evolved"), cfg.t))?;
        idx += 1;
        let pairs: Vec<(f64, f64)> = per.iter().map(|c| (c.with_cycle as f64, c.with_collision as f64)).collect();
        let (fraction, stderr) = ratio_estimate(&pairs);
        crow.push(CycleRow {
            epsilon: eps,
            mu,
            with_collision: per.iter().map(|c| c.with_collision).sum(),
            with_cycle: per.iter().map(|c| c.with_cycle).sum(),
            fraction,
            stderr,
        });
    }
    let mut erow = Vec::new();
    if let Some(base) = cfg.scaling {
        for &lam in &cfg.lambda_list {
            let s = ScalingConfig { lambda: lam, ..base };
            let per = ctx.replicas(idx, &s, cfg.t, |_, _, log| log.expect("evolved").tagged_counts(cfg.t))?;
            idx += 1;
            let pairs: Vec<(f64, f64)> = per.iter().map(|c| (c.1 as f64, c.0 as f64)).collect();
            let (fraction, stderr) = ratio_estimate(&pairs);
            erow.push(EncounterRow {
                mu: s.mu,
                lambda: lam,
                tagged_collisions: per.iter().map(|c| c.0).sum(),
                tagged_tagged: per.iter().map(|c| c.1).sum(),
                fraction,
                stderr,
            });
        }
    }
    let ct: Vec<Vec<String>> =
        crow.iter().map(|r| vec![e(r.epsilon), e(r.mu), r.with_collision.to_string(), r.with_cycle.to_string(), e(r.fraction), e(r.stderr)]).collect();
    ctx.emit("cycles.csv", csv_table(&["epsilon", "mu", "with_collision", "with_cycle", "fraction", "stderr"], &ct));
    let et: Vec<Vec<String>> = erow
        .iter()
        .map(|r| vec![e(r.mu), e(r.lambda), r.tagged_collisions.to_string(), r.tagged_tagged.to_string(), e(r.fraction), e(r.stderr)])
        .collect();
    ctx.emit("encounters.csv", csv_table(&["mu", "lambda", "tagged_collisions", "tagged_tagged", "fraction", "stderr"], &et));
    Ok((crow, erow))
}

fn backends(b: Backend) -> Vec<Backend> {
    match b {
        Backend::All => vec![Backend::Deterministic, Backend::Jump, Backend::Dyson],
        other => vec![other],
    }
}

/// Pairings `<M phi(t), h>` of the observables by the configured backends.
pub fn solve_pde(ctx: &mut Ctx) -> Result<Vec<SolverEstimate>, RunError> {
    let cfg = ctx.cfg;
    let (t, p) = (cfg.t, &cfg.solver);
    let mut out = Vec::new();
    for b in backends(p.backend) {
        ctx.clock.check()?;
        match b {
            Backend::Deterministic => {
                let k = ctx.kernel(p.grid)?;
                let traj = solve_rb_deterministic(&k, &cfg.phi0, &[t], p.dt)?;
                for (name, h) in &cfg.observables {
                    out.push(SolverEstimate { observable: name.clone(), backend: "deterministic".into(), t, value: traj.pairing(0, h), stderr: 0.0, n: k.len() });
                }
                if let Some(f) = traj.homogeneous(0) {
                    ctx.emit("phi_t.csv", f.to_csv());
                }
            }
            Backend::Jump => {
                let obs: Vec<PathObservable> = cfg.observables.iter().map(|o| PathObservable::Endpoint(o.1.clone())).collect();
                let r = solve_rb_jump_mc(&cfg.phi0, &obs, t, &JumpOptions::new(cfg.d, cfg.beta, p.n_samples, cfg.seed))?;
                for ((name, _), (v, se)) in cfg.observables.iter().zip(&r.estimates) {
                    out.push(SolverEstimate { observable: name.clone(), backend: "jump".into(), t, value: *v, stderr: *se, n: r.n });
                }
            }
            Backend::Dyson | Backend::All => {
                for (name, d) in cfg.observables.iter().zip(dyson_estimates(ctx)?) {
                    out.push(SolverEstimate { observable: name.0.clone(), backend: "dyson".into(), t, value: d.value, stderr: d.stderr, n: d.n });
                }
            }
        }
    }
    let text: String = out.iter().map(|s| s.to_line() + "\n").collect();
    ctx.emit("solve.jsonl", text);
    Ok(out)
}

fn dyson_estimates(ctx: &Ctx) -> Result<Vec<DysonEstimate>, RunError> {
    let cfg = ctx.cfg;
    let opts = DysonOptions::new(cfg.d, cfg.beta, cfg.solver.n_samples, cfg.seed, cfg.solver.k_max);
    cfg.observables
        .iter()
        .map(|(_, h)| {
            ctx.clock.check()?;
            Ok(estimate_f1_dyson(&cfg.phi0, &PathObservable::Endpoint(h.clone()), cfg.t, &opts)?)
        })
        .collect()
}

/// Dyson-series estimates with the per-order breakdown.
pub fn tree_mc(ctx: &mut Ctx) -> Result<Vec<DysonEstimate>, RunError> {
    let cfg = ctx.cfg;
    let est = dyson_estimates(ctx)?;
    let mut rows = Vec::new();
    let mut lines = String::new();
    for ((name, _), d) in cfg.observables.iter().zip(&est) {
        for k in &d.per_k {
            rows.push(vec![name.clone(), k.k.to_string(), k.count.to_string(), e(k.contribution), e(k.variance)]);
        }
        lines += &SolverEstimate { observable: name.clone(), backend: "dyson".into(), t: cfg.t, value: d.value, stderr: d.stderr, n: d.n }.to_line();
        lines += "\n";
        lines += &EstimateRecord::new(format!("truncation_bias {name}"), d.truncation_bias, 0.0, d.n).to_line();
        lines += "\n";
    }
    ctx.emit("tree_mc.csv", csv_table(&["observable", "k", "count", "contribution", "variance"], &rows));
    ctx.emit("tree_mc.jsonl", lines);
    Ok(est)
}

/// Forward/backward solve for the observable `g`, its action, and the direct
/// functional for comparison.
pub fn bhj(ctx: &mut Ctx) -> Result<(HjAction, RateValue), RunError> {
    let cfg = ctx.cfg;
    let g = cfg.g.as_ref().ok_or_else(|| ConfigError::Missing("g".into()))?;
    let k = ctx.kernel(cfg.solver.grid)?;
    let path = ObservablePath::new(g.1.clone(), cfg.beta, cfg.t)?;
    let sol = solve_bhj_for(&k, &path, &cfg.phi0, cfg.t, cfg.solver.dt)?;
    let action = hj_action(&k, &path, &sol, &cfg.phi0)?;
    let direct = rate_direct(&path, &cfg.phi0, cfg.t, &RateBackend::Deterministic { kernel: k.clone(), dt: cfg.solver.dt })?;
    let n = sol.times.len() - 1;
    for j in [0, n / 2, n] {
        ctx.emit(format!("chi_{j}.csv"), sol.chi[j].to_csv());
        ctx.emit(format!("eta_{j}.csv"), sol.eta[j].to_csv());
    }
    let recs = [
        EstimateRecord::new("action", action.value, 0.0, k.len()),
        EstimateRecord::new("action_literal", action.literal, 0.0, k.len()),
        EstimateRecord::new("transport_term", action.transport_term, 0.0, k.len()),
        EstimateRecord::new("hamiltonian_term", action.hamiltonian_term, 0.0, k.len()),
        EstimateRecord::new("direct", direct.value, direct.stderr, direct.n),
    ];
    ctx.emit("bhj.jsonl", recs.iter().map(|r| r.to_line() + "\n").collect::<String>());
    Ok((action, direct))
}

/// Scaled basis observables: constants, low-order velocity polynomials times
/// Gaussians, and time-modulated variants.
pub fn candidate_family(size: usize) -> Vec<(String, PhaseFunction)> {
    const BASIS: [&str; 10] = [
        "vx",
        "vy",
        "(- vsq 3)",
        "(* vx vy)",
        "(* vz (gauss 0.25))",
        "(gauss 0.5)",
        "(* t vx)",
        "(* t (- vsq 3))",
        "(* vy vz (gauss 0.1))",
        "1",
    ];
    const SCALES: [f64; 5] = [0.2, -0.2, 0.1, -0.1, 0.05];
    (0..size)
        .map(|k| {
            let s = SCALES[(k / BASIS.len()) % SCALES.len()];
            let text = format!("(* {s} {})", BASIS[k % BASIS.len()]);
            let f = PhaseFunction::parse(&text).expect("family literals parse");
            (text, f)
        })
        .collect()
}

/// Density snapshots of the deterministic solution spaced at most `DT_MAX`.
pub fn typical_path(kernel: &KernelMatrix, phi0: &PhaseFunction, t: f64, dt: f64) -> Result<FieldPath, RunError> {
    let n = ((t / DT_MAX).ceil() as usize).max(1);
    let times: Vec<f64> = (0..=n).map(|j| t * j as f64 / n as f64).collect();
    let traj = solve_rb_deterministic(kernel, phi0, &times, dt)?;
    let fields = (0..times.len()).map(|j| traj.homogeneous(j).map(|f| f.to_form(FieldForm::Density)).ok_or(SolverError::Inhomogeneous)).collect::<Result<_, _>>()?;
    Ok(FieldPath { times, fields })
}

/// Legendre lower bound of the rate at the typical path over the candidate
/// family.
pub fn rate(ctx: &mut Ctx) -> Result<RateEvaluation, RunError> {
    let cfg = ctx.cfg;
    let k = ctx.kernel(cfg.solver.grid)?;
    let fam = if cfg.candidates.is_empty() { candidate_family(cfg.family_size) } else { cfg.candidates.clone() };
    let cands: Vec<ObservablePath> = fam.iter().map(|(_, f)| ObservablePath::new(f.clone(), cfg.beta, cfg.t)).collect::<Result<_, _>>()?;
    let path = typical_path(&k, &cfg.phi0, cfg.t, cfg.solver.dt)?;
    let backend = match cfg.solver.backend {
        Backend::Jump => RateBackend::Jump(JumpOptions::new(3, cfg.beta, cfg.solver.n_samples, cfg.seed)),
        Backend::Dyson => RateBackend::Dyson(DysonOptions::new(3, cfg.beta, cfg.solver.n_samples, cfg.seed, cfg.solver.k_max)),
        _ => RateBackend::Deterministic { kernel: k.clone(), dt: cfg.solver.dt },
    };
    ctx.clock.check()?;
    let ev = legendre_rate(&path, &cands, &cfg.phi0, &backend)?;
    ctx.emit("rate.csv", ev.to_csv());
    let recs = [EstimateRecord::new("lambda", ev.lambda, 0.0, ev.rows.len()), EstimateRecord::new("lambda_minus_one", ev.lambda_minus_one, 0.0, ev.rows.len())];
    ctx.emit("rate.jsonl", recs.iter().map(|r| r.to_line() + "\n").collect::<String>());
    Ok(ev)
}

fn dispatch(ctx: &mut Ctx) -> Result<(), RunError> {
    match ctx.cfg.experiment {
        Experiment::Sample => sample(ctx),
        Experiment::Evolve => evolve_pipeline(ctx),
        Experiment::Lln => lln(ctx).map(drop),
        Experiment::Fluct => fluct(ctx).map(drop),
        Experiment::Cgf => cgf(ctx).map(drop),
        Experiment::Cycles => cycles(ctx).map(drop),
        Experiment::SolvePde => solve_pde(ctx).map(drop),
        Experiment::TreeMc => tree_mc(ctx).map(drop),
        Experiment::Bhj => bhj(ctx).map(drop),
        Experiment::Rate => rate(ctx).map(drop),
    }
}

/// A failed run and the (partial) manifest written for it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: RunError,
    pub manifest: Option<RunManifest>,
}

fn write_outputs(dir: &Path, outputs: &[(String, Vec<u8>)]) -> Result<Vec<OutputFile>, RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
    outputs
        .iter()
        .map(|(name, bytes)| {
            std::fs::write(dir.join(name), bytes).map_err(|e| RunError::Io(format!("{name}: {e}")))?;
            Ok(OutputFile { file: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
        })
        .collect()
}

/// Validate, run the pipeline on a pool of `workers` threads, write outputs
/// and the manifest into `cfg.out`. The manifest is written on failure too,
/// with `partial` set.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunManifest, RunFailure> {
    let start = Instant::now();
    let mut ctx = Ctx::new(cfg);
    let report = validate(cfg);
    let result = if !report.is_empty() {
        Err(RunError::Config(ConfigError::Invalid(report.to_string().trim_end().replace('\n', "; "))))
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(&mut ctx)),
            Err(e) => Err(RunError::Io(e.to_string())),
        }
    };
    let written = write_outputs(&cfg.out, &ctx.outputs);
    let (outputs, result) = match (written, result) {
        (Ok(o), r) => (o, r),
        (Err(e), Ok(())) => (Vec::new(), Err(e)),
        (Err(_), Err(e)) => (Vec::new(), Err(e)),
    };
    let manifest = RunManifest {
        experiment: cfg.experiment.name().into(),
        config_hash: cfg.hash.clone(),
        version: version_string(),
        base_seed: cfg.seed,
        workers: workers.max(1),
        replica_seeds: ctx.seeds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
        partial: result.is_err(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let saved = manifest.write(&cfg.out);
    match (result, saved) {
        (Ok(()), Ok(())) => Ok(manifest),
        (Ok(()), Err(e)) => Err(RunFailure { error: RunError::Io(e.to_string()), manifest: None }),
        (Err(error), s) => Err(RunFailure { error, manifest: s.ok().map(|_| manifest) }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_estimator() {
        assert_eq!(ratio_estimate(&[(1.0, 4.0)]), (0.25, 0.0));
        let (r, se) = ratio_estimate(&[(1.0, 4.0), (1.0, 4.0), (1.0, 4.0)]);
        assert!((r - 0.25).abs() < 1e-15 && se < 1e-15);
    }

    #[test]
    fn family_is_admissible() {
        let fam = candidate_family(30);
        assert_eq!(fam.len(), 30);
        for (_, f) in &fam {
            assert!(f.is_homogeneous());
            ObservablePath::new(f.clone(), 1.0, 0.5).unwrap();
        }
    }
}
