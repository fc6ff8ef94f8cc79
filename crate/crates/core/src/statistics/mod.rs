//! Estimators on simulation ensembles: empirical measures, fluctuation
//! samples, k-statistics, the empirical cumulant generating function and
//! covariance tests against the limit theory.

mod ensemble;
pub mod phase;

pub use ensemble::{EstimateRecord, ReplicaEnsemble};
pub use phase::{Point, PhaseFunction};

use crate::gas_sim::SystemState;
use gauss_quad::hermite::GaussHermite;
use std::num::NonZeroUsize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("order {0} not supported (1..=4)")]
    Order(usize),
    #[error("snapshot gap {gap} exceeds the allowed {max}")]
    SnapshotGap { gap: f64, max: f64 },
    #[error("snapshots must start at 0 and end at t = {t}; got [{first}, {last}]")]
    SnapshotRange { t: f64, first: f64, last: f64 },
    #[error("exponential overflow: max S - ln(n) = {0:.1} > 700; use a smaller observable")]
    Overflow(f64),
    #[error("observable has no finite declared bound")]
    Unbounded,
    #[error("replica seeds must be distinct (seed {0} repeats)")]
    DuplicateSeed(u64),
    #[error("sample columns differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("{0}")]
    Format(String),
}

/// `(1/mu) sum_i H(z_i, tag_i)` at the state's time.
pub fn empirical_measure(state: &SystemState, h: &PhaseFunction) -> f64 {
    let t = state.time;
    let s: f64 = state.particles.iter().map(|p| h.eval(&Point::new(t, p.x, p.v, p.tag))).sum();
    s / state.cfg.mu
}

/// `(1/lambda) sum_{tagged} h(z_i)`.
pub fn tagged_empirical_measure(state: &SystemState, h: &PhaseFunction) -> f64 {
    tagged_sum(state, h) / state.cfg.lambda
}

/// `sum_{tagged} h(z_i)` without normalization.
pub fn tagged_sum(state: &SystemState, h: &PhaseFunction) -> f64 {
    let t = state.time;
    state.particles.iter().filter(|p| p.tag == 1).map(|p| h.eval(&Point::new(t, p.x, p.v, 1))).sum()
}

/// A weighted discrete measure at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSnapshot {
    pub t: f64,
    pub atoms: Vec<(Point, f64)>,
}

impl MeasureSnapshot {
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.atoms.iter().map(|(p, w)| w * f(&Point { t: self.t, ..*p })).sum()
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }
}

/// Default maximal snapshot spacing for [`filtered_mean`].
pub const DT_MAX: f64 = 0.01;

/// `int h(t) dm_t - int_0^t int (d_s + v . grad_x) h dm_s ds` with the time
/// integral by the trapezoid rule over the snapshots.
pub fn filtered_mean(snaps: &[MeasureSnapshot], h: &PhaseFunction, t: f64, dt_max: f64) -> Result<f64, StatsError> {
    let (first, last) = match (snaps.first(), snaps.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(StatsError::TooFew { need: 1, got: 0 }),
    };
    if first.abs() > 1e-12 || (last - t).abs() > 1e-12 {
        return Err(StatsError::SnapshotRange { t, first, last });
    }
    let mut integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in snaps {
        let val = s.integrate(|p| h.transport(p));
        if let Some((pt, pv)) = prev {
            let gap = s.t - pt;
            if gap > dt_max + 1e-12 || gap < 0.0 {
                return Err(StatsError::SnapshotGap { gap, max: dt_max });
            }
            integral += 0.5 * gap * (pv + val);
        }
        prev = Some((s.t, val));
    }
    let end = snaps.last().expect("nonempty").integrate(|p| h.eval(p));
    Ok(end - integral)
}

/// Centered, `sqrt(lambda)`-scaled replica values.
pub fn fluctuation_samples(values: &[f64], lambda: f64) -> Result<Vec<f64>, StatsError> {
    if values.len() < 30 {
        return Err(StatsError::TooFew { need: 30, got: values.len() });
    }
    let m = mean(values);
    let s = lambda.sqrt();
    Ok(values.iter().map(|x| s * (x - m)).collect())
}

pub fn mean(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    v.iter().sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulantEstimate {
    pub order: usize,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Fisher k-statistic of order `r` from power sums of a sample of size `n`.
fn k_stat(r: usize, n: f64, s: &[f64; 5]) -> f64 {
    let (s1, s2, s3, s4) = (s[1], s[2], s[3], s[4]);
    match r {
        1 => s1 / n,
        2 => (n * s2 - s1 * s1) / (n * (n - 1.0)),
        3 => (n * n * s3 - 3.0 * n * s2 * s1 + 2.0 * s1.powi(3)) / (n * (n - 1.0) * (n - 2.0)),
        4 => {
            let num = (n.powi(3) + n * n) * s4 - 4.0 * (n * n + n) * s3 * s1 - 3.0 * (n * n - n) * s2 * s2
                + 12.0 * n * s2 * s1 * s1
                - 6.0 * s1.powi(4);
            num / (n * (n - 1.0) * (n - 2.0) * (n - 3.0))
        }
        _ => f64::NAN,
    }
}

fn power_sums(y: &[f64]) -> [f64; 5] {
    let mut s = [0.0; 5];
    for &v in y {
        let mut p = 1.0;
        for item in s.iter_mut() {
            *item += p;
            p *= v;
        }
    }
    s
}

/// Jackknife standard error from leave-one-out values.
pub fn jackknife_stderr(loo: &[f64]) -> f64 {
    let n = loo.len() as f64;
    let m = loo.iter().sum::<f64>() / n;
    ((n - 1.0) / n * loo.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
}

/// Unbiased k-statistics `k_1 .. k_max_order` with jackknife standard errors.
pub fn ensemble_cumulants(samples: &[f64], max_order: usize) -> Result<Vec<CumulantEstimate>, StatsError> {
    if !(1..=4).contains(&max_order) {
        return Err(StatsError::Order(max_order));
    }
    let n = samples.len();
    let need = (max_order + 1).max(3);
    if n < need {
        return Err(StatsError::TooFew { need, got: n });
    }
    let c = mean(samples);
    let y: Vec<f64> = samples.iter().map(|x| x - c).collect();
    let s = power_sums(&y);
    let nf = n as f64;
    let mut out = Vec::new();
    for r in 1..=max_order {
        let value = k_stat(r, nf, &s) + if r == 1 { c } else { 0.0 };
        let loo: Vec<f64> = y
            .iter()
            .map(|&yi| {
                let mut t = s;
                let mut p = 1.0;
                for item in t.iter_mut() {
                    *item -= p;
                    p *= yi;
                }
                k_stat(r, nf - 1.0, &t)
            })
            .collect();
        out.push(CumulantEstimate { order: r, value, stderr: jackknife_stderr(&loo), n });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgfEstimate {
    pub value: f64,
    pub jackknife_bias: f64,
    pub stderr: f64,
    pub n: usize,
}

fn log_mean_exp(s: &[f64], skip: Option<usize>) -> f64 {
    let m = s.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
    let mut terms: Vec<f64> = s.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, x)| (x - m).exp()).collect();
    terms.sort_by(f64::total_cmp);
    let n = terms.len() as f64;
    m + (terms.iter().sum::<f64>() / n).ln()
}

/// `(1/lambda) log(mean exp S)` over replica sums `S`, with jackknife bias and
/// standard error.
pub fn empirical_cgf(sums: &[f64], lambda: f64) -> Result<CgfEstimate, StatsError> {
    let n = sums.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let guard = max - (n as f64).ln();
    if guard > 700.0 {
        return Err(StatsError::Overflow(guard));
    }
    let full = log_mean_exp(sums, None) / lambda;
    let loo: Vec<f64> = (0..n).map(|i| log_mean_exp(sums, Some(i)) / lambda).collect();
    let loo_mean = loo.iter().sum::<f64>() / n as f64;
    Ok(CgfEstimate { value: full, jackknife_bias: (n as f64 - 1.0) * (loo_mean - full), stderr: jackknife_stderr(&loo), n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceTest {
    pub covariance: f64,
    pub stderr: f64,
    pub target: f64,
    pub z: f64,
}

fn covariance(a: &[f64], b: &[f64], skip: Option<usize>) -> f64 {
    let idx = || (0..a.len()).filter(move |i| Some(*i) != skip);
    let n = idx().count() as f64;
    let ma = idx().map(|i| a[i]).sum::<f64>() / n;
    let mb = idx().map(|i| b[i]).sum::<f64>() / n;
    idx().map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / (n - 1.0)
}

/// Studentized discrepancy between the sample covariance of two fluctuation
/// samples and `target`; standard error by jackknife.
pub fn covariance_test(a: &[f64], b: &[f64], target: f64) -> Result<CovarianceTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Length(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: a.len() });
    }
    let c = covariance(a, b, None);
    let loo: Vec<f64> = (0..a.len()).map(|i| covariance(a, b, Some(i))).collect();
    let se = jackknife_stderr(&loo);
    Ok(CovarianceTest { covariance: c, stderr: se, target, z: (c - target) / se })
}

/// Covariance test against `int M phi(t) g h` computed from a kinetic
/// solution.
pub fn fluctuation_covariance_test(
    zeta_g: &[f64],
    zeta_h: &[f64],
    g: &PhaseFunction,
    h: &PhaseFunction,
    phi: &crate::kinetic_solver::VelocityField,
    t: f64,
) -> Result<CovarianceTest, StatsError> {
    let target = phi.integrate_density(|v| g.eval_tv(t, v) * h.eval_tv(t, v));
    covariance_test(zeta_g, zeta_h, target)
}

/// Estimate of `int f_2 H (x) H` from replica sums `S = sum H` and
/// `Q = sum H^2` over tagged particles: `(k_2(S) - lambda m2) / lambda^2` with
/// `m2 = mean(Q) / lambda`.
pub fn f2_estimator(sums: &[f64], squares: &[f64], lambda: f64) -> Result<CumulantEstimate, StatsError> {
    if sums.len() != squares.len() {
        return Err(StatsError::Length(sums.len(), squares.len()));
    }
    let n = sums.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    let est = |skip: Option<usize>| {
        let s: Vec<f64> = (0..n).filter(|i| Some(*i) != skip).map(|i| sums[i]).collect();
        let q: Vec<f64> = (0..n).filter(|i| Some(*i) != skip).map(|i| squares[i]).collect();
        let m = mean(&s);
        let k2 = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0);
        (k2 - mean(&q)) / (lambda * lambda)
    };
    let loo: Vec<f64> = (0..n).map(|i| est(Some(i))).collect();
    Ok(CumulantEstimate { order: 2, value: est(None), stderr: jackknife_stderr(&loo), n })
}

/// `int M_beta(v) f(t, x, v) dx dv` over the torus and `R^d`, by Gauss-Hermite
/// quadrature in velocity and the periodic trapezoid rule in space.
pub fn maxwellian_integral(f: &PhaseFunction, beta: f64, d: usize, t: f64) -> f64 {
    let nv = 32;
    let gh = GaussHermite::new(NonZeroUsize::new(nv).expect("nonzero"));
    let nodes: Vec<(f64, f64)> = gh
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (x * (2.0 / beta).sqrt(), w / std::f64::consts::PI.sqrt()))
        .collect();
    let nx = if f.is_homogeneous() { 1 } else { 8 };
    let dims3 = d == 3;
    let mut total = 0.0;
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 / nx as f64).collect();
    let wx = 1.0 / nx as f64;
    for &x0 in &xs {
        for &x1 in &xs {
            for &x2 in xs.iter().take(if dims3 { nx } else { 1 }) {
                let x = [x0, x1, if dims3 { x2 } else { 0.0 }];
                let w_space = wx * wx * if dims3 { wx } else { 1.0 };
                for &(a, wa) in &nodes {
                    for &(b, wb) in &nodes {
                        if dims3 {
                            for &(c, wc) in &nodes {
                                total += w_space * wa * wb * wc * f.eval(&Point::new(t, x, [a, b, c], 1));
                            }
                        } else {
                            total += w_space * wa * wb * f.eval(&Point::new(t, x, [a, b, 0.0], 1));
                        }
                    }
                }
            }
        }
    }
    total
}
