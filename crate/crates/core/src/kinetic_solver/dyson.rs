use super::jump::{Path, PathObservable, Segment};
use super::{loss_rate, mean_loss_rate, SolverError};
use crate::geometry::{flux_total, sample_flux_angle, scatter, wrap};
use crate::rng::{maxwellian, stream_rng, torus_point, KcRng};
use crate::statistics::{PhaseFunction, Point};
use crate::vec3::{norm, norm_sq, sub, Vec3};
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DysonOptions {
    pub d: usize,
    pub beta: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub k_max: usize,
    /// Shift `nu_0` subtracted from the loss term and resummed exactly;
    /// `None` uses the equilibrium mean collision rate.
    pub shift: Option<f64>,
    /// Poisson rate of the proposal for `k`; `None` uses the shift.
    pub rate: Option<f64>,
    /// Unshifted expansion with gain and loss drawn with probability 1/2.
    pub literal: bool,
    pub block: usize,
}

impl DysonOptions {
    pub fn new(d: usize, beta: f64, n_samples: usize, seed: u64, k_max: usize) -> Self {
        DysonOptions { d, beta, n_samples, seed, k_max, shift: None, rate: None, literal: false, block: 1024 }
    }

    fn shift_value(&self) -> f64 {
        if self.literal {
            0.0
        } else {
            self.shift.unwrap_or_else(|| mean_loss_rate(self.beta, self.d))
        }
    }

    fn rate_value(&self) -> f64 {
        self.rate.unwrap_or_else(|| mean_loss_rate(self.beta, self.d))
    }
}

/// One sampled pseudo-trajectory: added partners in backward time order.
#[derive(Debug, Clone, PartialEq)]
pub struct DysonHistory {
    pub k: usize,
    pub times: Vec<f64>,
    pub signs: Vec<i8>,
    pub omegas: Vec<Vec3>,
    pub partners: Vec<Vec3>,
    pub weight: f64,
    pub path: Path,
}

/// Build a history ending at `(x, v)` at time `t`.
pub fn sample_history(rng: &mut KcRng, x: Vec3, v: Vec3, t: f64, opts: &DysonOptions, pmf: &[f64], z_trunc: f64) -> Result<DysonHistory, SolverError> {
    let (d, beta) = (opts.d, opts.beta);
    let nu0 = opts.shift_value();
    let rho = opts.rate_value();
    let c = flux_total(1.0, d);
    let mut r: f64 = rng.random::<f64>();
    let mut k = 0;
    while k + 1 < pmf.len() && r >= pmf[k] {
        r -= pmf[k];
        k += 1;
    }
    let mut times: Vec<f64> = (0..k).map(|_| t * rng.random::<f64>()).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let mut weight = ((rho - nu0) * t).exp() * z_trunc;
    let (mut xs, mut vs, mut now) = (x, v, t);
    let mut segs = Vec::with_capacity(k + 1);
    let (mut signs, mut omegas, mut partners) = (Vec::new(), Vec::new(), Vec::new());
    for &ti in &times {
        let x0: Vec3 = std::array::from_fn(|j| wrap(xs[j] - vs[j] * (now - ti)));
        segs.push(Segment { t0: ti, t1: now, x0, v: vs });
        xs = x0;
        now = ti;
        let vc = maxwellian(rng, d, beta);
        let u = sub(&vs, &vc);
        let flux = c * norm(&u);
        let p_gain = if opts.literal {
            0.5
        } else {
            let second = norm_sq(&vs) + d as f64 / beta;
            let a_plus = c * second.sqrt();
            let a_minus = (c * c * second - 2.0 * nu0 * loss_rate(&vs, beta, d) + nu0 * nu0).max(0.0).sqrt();
            a_plus / (a_plus + a_minus)
        };
        let gain_branch = rng.random::<f64>() < p_gain;
        if gain_branch {
            let ang = sample_flux_angle(&u, d, rng)?;
            vs = scatter(&vs, &vc, &ang.omega)?.0;
            weight *= flux / (p_gain * rho);
            omegas.push(ang.omega);
            signs.push(1);
        } else {
            weight *= -(flux - nu0) / ((1.0 - p_gain) * rho);
            omegas.push([0.0; 3]);
            signs.push(-1);
        }
        partners.push(vc);
    }
    segs.push(Segment { t0: 0.0, t1: now, x0: std::array::from_fn(|j| wrap(xs[j] - vs[j] * now)), v: vs });
    segs.reverse();
    Ok(DysonHistory { k, times, signs, omegas, partners, weight, path: Path { segments: segs } })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KBreakdown {
    pub k: usize,
    pub count: usize,
    /// Contribution of this `k` to the estimate (sum of weights over `n`).
    pub contribution: f64,
    /// Contribution of this `k` to the estimator variance.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DysonEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub per_k: Vec<KBreakdown>,
    /// Heuristic size of the omitted `k > k_max` terms: the proposal tail mass
    /// times the largest-`k` contribution per unit proposal probability.
    pub truncation_bias: f64,
}

fn poisson_pmf(a: f64, k_max: usize) -> Vec<f64> {
    let mut p = vec![(-a).exp()];
    for k in 1..=k_max {
        p.push(p[k - 1] * a / k as f64);
    }
    p
}

/// Signed pseudo-trajectory estimator of `int F_1[H](t)`: final point from
/// `M_beta`, `k` from a truncated Poisson proposal, ordered times uniform on
/// the simplex, partners from `M_beta`, gain angles from the flux density,
/// and the initial weight `phi0` at the start of the pseudo-trajectory.
pub fn estimate_f1_dyson(phi0: &PhaseFunction, obs: &PathObservable, t: f64, opts: &DysonOptions) -> Result<DysonEstimate, SolverError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SolverError::Horizon(t));
    }
    if opts.k_max > 12 {
        return Err(SolverError::KMax(opts.k_max));
    }
    if !(opts.d == 2 || opts.d == 3) {
        return Err(SolverError::Unsupported(opts.d));
    }
    let full = poisson_pmf(opts.rate_value() * t, opts.k_max);
    let z: f64 = full.iter().sum();
    let pmf: Vec<f64> = full.iter().map(|p| p / z).collect();
    let kk = opts.k_max + 1;
    let blocks = opts.n_samples.div_ceil(opts.block.max(1));
    let partial: Vec<Result<(Vec<usize>, Vec<f64>, Vec<f64>), SolverError>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(opts.seed, b as u64);
            let lo = b * opts.block;
            let hi = ((b + 1) * opts.block).min(opts.n_samples);
            let (mut cnt, mut s1, mut s2) = (vec![0usize; kk], vec![0.0; kk], vec![0.0; kk]);
            for _ in lo..hi {
                let x = torus_point(&mut rng, opts.d);
                let v = maxwellian(&mut rng, opts.d, opts.beta);
                let hist = sample_history(&mut rng, x, v, t, opts, &pmf, z)?;
                let s0 = hist.path.segments[0];
                let w = hist.weight * phi0.eval(&Point::new(0.0, s0.x0, s0.v, 1)) * obs.eval(&hist.path);
                cnt[hist.k] += 1;
                s1[hist.k] += w;
                s2[hist.k] += w * w;
            }
            Ok((cnt, s1, s2))
        })
        .collect();
    let (mut cnt, mut s1, mut s2) = (vec![0usize; kk], vec![0.0; kk], vec![0.0; kk]);
    for p in partial {
        let (c, a, b) = p?;
        for k in 0..kk {
            cnt[k] += c[k];
            s1[k] += a[k];
            s2[k] += b[k];
        }
    }
    let n = opts.n_samples as f64;
    let value = s1.iter().sum::<f64>() / n;
    let second = s2.iter().sum::<f64>() / n;
    let stderr = ((second - value * value).max(0.0) / (n - 1.0)).sqrt();
    let per_k = (0..kk)
        .map(|k| {
            let contribution = s1[k] / n;
            KBreakdown { k, count: cnt[k], contribution, variance: (s2[k] / n - contribution * contribution).max(0.0) / n }
        })
        .collect::<Vec<_>>();
    let last = per_k.last().expect("k_max + 1 entries");
    let truncation_bias = (1.0 - z) / pmf[opts.k_max].max(1e-300) * last.contribution.abs();
    Ok(DysonEstimate { value, stderr, n: opts.n_samples, per_k, truncation_bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_zero_is_the_initial_pairing() {
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.5 vx))").unwrap();
        let h = PathObservable::Endpoint(PhaseFunction::parse("(+ 1 vx)").unwrap());
        let e = estimate_f1_dyson(&phi0, &h, 0.0, &DysonOptions::new(3, 1.0, 50_000, 4, 10)).unwrap();
        assert!((e.value - 1.5).abs() < 3.0 * e.stderr);
        assert!(e.per_k[1..].iter().all(|b| b.count == 0));
    }

    #[test]
    fn constant_observable_conserves_mass() {
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.5 (- vsq 3)))").unwrap();
        let h = PathObservable::Endpoint(PhaseFunction::constant(1.0));
        for literal in [false, true] {
            let mut o = DysonOptions::new(3, 1.0, 40_000, 9, 10);
            o.literal = literal;
            let e = estimate_f1_dyson(&phi0, &h, 0.3, &o).unwrap();
            assert!((e.value - 1.0).abs() < 3.0 * e.stderr + e.truncation_bias, "{literal}: {e:?}");
        }
        assert!(matches!(estimate_f1_dyson(&phi0, &h, 1.5, &DysonOptions::new(3, 1.0, 10, 1, 10)), Err(SolverError::Horizon(_))));
        assert!(matches!(estimate_f1_dyson(&phi0, &h, 0.5, &DysonOptions::new(3, 1.0, 10, 1, 13)), Err(SolverError::KMax(13))));
    }

    #[test]
    fn history_invariants() {
        let mut rng = stream_rng(5, 0);
        let o = DysonOptions::new(3, 1.0, 1, 1, 12);
        let full = poisson_pmf(3.5, 12);
        let z: f64 = full.iter().sum();
        let pmf: Vec<f64> = full.iter().map(|p| p / z).collect();
        for _ in 0..200 {
            let h = sample_history(&mut rng, [0.1, 0.2, 0.3], [1.0, 0.0, -0.5], 0.5, &o, &pmf, z).unwrap();
            assert!(h.times.windows(2).all(|w| w[0] > w[1]));
            assert!(h.weight.is_finite());
            assert_eq!(h.path.segments.len(), h.k + 1);
            assert_eq!(h.path.end().2, [1.0, 0.0, -0.5]);
        }
    }
}
