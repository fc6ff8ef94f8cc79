//! Initial states: Poisson background in equilibrium plus Poisson tagged
//! particles with density proportional to `M_beta phi0`, conditioned on hard
//! sphere exclusion.

use super::{Particle, ScalingConfig, SimError, SystemState};
use crate::geometry::{torus_distance, wrap};
use crate::rng::{maxwellian, stream_rng, torus_point, unit_sphere};
use crate::statistics::phase::{quasi_random_points, PhaseFunction, Point};
use crate::vec3::{norm_sq, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// How exclusion is enforced on the Poisson configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    /// Partial rejection sampling: repeatedly resample the union of
    /// diameter-balls around overlapping particles. Exact.
    #[default]
    PartialRejection,
    /// Redraw the whole configuration until admissible. Exact, but the
    /// acceptance probability decays like `exp(-c sqrt(mu))` in `d = 3`.
    WholeRejection,
    /// Insert particles one at a time, redrawing each until it fits.
    /// Approximate: it does not realize the conditioned Poisson law.
    Sequential,
    /// No exclusion at all (ideal gas reference).
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    pub kind: SamplerKind,
    pub max_attempts: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { kind: SamplerKind::default(), max_attempts: 100_000 }
    }
}

struct Proposal<'a> {
    cfg: ScalingConfig,
    phi0: &'a PhaseFunction,
    bound: f64,
    growth: f64,
    beta_prop: f64,
    tagged_rate: f64,
}

#[derive(Clone, Copy)]
struct Raw {
    x: Vec3,
    v: Vec3,
    tag: u8,
}

impl<'a> Proposal<'a> {
    fn new(cfg: ScalingConfig, phi0: &'a PhaseFunction) -> Result<Self, SimError> {
        cfg.validate()?;
        let bound = phi0.bound().ok_or(SimError::MissingBound)?;
        let growth = phi0.growth();
        if growth >= cfg.beta / 2.0 {
            return Err(SimError::Growth { growth, half_beta: cfg.beta / 2.0 });
        }
        for p in quasi_random_points(cfg.d, 0.0, 6.0 / cfg.beta.sqrt(), 2_000) {
            let q = Point { tag: 1, ..p };
            let f = phi0.eval(&q);
            if f < 0.0 {
                return Err(SimError::NegativePhi { at: q.to_string(), value: f });
            }
        }
        let beta_prop = cfg.beta - 2.0 * growth;
        let z = (cfg.beta / beta_prop).powf(cfg.d as f64 / 2.0);
        Ok(Proposal { cfg, phi0, bound, growth, beta_prop, tagged_rate: cfg.lambda * bound * z })
    }

    fn tagged_velocity<R: Rng + ?Sized>(&self, x: Vec3, rng: &mut R) -> Result<Option<Vec3>, SimError> {
        let v = maxwellian(rng, self.cfg.d, self.beta_prop);
        let p = Point::new(0.0, x, v, 1);
        let f = self.phi0.eval(&p);
        if f < 0.0 {
            return Err(SimError::NegativePhi { at: p.to_string(), value: f });
        }
        let a = f * (-self.growth * norm_sq(&v)).exp() / self.bound;
        Ok(if rng.random::<f64>() < a { Some(v) } else { None })
    }

    /// Poisson configuration on `region` given by a point sampler and volume.
    fn fill<R: Rng + ?Sized>(
        &self,
        volume: f64,
        mut point: impl FnMut(&mut R) -> Option<Vec3>,
        rng: &mut R,
        out: &mut Vec<Raw>,
    ) -> Result<(), SimError> {
        let nb = poisson(rng, self.cfg.mu * volume);
        for _ in 0..nb {
            if let Some(x) = point(rng) {
                out.push(Raw { x, v: maxwellian(rng, self.cfg.d, self.cfg.beta), tag: 0 });
            }
        }
        let nt = poisson(rng, self.tagged_rate * volume);
        for _ in 0..nt {
            if let Some(x) = point(rng) {
                if let Some(v) = self.tagged_velocity(x, rng)? {
                    out.push(Raw { x, v, tag: 1 });
                }
            }
        }
        Ok(())
    }

    fn fill_torus<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<Raw>) -> Result<(), SimError> {
        let d = self.cfg.d;
        self.fill(1.0, |r: &mut R| Some(torus_point(r, d)), rng, out)
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn ball_volume(d: usize, r: f64) -> f64 {
    if d == 2 {
        std::f64::consts::PI * r * r
    } else {
        4.0 / 3.0 * std::f64::consts::PI * r * r * r
    }
}

fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, c: &Vec3, r: f64) -> Vec3 {
    let u = unit_sphere(rng, d);
    let s = r * rng.random::<f64>().powf(1.0 / d as f64);
    let mut x = [0.0; 3];
    for k in 0..d {
        x[k] = wrap(c[k] + s * u[k]);
    }
    x
}

/// Indices of particles that overlap some other particle, via a cell list.
fn overlapping(points: &[Raw], d: usize, eps: f64) -> Vec<usize> {
    let nc = ((1.0 / eps).floor() as usize).clamp(1, 64);
    let cell = |x: &Vec3| -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..d {
            c[k] = ((x[k] * nc as f64) as usize).min(nc - 1);
        }
        c
    };
    let dims = [nc, nc, if d == 3 { nc } else { 1 }];
    let mut heads: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    let index = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    for (i, p) in points.iter().enumerate() {
        heads[index(cell(&p.x))].push(i);
    }
    let mut bad = vec![false; points.len()];
    let reach: i64 = if nc < 3 { 0 } else { 1 };
    for (i, p) in points.iter().enumerate() {
        let c = cell(&p.x);
        let mut seen: Vec<usize> = Vec::new();
        let zr = if d == 3 { reach } else { 0 };
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -zr..=zr {
                    let n = [
                        (c[0] as i64 + dx).rem_euclid(dims[0] as i64) as usize,
                        (c[1] as i64 + dy).rem_euclid(dims[1] as i64) as usize,
                        (c[2] as i64 + dz).rem_euclid(dims[2] as i64) as usize,
                    ];
                    let id = index(n);
                    if seen.contains(&id) {
                        continue;
                    }
                    seen.push(id);
                    for &j in &heads[id] {
                        if j > i && torus_distance(&p.x, &points[j].x) <= eps {
                            bad[i] = true;
                            bad[j] = true;
                        }
                    }
                }
            }
        }
        if nc < 3 {
            for j in i + 1..points.len() {
                if torus_distance(&p.x, &points[j].x) <= eps {
                    bad[i] = true;
                    bad[j] = true;
                }
            }
        }
    }
    bad.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
}

/// Sample an admissible initial state with the default exact sampler.
pub fn sample_initial_state(cfg: &ScalingConfig, phi0: &PhaseFunction, seed: u64, replica: u64) -> Result<SystemState, SimError> {
    sample_initial_state_with(cfg, phi0, seed, replica, SamplingOptions::default())
}

pub fn sample_initial_state_with(
    cfg: &ScalingConfig,
    phi0: &PhaseFunction,
    seed: u64,
    replica: u64,
    opts: SamplingOptions,
) -> Result<SystemState, SimError> {
    let prop = Proposal::new(*cfg, phi0)?;
    let mut rng = stream_rng(seed, replica);
    let d = cfg.d;
    let eps = cfg.epsilon;
    let raw = match opts.kind {
        SamplerKind::Ideal => {
            let mut pts = Vec::new();
            prop.fill_torus(&mut rng, &mut pts)?;
            pts
        }
        SamplerKind::WholeRejection => {
            let mut attempts = 0;
            loop {
                attempts += 1;
                let mut pts = Vec::new();
                prop.fill_torus(&mut rng, &mut pts)?;
                if overlapping(&pts, d, eps).is_empty() {
                    break pts;
                }
                if attempts >= opts.max_attempts {
                    return Err(SimError::SamplingFailure { attempts, acceptance: 0.0 });
                }
            }
        }
        SamplerKind::PartialRejection => {
            let mut pts = Vec::new();
            prop.fill_torus(&mut rng, &mut pts)?;
            let mut rounds = 0;
            loop {
                let bad = overlapping(&pts, d, eps);
                if bad.is_empty() {
                    break pts;
                }
                rounds += 1;
                if rounds > opts.max_attempts {
                    return Err(SimError::SamplingFailure { attempts: rounds, acceptance: 0.0 });
                }
                let centers: Vec<Vec3> = bad.iter().map(|&i| pts[i].x).collect();
                let covered = |x: &Vec3, upto: usize| centers[..upto].iter().any(|c| torus_distance(c, x) < eps);
                pts.retain(|p| !covered(&p.x, centers.len()));
                let vol = ball_volume(d, eps);
                for k in 0..centers.len() {
                    let c = centers[k];
                    let mut fresh = Vec::new();
                    prop.fill(
                        vol,
                        |r: &mut rand_chacha::ChaCha8Rng| {
                            let x = uniform_in_ball(r, d, &c, eps);
                            if covered(&x, k) {
                                None
                            } else {
                                Some(x)
                            }
                        },
                        &mut rng,
                        &mut fresh,
                    )?;
                    pts.extend(fresh);
                }
            }
        }
        SamplerKind::Sequential => {
            let mut counts = Vec::new();
            prop.fill_torus(&mut rng, &mut counts)?;
            let mut pts: Vec<Raw> = Vec::with_capacity(counts.len());
            for p in counts {
                let mut tries = 0;
                loop {
                    let x = torus_point(&mut rng, d);
                    if pts.iter().all(|q| torus_distance(&q.x, &x) > eps) {
                        let v = if p.tag == 1 {
                            loop {
                                if let Some(v) = prop.tagged_velocity(x, &mut rng)? {
                                    break v;
                                }
                            }
                        } else {
                            p.v
                        };
                        pts.push(Raw { x, v, tag: p.tag });
                        break;
                    }
                    tries += 1;
                    if tries >= opts.max_attempts {
                        return Err(SimError::SamplingFailure { attempts: tries, acceptance: 0.0 });
                    }
                }
            }
            pts
        }
    };
    let mut ordered: Vec<Raw> = raw.iter().filter(|p| p.tag == 0).copied().collect();
    ordered.extend(raw.iter().filter(|p| p.tag == 1).copied());
    let particles = ordered
        .into_iter()
        .enumerate()
        .map(|(id, p)| Particle { id, x: p.x, v: p.v, tag: p.tag })
        .collect();
    Ok(SystemState { cfg: *cfg, seed, time: 0.0, particles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> PhaseFunction {
        PhaseFunction::constant(1.0)
    }

    #[test]
    fn states_are_admissible_and_deterministic() {
        let cfg = ScalingConfig::from_mu(3, 200.0, 20.0, 1.0);
        let a = sample_initial_state(&cfg, &one(), 11, 3).unwrap();
        let b = sample_initial_state(&cfg, &one(), 11, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.min_distance() > cfg.epsilon);
        assert!(a.particles.iter().all(|p| p.x.iter().all(|c| (0.0..1.0).contains(c))));
        let c = sample_initial_state(&cfg, &one(), 11, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_dimensional_states() {
        let cfg = ScalingConfig::from_epsilon(2, 0.02, 5.0, 1.0);
        let s = sample_initial_state(&cfg, &one(), 1, 0).unwrap();
        assert!(s.min_distance() > cfg.epsilon);
        assert!(s.particles.iter().all(|p| p.x[2] == 0.0 && p.v[2] == 0.0));
    }

    #[test]
    fn whole_rejection_budget_reports_failure() {
        let cfg = ScalingConfig::from_mu(3, 2000.0, 20.0, 1.0);
        let opts = SamplingOptions { kind: SamplerKind::WholeRejection, max_attempts: 20 };
        let r = sample_initial_state_with(&cfg, &one(), 1, 0, opts);
        assert!(matches!(r, Err(SimError::SamplingFailure { attempts: 20, .. })));
    }

    #[test]
    fn negative_phi_is_rejected() {
        let cfg = ScalingConfig::from_mu(3, 100.0, 10.0, 1.0);
        let phi = PhaseFunction::parse("vx").unwrap().with_bound(10.0);
        assert!(matches!(sample_initial_state(&cfg, &phi, 1, 0), Err(SimError::NegativePhi { .. })));
        let nob = PhaseFunction::parse("1").unwrap();
        assert_eq!(sample_initial_state(&cfg, &nob, 1, 0), Err(SimError::MissingBound));
    }

    #[test]
    fn sequential_and_ideal_samplers_run() {
        let cfg = ScalingConfig::from_mu(3, 100.0, 10.0, 1.0);
        let o = SamplingOptions { kind: SamplerKind::Sequential, max_attempts: 1000 };
        let s = sample_initial_state_with(&cfg, &one(), 5, 0, o).unwrap();
        assert!(s.min_distance() > cfg.epsilon);
        let o = SamplingOptions { kind: SamplerKind::Ideal, max_attempts: 1 };
        assert!(sample_initial_state_with(&cfg, &one(), 5, 0, o).is_ok());
    }
}
