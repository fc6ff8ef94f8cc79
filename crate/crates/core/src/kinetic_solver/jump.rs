use super::{loss_rate, SolverError};
use crate::geometry::{sample_flux_angle, scatter};
use crate::quad::gauss_legendre;
use crate::rng::{maxwellian, stream_rng, torus_point, unit_sphere, KcRng};
use crate::statistics::{PhaseFunction, Point};
use crate::vec3::{norm, sub, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

/// Free-flight piece of a velocity-jump path on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub x0: Vec3,
    pub v: Vec3,
}

impl Segment {
    pub fn position(&self, s: f64) -> Vec3 {
        let mut x = [0.0; 3];
        for k in 0..3 {
            x[k] = crate::geometry::wrap(self.x0[k] + self.v[k] * (s - self.t0));
        }
        x
    }
}

/// Piecewise-linear trajectory in forward time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Path {
    pub segments: Vec<Segment>,
}

impl Path {
    pub fn jumps(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    pub fn end(&self) -> (f64, Vec3, Vec3) {
        let s = self.segments.last().expect("nonempty path");
        (s.t1, s.position(s.t1), s.v)
    }

    /// `int_0^t f(s, z(s)) ds` with a Gauss-Legendre rule per segment.
    pub fn integrate(&self, f: &dyn Fn(&Point) -> f64) -> f64 {
        let rule = gauss_legendre(6, 0.0, 1.0);
        self.segments
            .iter()
            .map(|sg| {
                let len = sg.t1 - sg.t0;
                if len <= 0.0 {
                    return 0.0;
                }
                rule.iter().map(|(x, w)| {
                    let s = sg.t0 + x * len;
                    w * len * f(&Point::new(s, sg.position(s), sg.v, 1))
                }).sum::<f64>()
            })
            .sum()
    }
}

/// Sign of the spatial part of the transport derivative in path weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportSign {
    /// `(d_s - v . grad_x) g`.
    AsWritten,
    /// `(d_s + v . grad_x) g`.
    Forward,
}

/// Functional of a tagged trajectory on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PathObservable {
    /// `h(t, z(t))`.
    Endpoint(PhaseFunction),
    /// `exp(g(t, z(t)) - int_0^t theta(s, z(s)) ds)` with `theta` the
    /// transport derivative of `g`.
    ExpWeight(PhaseFunction, TransportSign),
}

impl PathObservable {
    pub fn eval(&self, path: &Path) -> f64 {
        let (t, x, v) = path.end();
        match self {
            PathObservable::Endpoint(h) => h.eval(&Point::new(t, x, v, 1)),
            PathObservable::ExpWeight(g, sign) => {
                let end = g.eval(&Point::new(t, x, v, 1));
                let theta = if g.is_static() && g.is_homogeneous() {
                    0.0
                } else {
                    match sign {
                        TransportSign::AsWritten => path.integrate(&|p| g.backward_transport(p)),
                        TransportSign::Forward => path.integrate(&|p| g.transport(p)),
                    }
                };
                (end - theta).exp()
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            PathObservable::Endpoint(h) => h.to_string(),
            PathObservable::ExpWeight(g, _) => format!("exp-weight {g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpOptions {
    pub d: usize,
    pub beta: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub reject_budget: usize,
    pub block: usize,
}

impl JumpOptions {
    pub fn new(d: usize, beta: f64, n_samples: usize, seed: u64) -> Self {
        JumpOptions { d, beta, n_samples, seed, reject_budget: 10_000, block: 1024 }
    }
}

fn mean_speed(beta: f64, d: usize) -> f64 {
    match d {
        3 => (8.0 / (std::f64::consts::PI * beta)).sqrt(),
        _ => (std::f64::consts::PI / (2.0 * beta)).sqrt(),
    }
}

/// Partner velocity with density proportional to `M(v_c) |v - v_c|`: propose
/// from the mixture `M(v_c) (|v| + |v_c|)` and accept with
/// `|v - v_c| / (|v| + |v_c|)`.
pub fn partner_velocity<R: Rng + ?Sized>(rng: &mut R, v: &Vec3, d: usize, beta: f64, budget: usize) -> Result<Vec3, SolverError> {
    let a = norm(v);
    let b = mean_speed(beta, d);
    for _ in 0..budget {
        let vc = if rng.random::<f64>() * (a + b) < a {
            maxwellian(rng, d, beta)
        } else {
            let r2: f64 = (0..=d).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
            let dir = unit_sphere(rng, d);
            let r = (r2 / beta).sqrt();
            [r * dir[0], r * dir[1], r * dir[2]]
        };
        if rng.random::<f64>() * (a + norm(&vc)) < norm(&sub(v, &vc)) {
            return Ok(vc);
        }
    }
    Err(SolverError::RejectionBudget(budget))
}

/// Velocity-jump path from `(x, v)` at time 0 to `t`: free flight, jumps at
/// rate `nu(v)`, partner and angle from the collision kernel. Returns the path
/// and `int_0^t nu(v(s)) ds`.
pub fn simulate_path(rng: &mut KcRng, x: Vec3, v: Vec3, t: f64, opts: &JumpOptions) -> Result<(Path, f64), SolverError> {
    let mut path = Path::default();
    let (mut s, mut x, mut v) = (0.0, x, v);
    let mut compensator = 0.0;
    loop {
        let nu = loss_rate(&v, opts.beta, opts.d);
        let tau = Exp::new(nu).expect("positive rate").sample(rng);
        let end = (s + tau).min(t);
        let seg = Segment { t0: s, t1: end, x0: x, v };
        compensator += nu * (end - s);
        path.segments.push(seg);
        if s + tau >= t {
            return Ok((path, compensator));
        }
        x = seg.position(end);
        s = end;
        let vc = partner_velocity(rng, &v, opts.d, opts.beta, opts.reject_budget)?;
        let ang = sample_flux_angle(&sub(&v, &vc), opts.d, rng)?;
        v = scatter(&v, &vc, &ang.omega)?.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpMcResult {
    /// `(value, stderr)` per observable.
    pub estimates: Vec<(f64, f64)>,
    pub mean_jumps: (f64, f64),
    pub mean_compensator: (f64, f64),
    pub n: usize,
}

/// Monte Carlo estimate of `E[phi0(Z_0) H(Z)]` with `Z_0` drawn from `M_beta`
/// on the torus and `Z` the forward velocity-jump process, i.e. the path
/// functionals of the Rayleigh-Boltzmann solution started from `M phi0`.
pub fn solve_rb_jump_mc(phi0: &PhaseFunction, observables: &[PathObservable], t: f64, opts: &JumpOptions) -> Result<JumpMcResult, SolverError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SolverError::Times);
    }
    if !(opts.d == 2 || opts.d == 3) {
        return Err(SolverError::Unsupported(opts.d));
    }
    let k = observables.len();
    let blocks = opts.n_samples.div_ceil(opts.block.max(1));
    let partial: Vec<Result<Vec<f64>, SolverError>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(opts.seed, b as u64);
            let lo = b * opts.block;
            let hi = ((b + 1) * opts.block).min(opts.n_samples);
            let mut acc = vec![0.0; 2 * (k + 2)];
            for _ in lo..hi {
                let x = torus_point(&mut rng, opts.d);
                let v = maxwellian(&mut rng, opts.d, opts.beta);
                let w0 = phi0.eval(&Point::new(0.0, x, v, 1));
                let (path, comp) = simulate_path(&mut rng, x, v, t, opts)?;
                let mut push = |slot: usize, val: f64| {
                    acc[2 * slot] += val;
                    acc[2 * slot + 1] += val * val;
                };
                for (j, o) in observables.iter().enumerate() {
                    push(j, w0 * o.eval(&path));
                }
                push(k, path.jumps() as f64);
                push(k + 1, comp);
            }
            Ok(acc)
        })
        .collect();
    let mut acc = vec![0.0; 2 * (k + 2)];
    for p in partial {
        for (a, b) in acc.iter_mut().zip(p?) {
            *a += b;
        }
    }
    let n = opts.n_samples as f64;
    let stat = |slot: usize| {
        let m = acc[2 * slot] / n;
        let var = ((acc[2 * slot + 1] / n - m * m) * n / (n - 1.0)).max(0.0);
        (m, (var / n).sqrt())
    };
    Ok(JumpMcResult { estimates: (0..k).map(stat).collect(), mean_jumps: stat(k), mean_compensator: stat(k + 1), n: opts.n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic_solver::mean_loss_rate;

    #[test]
    fn partner_density_has_correct_mean_distance() {
        // E|v - V_c| under the partner law equals E|u|^2 / E|u| under M.
        let mut rng = stream_rng(1, 0);
        let v = [1.5, 0.0, 0.0];
        let n = 200_000;
        let s: Vec<f64> = (0..n).map(|_| norm(&sub(&v, &partner_velocity(&mut rng, &v, 3, 1.0, 1000).unwrap()))).collect();
        let m = s.iter().sum::<f64>() / n as f64;
        let sd = (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let want = (2.25 + 3.0) / (loss_rate(&v, 1.0, 3) / std::f64::consts::PI);
        assert!((m - want).abs() < 3.0 * sd / (n as f64).sqrt(), "{m} vs {want}");
    }

    #[test]
    fn constant_initial_datum_is_exact_and_jumps_match_compensator() {
        let one = PhaseFunction::constant(1.0);
        let obs = [PathObservable::Endpoint(PhaseFunction::constant(1.0))];
        let opts = JumpOptions::new(3, 1.0, 20_000, 7);
        let r = solve_rb_jump_mc(&one, &obs, 0.5, &opts).unwrap();
        assert_eq!(r.estimates[0], (1.0, 0.0));
        let (j, sj) = r.mean_jumps;
        let (c, sc) = r.mean_compensator;
        assert!((j - c).abs() < 3.0 * (sj * sj + sc * sc).sqrt());
        assert!((c - 0.5 * mean_loss_rate(1.0, 3)).abs() < 3.0 * sc + 1e-9);
        let again = solve_rb_jump_mc(&one, &obs, 0.5, &opts).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn energy_is_conserved_on_average_and_momentum_relaxes() {
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.5 vx))").unwrap();
        let obs = [
            PathObservable::Endpoint(PhaseFunction::parse("vsq").unwrap()),
            PathObservable::Endpoint(PhaseFunction::parse("vx").unwrap()),
        ];
        let r = solve_rb_jump_mc(&phi0, &obs, 0.4, &JumpOptions::new(3, 1.0, 40_000, 3)).unwrap();
        assert!((r.estimates[0].0 - 3.0).abs() < 3.0 * r.estimates[0].1);
        assert!(r.estimates[1].0 < 0.5 && r.estimates[1].0 > 0.0);
        let r2 = solve_rb_jump_mc(&phi0, &obs, 0.4, &JumpOptions::new(2, 1.0, 40_000, 3)).unwrap();
        assert!((r2.estimates[0].0 - 2.0).abs() < 3.0 * r2.estimates[0].1);
    }

    #[test]
    fn exp_weight_of_constant_is_exact() {
        let g = PhaseFunction::constant(0.3);
        let obs = [PathObservable::ExpWeight(g, TransportSign::AsWritten)];
        let r = solve_rb_jump_mc(&PhaseFunction::constant(1.0), &obs, 0.3, &JumpOptions::new(3, 1.0, 2000, 1)).unwrap();
        assert!((r.estimates[0].0 - 0.3f64.exp()).abs() < 1e-12);
        // g = s: exp(t - int_0^t 1 ds) = 1.
        let g = PhaseFunction::parse("t").unwrap();
        let obs = [PathObservable::ExpWeight(g, TransportSign::AsWritten)];
        let r = solve_rb_jump_mc(&PhaseFunction::constant(1.0), &obs, 0.3, &JumpOptions::new(3, 1.0, 2000, 1)).unwrap();
        assert!((r.estimates[0].0 - 1.0).abs() < 1e-12);
    }
}
