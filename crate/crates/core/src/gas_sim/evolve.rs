//! Event-driven hard-sphere dynamics on the unit torus.
//!
//! Time is cut into windows short enough that no pair can reach a non-nearest
//! periodic image: with maximal speed `s`, a window lasts at most
//! `(1/2 - eps) / (2 s)`. Inside a window all pair collisions are predicted
//! once and kept in a priority queue; after each event only the two partners
//! are re-predicted. A window closes early if a collision produces a speed
//! above the window's bound.

use super::{CollisionEvent, CollisionLog, Particle, SimError, SystemState};
use crate::geometry::{min_image_displacement, scatter, wrap};
use crate::vec3::{dot, norm, norm_sq, scale, sub, Vec3};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub max_events: usize,
    pub tie_tolerance: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { max_events: 1_000_000, tie_tolerance: 1e-12 }
    }
}

/// Earliest contact time in `(0, horizon]` along the nearest image, for two
/// particles given at the same instant, and the impact direction
/// `(x_p - x_q) / |x_p - x_q|` at contact.
pub fn predict_collision(p: &Particle, q: &Particle, eps: f64, horizon: f64) -> Option<(f64, Vec3)> {
    let r = min_image_displacement(&q.x, &p.x);
    let dv = sub(&p.v, &q.v);
    nearest_contact(&r, &dv, eps, horizon)
}

/// Contact along the nearest image; a separation of exactly half the torus in
/// some component has two nearest images, and both are tried.
fn nearest_contact(r: &Vec3, dv: &Vec3, eps: f64, horizon: f64) -> Option<(f64, Vec3)> {
    let mut best = contact(r, dv, eps, horizon);
    if r.iter().any(|&c| c == 0.5) {
        for mask in 1u8..8 {
            let mut alt = *r;
            let mut valid = true;
            for k in 0..3 {
                if mask & (1 << k) != 0 {
                    if alt[k] == 0.5 {
                        alt[k] = -0.5;
                    } else {
                        valid = false;
                    }
                }
            }
            if !valid {
                continue;
            }
            if let Some(c) = contact(&alt, dv, eps, horizon) {
                if best.is_none_or(|b| c.0 < b.0) {
                    best = Some(c);
                }
            }
        }
    }
    best
}

fn contact(r: &Vec3, dv: &Vec3, eps: f64, horizon: f64) -> Option<(f64, Vec3)> {
    let b = dot(r, dv);
    if b >= 0.0 {
        return None;
    }
    let a = norm_sq(dv);
    let c = norm_sq(r) - eps * eps;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = if c <= 0.0 { 0.0 } else { c / (-b + disc.sqrt()) };
    if t > horizon {
        return None;
    }
    let at = [r[0] + t * dv[0], r[1] + t * dv[1], r[2] + t * dv[2]];
    let n = norm(&at);
    if n == 0.0 {
        return None;
    }
    Some((t, scale(&at, 1.0 / n)))
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    t: f64,
    a: usize,
    b: usize,
    ca: u64,
    cb: u64,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Reversed so that the max-heap pops the earliest event, lowest pair first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.t.total_cmp(&self.t).then(o.a.cmp(&self.a)).then(o.b.cmp(&self.b))
    }
}

struct Work {
    d: usize,
    eps: f64,
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    tl: Vec<f64>,
    count: Vec<u64>,
}

impl Work {
    fn pos(&self, i: usize, t: f64) -> Vec3 {
        let dt = t - self.tl[i];
        let mut out = [0.0; 3];
        for k in 0..self.d {
            out[k] = wrap(self.x[i][k] + self.v[i][k] * dt);
        }
        out
    }

    fn advance(&mut self, i: usize, t: f64) {
        self.x[i] = self.pos(i, t);
        self.tl[i] = t;
    }

    fn predict(&self, i: usize, j: usize, t: f64, until: f64) -> Option<Pending> {
        let xi = self.pos(i, t);
        let xj = self.pos(j, t);
        let r = min_image_displacement(&xj, &xi);
        let dv = sub(&self.v[i], &self.v[j]);
        let (dt, _) = nearest_contact(&r, &dv, self.eps, until - t)?;
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        Some(Pending { t: t + dt, a, b, ca: self.count[a], cb: self.count[b] })
    }

    fn max_speed(&self) -> f64 {
        self.v.iter().map(norm).fold(0.0, f64::max)
    }
}

/// Evolve to `t_end` with default options.
pub fn evolve(state: &SystemState, t_end: f64) -> Result<(SystemState, CollisionLog), SimError> {
    evolve_with(state, t_end, EvolveOptions::default())
}

pub fn evolve_with(state: &SystemState, t_end: f64, opts: EvolveOptions) -> Result<(SystemState, CollisionLog), SimError> {
    if !(t_end > state.time) {
        return Err(SimError::TimeOrder { time: state.time, t_end });
    }
    let n = state.len();
    let eps = state.cfg.epsilon;
    let mut w = Work {
        d: state.cfg.d,
        eps,
        x: state.particles.iter().map(|p| p.x).collect(),
        v: state.particles.iter().map(|p| p.v).collect(),
        tl: vec![state.time; n],
        count: vec![0; n],
    };
    let mut log = CollisionLog {
        events: Vec::new(),
        tags: state.particles.iter().map(|p| p.tag).collect(),
        t_start: state.time,
        t_end,
        ties: 0,
    };
    let mut now = state.time;
    let mut heap = BinaryHeap::new();
    let mut last: Option<(f64, usize, usize)> = None;
    while now < t_end {
        let smax = w.max_speed();
        let span = if smax > 0.0 { (0.5 - eps) / (2.0 * smax) } else { f64::INFINITY };
        let mut until = (now + span).min(t_end);
        for i in 0..n {
            w.advance(i, now);
        }
        heap.clear();
        for i in 0..n {
            for j in i + 1..n {
                if let Some(p) = w.predict(i, j, now, until) {
                    heap.push(p);
                }
            }
        }
        while let Some(ev) = heap.pop() {
            if ev.ca != w.count[ev.a] || ev.cb != w.count[ev.b] {
                continue;
            }
            let (a, b, t) = (ev.a, ev.b, ev.t);
            w.advance(a, t);
            w.advance(b, t);
            let r = min_image_displacement(&w.x[b], &w.x[a]);
            let omega = scale(&r, 1.0 / norm(&r));
            let (pa, pb) = (w.v[a], w.v[b]);
            let (qa, qb) = scatter(&pa, &pb, &omega)?;
            w.v[a] = qa;
            w.v[b] = qb;
            w.count[a] += 1;
            w.count[b] += 1;
            if let Some((lt, la, lb)) = last {
                if t - lt < opts.tie_tolerance && (la, lb) != (a, b) {
                    log.ties += 1;
                }
            }
            last = Some((t, a, b));
            log.events.push(CollisionEvent { time: t, a, b, omega, pre_a: pa, pre_b: pb, post_a: qa, post_b: qb });
            if log.events.len() > opts.max_events {
                return Err(SimError::Runaway(opts.max_events));
            }
            if norm(&qa).max(norm(&qb)) > smax {
                until = t;
                break;
            }
            for &i in &[a, b] {
                for k in 0..n {
                    if k != i {
                        if let Some(p) = w.predict(i, k, t, until) {
                            heap.push(p);
                        }
                    }
                }
            }
        }
        now = until;
    }
    for i in 0..n {
        w.advance(i, t_end);
    }
    let particles = state
        .particles
        .iter()
        .enumerate()
        .map(|(i, p)| Particle { id: p.id, x: w.x[i], v: w.v[i], tag: p.tag })
        .collect();
    Ok((SystemState { cfg: state.cfg, seed: state.seed, time: t_end, particles }, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas_sim::{sample_initial_state, ScalingConfig};
    use crate::statistics::phase::PhaseFunction;

    fn cfg() -> ScalingConfig {
        ScalingConfig::from_mu(3, 100.0, 10.0, 1.0)
    }

    fn state(parts: Vec<(Vec3, Vec3)>) -> SystemState {
        SystemState {
            cfg: cfg(),
            seed: 0,
            time: 0.0,
            particles: parts.into_iter().enumerate().map(|(id, (x, v))| Particle { id, x, v, tag: 0 }).collect(),
        }
    }

    #[test]
    fn prediction_examples() {
        let eps = 0.1;
        let p = Particle { id: 0, x: [0.25, 0.5, 0.5], v: [1.0, 0.0, 0.0], tag: 0 };
        let q = Particle { id: 1, x: [0.75, 0.5, 0.5], v: [-1.0, 0.0, 0.0], tag: 0 };
        let (t, om) = predict_collision(&p, &q, eps, 1.0).unwrap();
        assert!((t - (0.5 - eps) / 2.0).abs() < 1e-14);
        assert!((om[0].abs() - 1.0).abs() < 1e-14);
        let recede = Particle { x: [0.4, 0.5, 0.5], v: [-1.0, 0.0, 0.0], ..p };
        let away = Particle { x: [0.6, 0.5, 0.5], v: [1.0, 0.0, 0.0], ..q };
        assert_eq!(predict_collision(&recede, &away, eps, 0.15), None);
        let same = Particle { v: p.v, ..q };
        assert_eq!(predict_collision(&p, &same, eps, 10.0), None);
        assert_eq!(predict_collision(&p, &q, eps, 0.1), None);
    }

    #[test]
    fn free_flight_single_particle() {
        let s = state(vec![([0.9, 0.2, 0.3], [0.7, -1.1, 0.25])]);
        let (f, log) = evolve(&s, 1.3).unwrap();
        assert!(log.events.is_empty());
        let want = [wrap(0.9 + 0.91), wrap(0.2 - 1.43), wrap(0.3 + 0.325)];
        for k in 0..3 {
            assert!((f.particles[0].x[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn head_on_pair_swaps_velocities() {
        let s = state(vec![([0.3, 0.5, 0.5], [1.0, 0.0, 0.0]), ([0.6, 0.5, 0.5], [-1.0, 0.0, 0.0])]);
        let (f, log) = evolve(&s, 0.12).unwrap();
        assert_eq!(log.events.len(), 1);
        let e = log.events[0];
        assert!((e.time - 0.1).abs() < 1e-12);
        assert!((f.particles[0].v[0] + 1.0).abs() < 1e-15);
        assert!((f.particles[1].v[0] - 1.0).abs() < 1e-15);
        let gap = crate::geometry::torus_distance(&f.particles[0].x, &f.particles[1].x);
        assert!(gap > 0.1);
    }

    #[test]
    fn collisions_across_the_boundary() {
        let s = state(vec![([0.95, 0.5, 0.5], [1.0, 0.0, 0.0]), ([0.15, 0.5, 0.5], [-1.0, 0.0, 0.0])]);
        let (_, log) = evolve(&s, 0.2).unwrap();
        assert_eq!(log.events.len(), 1);
        assert!((log.events[0].time - 0.05).abs() < 1e-12);
    }

    #[test]
    fn many_body_conservation_exclusion_and_determinism() {
        let cfg = ScalingConfig::from_mu(3, 200.0, 20.0, 1.0);
        let s0 = sample_initial_state(&cfg, &PhaseFunction::constant(1.0), 3, 0).unwrap();
        let (s1, log) = evolve(&s0, 0.5).unwrap();
        assert!(log.events.len() > 50);
        let (p0, p1) = (s0.momentum(), s1.momentum());
        for k in 0..3 {
            assert!((p0[k] - p1[k]).abs() < 1e-9 * s0.energy().sqrt());
        }
        assert!(((s0.energy() - s1.energy()) / s0.energy()).abs() < 1e-9);
        assert!(s1.min_distance() > cfg.epsilon - 1e-9);
        for w in log.events.windows(2) {
            assert!(w[1].time >= w[0].time);
        }
        for e in &log.events {
            for k in 0..3 {
                assert!((e.pre_a[k] + e.pre_b[k] - e.post_a[k] - e.post_b[k]).abs() < 1e-12);
            }
        }
        let (s2, log2) = evolve(&s0, 0.5).unwrap();
        assert_eq!(log, log2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn exclusion_is_maintained_event_by_event() {
        let cfg = ScalingConfig::from_mu(3, 150.0, 10.0, 1.0);
        let mut s = sample_initial_state(&cfg, &PhaseFunction::constant(1.0), 9, 2).unwrap();
        for step in 1..=20 {
            let (next, _) = evolve(&s, step as f64 * 0.02).unwrap();
            assert!(next.min_distance() > cfg.epsilon - 1e-9, "step {step}");
            s = next;
        }
    }

    #[test]
    fn runaway_guard_and_time_order() {
        let s = state(vec![([0.3, 0.5, 0.5], [1.0, 0.0, 0.0]), ([0.6, 0.5, 0.5], [-1.0, 0.0, 0.0])]);
        let opts = EvolveOptions { max_events: 0, ..Default::default() };
        assert_eq!(evolve_with(&s, 1.0, opts), Err(SimError::Runaway(0)));
        assert!(matches!(evolve(&s, 0.0), Err(SimError::TimeOrder { .. })));
    }
}
