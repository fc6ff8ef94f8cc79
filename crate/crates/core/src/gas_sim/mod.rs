//! Grand-canonical sampling and event-driven evolution of the tagged
//! hard-sphere mixture.

mod evolve;
mod graph;
mod io;
mod sample;

pub use evolve::{evolve, evolve_with, predict_collision, EvolveOptions};
pub use graph::{
    backward_cluster_has_cycle, collision_graph, cycle_census, cycle_frequency, CycleCensus,
    CycleFrequency, GraphSummary,
};
pub use io::{log_from_csv, log_to_csv, state_from_csv, state_to_csv};
pub use sample::{sample_initial_state, sample_initial_state_with, SamplerKind, SamplingOptions};

use crate::geometry::GeometryError;
use crate::statistics::phase::PhaseError;
use crate::vec3::{norm_sq, Vec3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scaling configuration: {0}")]
    Config(String),
    #[error("initial-state sampling failed after {attempts} attempts (acceptance estimate {acceptance:.3e})")]
    SamplingFailure { attempts: usize, acceptance: f64 },
    #[error("initial perturbation is negative ({value}) at {at}; sampling needs phi0 >= 0")]
    NegativePhi { at: String, value: f64 },
    #[error("initial perturbation has no declared bound")]
    MissingBound,
    #[error("growth class {growth} of phi0 is not below beta/2 = {half_beta}")]
    Growth { growth: f64, half_beta: f64 },
    #[error("runaway dynamics: more than {0} collision events")]
    Runaway(usize),
    #[error("t_end {t_end} is not after the current time {time}")]
    TimeOrder { time: f64, t_end: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("csv: {0}")]
    Csv(String),
}

/// One violated constraint of a [`ScalingConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub name: &'static str,
    pub message: String,
}

/// Dimension, diameter, chemical potentials and inverse temperature of the
/// mixture. Valid configurations satisfy `mu * eps^(d-1) = 1`, `1 <= lambda <
/// mu`, `beta > 0` and `eps < 1/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingConfig {
    pub d: usize,
    pub epsilon: f64,
    pub mu: f64,
    pub lambda: f64,
    pub beta: f64,
}

impl ScalingConfig {
    /// Configuration on the scaling line: `eps = mu^(-1/(d-1))`.
    pub fn from_mu(d: usize, mu: f64, lambda: f64, beta: f64) -> Self {
        let epsilon = mu.powf(-1.0 / (d as f64 - 1.0));
        ScalingConfig { d, epsilon, mu, lambda, beta }
    }

    /// Configuration on the scaling line from the diameter.
    pub fn from_epsilon(d: usize, epsilon: f64, lambda: f64, beta: f64) -> Self {
        let mu = epsilon.powi(1 - d as i32);
        ScalingConfig { d, epsilon, mu, lambda, beta }
    }

    pub fn violations(&self) -> Vec<ConstraintViolation> {
        let mut out = Vec::new();
        let mut push = |name, message: String| out.push(ConstraintViolation { name, message });
        if self.d != 2 && self.d != 3 {
            push("dimension", format!("d = {} must be 2 or 3", self.d));
            return out;
        }
        let fields = [self.epsilon, self.mu, self.lambda, self.beta];
        if fields.iter().any(|x| !x.is_finite()) {
            push("finite", "all parameters must be finite".into());
            return out;
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
            push("diameter", format!("epsilon = {} must lie in (0, 1/4)", self.epsilon));
        }
        let s = self.mu * self.epsilon.powi(self.d as i32 - 1);
        if (s - 1.0).abs() > 1e-9 {
            push("mixed scaling", format!("mu * epsilon^(d-1) = {s}, expected 1 within 1e-9"));
        }
        if !(self.lambda >= 1.0 && self.lambda < self.mu) {
            push("tagged density", format!("need 1 <= lambda < mu, got lambda = {}, mu = {}", self.lambda, self.mu));
        }
        if !(self.beta > 0.0) {
            push("temperature", format!("beta = {} must be positive", self.beta));
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            let msg = v.iter().map(|c| format!("{}: {}", c.name, c.message)).collect::<Vec<_>>().join("; ");
            Err(SimError::Config(msg))
        }
    }

    /// Tagged fraction `p_mu = lambda / mu`.
    pub fn p_mu(&self) -> f64 {
        self.lambda / self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub id: usize,
    pub x: Vec3,
    pub v: Vec3,
    pub tag: u8,
}

/// Particles at a common time, together with the configuration and seed that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub cfg: ScalingConfig,
    pub seed: u64,
    pub time: f64,
    pub particles: Vec<Particle>,
}

impl SystemState {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn tagged_count(&self) -> usize {
        self.particles.iter().filter(|p| p.tag == 1).count()
    }

    pub fn momentum(&self) -> Vec3 {
        let mut m = [0.0; 3];
        for p in &self.particles {
            for k in 0..3 {
                m[k] += p.v[k];
            }
        }
        m
    }

    pub fn energy(&self) -> f64 {
        self.particles.iter().map(|p| norm_sq(&p.v)).sum()
    }

    /// Smallest pairwise torus distance (infinity for fewer than two particles).
    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, p) in self.particles.iter().enumerate() {
            for q in &self.particles[i + 1..] {
                best = best.min(crate::geometry::torus_distance(&p.x, &q.x));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    pub a: usize,
    pub b: usize,
    pub omega: Vec3,
    pub pre_a: Vec3,
    pub pre_b: Vec3,
    pub post_a: Vec3,
    pub post_b: Vec3,
}

/// Time-ordered collision history of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollisionLog {
    pub events: Vec<CollisionEvent>,
    pub tags: Vec<u8>,
    pub t_start: f64,
    pub t_end: f64,
    /// Number of events closer than the tie tolerance to their predecessor.
    pub ties: usize,
}

impl CollisionLog {
    pub fn n_particles(&self) -> usize {
        self.tags.len()
    }

    /// Number of collisions with at least one tagged partner, and with both.
    pub fn tagged_counts(&self, upto: f64) -> (usize, usize) {
        let mut any = 0;
        let mut both = 0;
        for e in self.events.iter().take_while(|e| e.time <= upto) {
            let ta = self.tags[e.a] == 1;
            let tb = self.tags[e.b] == 1;
            if ta || tb {
                any += 1;
            }
            if ta && tb {
                both += 1;
            }
        }
        (any, both)
    }
}
