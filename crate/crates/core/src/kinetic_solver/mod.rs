//! Linear Rayleigh-Boltzmann solvers: a deterministic velocity-grid backend
//! built on the symmetrized gain kernel, a velocity-jump Monte Carlo backend
//! and a signed pseudo-trajectory (Dyson) sampler.

mod collision;
mod deterministic;
mod dyson;
mod field;
mod jump;
mod kernel;

pub use collision::{
    apply_collision, biased_collision_rhs, biased_collision_rhs_at, collision_at, gain, CollisionQuadrature,
};
pub use deterministic::{expm_generator, project_modes, solve_rb_deterministic, RbTrajectory};
pub use dyson::{estimate_f1_dyson, DysonEstimate, DysonHistory, DysonOptions, KBreakdown};
pub use field::{FieldForm, VelocityField};
pub use jump::{partner_velocity, simulate_path, solve_rb_jump_mc, JumpMcResult, JumpOptions, Path, PathObservable, Segment, TransportSign};
pub use kernel::KernelMatrix;

use crate::geometry::GeometryError;
use crate::quad::gauss_legendre;
use crate::statistics::PhaseFunction;
use crate::vec3::{norm, Vec3};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("the deterministic kernel backend supports d = 3 only (got d = {0}); use the jump or Dyson backend")]
    Unsupported(usize),
    #[error("field form mismatch: expected {expected:?}, got {got:?}")]
    FormMismatch { expected: FieldForm, got: FieldForm },
    #[error("field does not match the grid ({0} values for {1} points)")]
    GridMismatch(usize, usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid step size {0}")]
    Step(f64),
    #[error("times must be nondecreasing and within [0, t]")]
    Times,
    #[error("partner rejection budget of {0} proposals exceeded")]
    RejectionBudget(usize),
    #[error("k_max = {0} outside 0..=12")]
    KMax(usize),
    #[error("t = {0} outside [0, 1]")]
    Horizon(f64),
    #[error("observable outside the growth class: {0}")]
    Growth(String),
    #[error("solver requires spatially homogeneous data")]
    Inhomogeneous,
    #[error("positivity lost ({0:e}); reduce the step size")]
    Positivity(f64),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ball-truncated uniform velocity grid. Points are `-v_max + i h` per axis
/// with `|v| <= v_max`; every point carries weight `h^3`.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    pub beta: f64,
    pub v_max: f64,
    pub m: usize,
    pub h: f64,
    pub weight: f64,
    points: Vec<Vec3>,
    coords: Vec<[i32; 3]>,
    lookup: Vec<i32>,
    m_full: Vec<f64>,
    m_half: Vec<f64>,
}

/// Truncation radius leaving Gaussian mass below 1e-10 outside the ball.
pub fn default_v_max(beta: f64) -> f64 {
    (46.0 / beta).sqrt()
}

pub fn maxwellian_density(v: &Vec3, beta: f64, d: usize) -> f64 {
    let vs: f64 = v[..d].iter().map(|x| x * x).sum();
    (beta / (2.0 * PI)).powf(d as f64 / 2.0) * (-0.5 * beta * vs).exp()
}

impl VelocityGrid {
    pub fn new(m: usize, beta: f64) -> Result<Self, SolverError> {
        Self::with_v_max(m, beta, default_v_max(beta))
    }

    pub fn with_v_max(m: usize, beta: f64, v_max: f64) -> Result<Self, SolverError> {
        if m < 3 || m % 2 == 0 || m > 129 {
            return Err(SolverError::Grid(format!("points per axis must be odd in 3..=129, got {m}")));
        }
        if !(beta > 0.0 && beta.is_finite() && v_max > 0.0 && v_max.is_finite()) {
            return Err(SolverError::Grid("beta and v_max must be positive".into()));
        }
        let c = (m / 2) as i32;
        let h = 2.0 * v_max / (m - 1) as f64;
        let mut points = Vec::new();
        let mut coords = Vec::new();
        let mut lookup = vec![-1; m * m * m];
        for a in -c..=c {
            for b in -c..=c {
                for e in -c..=c {
                    let v = [a as f64 * h, b as f64 * h, e as f64 * h];
                    if norm(&v) <= v_max * (1.0 + 1e-12) {
                        let flat = ((a + c) as usize * m + (b + c) as usize) * m + (e + c) as usize;
                        lookup[flat] = points.len() as i32;
                        points.push(v);
                        coords.push([a, b, e]);
                    }
                }
            }
        }
        let m_full: Vec<f64> = points.iter().map(|v| maxwellian_density(v, beta, 3)).collect();
        let m_half = m_full.iter().map(|x| x.sqrt()).collect();
        Ok(VelocityGrid { beta, v_max, m, h, weight: h * h * h, points, coords, lookup, m_full, m_half })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn coords(&self) -> &[[i32; 3]] {
        &self.coords
    }

    /// Index of the point with centered integer coordinates `a`.
    pub fn index_of(&self, a: [i32; 3]) -> Option<usize> {
        let c = (self.m / 2) as i32;
        if a.iter().any(|x| x.abs() > c) {
            return None;
        }
        let flat = ((a[0] + c) as usize * self.m + (a[1] + c) as usize) * self.m + (a[2] + c) as usize;
        usize::try_from(self.lookup[flat]).ok()
    }

    pub fn maxwellian(&self) -> &[f64] {
        &self.m_full
    }

    pub fn maxwellian_sqrt(&self) -> &[f64] {
        &self.m_half
    }

    /// Mass of `M_beta` captured by the grid.
    pub fn captured_mass(&self) -> f64 {
        self.weight * self.m_full.iter().sum::<f64>()
    }
}

/// Loss factor `nu(v) = (|S^{d-2}|/(d-1)) int M_beta(v_c) |v - v_c| dv_c`.
pub fn loss_rate(v: &Vec3, beta: f64, d: usize) -> f64 {
    let s = 1.0 / beta.sqrt();
    match d {
        3 => {
            let a = norm(v) / s;
            let mean_abs = if a < 1e-3 {
                (2.0 / PI).sqrt() * (2.0 + a * a / 3.0 - a.powi(4) / 60.0)
            } else {
                (2.0 / PI).sqrt() * (-0.5 * a * a).exp() + (a + 1.0 / a) * erf(a / 2f64.sqrt())
            };
            PI * s * mean_abs
        }
        2 => 2.0 * s * mean_distance_2d(v[0].hypot(v[1]) / s),
        _ => f64::NAN,
    }
}

/// `E|w - V|` for `|w| = a` and `V` standard normal in the plane, by polar
/// quadrature centered at `w`.
fn mean_distance_2d(a: f64) -> f64 {
    let n_theta = 64 + 32 * a.ceil() as usize;
    let r_max = a + 14.0;
    let mut total = 0.0;
    for (r, wr) in gauss_legendre(96, 0.0, r_max) {
        let mut ang = 0.0;
        for k in 0..n_theta {
            let th = 2.0 * PI * (k as f64 + 0.5) / n_theta as f64;
            let dist_sq = a * a + r * r + 2.0 * a * r * th.cos();
            ang += (-0.5 * dist_sq).exp();
        }
        total += wr * r * r * ang * 2.0 * PI / n_theta as f64;
    }
    total / (2.0 * PI)
}

/// `E_M nu`, the equilibrium collision frequency.
pub fn mean_loss_rate(beta: f64, d: usize) -> f64 {
    match d {
        3 => 4.0 * (PI / beta).sqrt(),
        2 => 2.0 * (PI / beta).sqrt(),
        _ => f64::NAN,
    }
}

/// Line-delimited estimate record of a solver backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEstimate {
    pub observable: String,
    pub backend: String,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl SolverEstimate {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain record")
    }
}

/// Reject observables whose declared growth is not below `beta/4`, or whose
/// values on the grid are non-finite or exceed `(beta/4)|v|^2 + c` for the
/// declared bound `c`.
pub fn check_growth_class(p: &PhaseFunction, grid: &VelocityGrid, t: f64) -> Result<(), SolverError> {
    if p.growth() >= grid.beta / 4.0 {
        return Err(SolverError::Growth(format!("declared growth {} >= beta/4", p.growth())));
    }
    for v in grid.points() {
        let x = p.eval_tv(t, v);
        if !x.is_finite() {
            return Err(SolverError::Growth(format!("non-finite value at v = {v:?}")));
        }
        if let Some(c) = p.bound() {
            let excess = x - 0.25 * grid.beta * crate::vec3::norm_sq(v);
            if excess > c * (1.0 + 1e-12) {
                return Err(SolverError::Growth(format!("p - (beta/4)|v|^2 = {excess} exceeds {c} at v = {v:?}")));
            }
        }
    }
    Ok(())
}
