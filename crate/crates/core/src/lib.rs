//! Simulation and numerics for the tagged hard-sphere (Rayleigh gas) mixture:
//! microscopic sampling and dynamics, cumulant algebra, ensemble statistics,
//! linear Boltzmann solvers and large-deviation functionals.

pub mod gas_sim;
pub mod kinetic_solver;
pub mod large_deviations;
pub mod cumulant_algebra;
pub mod geometry;
pub mod quad;
pub mod rng;
pub mod statistics;
pub mod vec3;
