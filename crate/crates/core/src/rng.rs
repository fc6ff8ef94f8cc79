//! Counter-derived random streams and simple samplers shared by the simulation
//! and Monte Carlo modules.

use crate::vec3::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type KcRng = ChaCha8Rng;

/// Independent stream `stream` derived from `seed`. Replica `r` of a run with
/// base seed `s` always uses `stream_rng(s, r)`, whatever the worker count.
pub fn stream_rng(seed: u64, stream: u64) -> KcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal draw in the first `d` components.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, sd: f64) -> Vec3 {
    let mut v = [0.0; 3];
    for c in v.iter_mut().take(d) {
        let z: f64 = StandardNormal.sample(rng);
        *c = sd * z;
    }
    v
}

/// Maxwellian velocity with inverse temperature `beta`.
pub fn maxwellian<R: Rng + ?Sized>(rng: &mut R, d: usize, beta: f64) -> Vec3 {
    gaussian_vec(rng, d, 1.0 / beta.sqrt())
}

/// Uniform point on the unit sphere S^{d-1}.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec3 {
    loop {
        let g = gaussian_vec(rng, d, 1.0);
        if let Some(u) = crate::vec3::normalized(&g) {
            return u;
        }
    }
}

/// Uniform point of the unit torus [0,1)^d.
pub fn torus_point<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec3 {
    let mut x = [0.0; 3];
    for c in x.iter_mut().take(d) {
        *c = rng.random::<f64>();
    }
    x
}
