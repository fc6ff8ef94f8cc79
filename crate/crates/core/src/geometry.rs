//! Torus arithmetic and hard-sphere scattering primitives.
//!
//! Positions live on the unit torus `[0,1)^d`, velocities are plain vectors.
//! Two-dimensional runs keep the third component at zero, so the same
//! routines serve `d = 2` and `d = 3`.

use crate::rng;
use crate::vec3::{dot, norm, normalized, scale, sub, Vec3};
use rand::Rng;
use thiserror::Error;

/// Tolerance on `|omega| = 1` accepted by [`scatter`].
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("impact direction is not a unit vector (|omega| = {0})")]
    NonUnitOmega(f64),
    #[error("relative velocity is zero; the flux density is undefined")]
    DegenerateRelativeVelocity,
    #[error("unsupported dimension {0}; expected 2 or 3")]
    Dimension(usize),
}

/// Line-of-centers direction `omega` together with the post-collisional
/// relative direction `sigma` it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationAngle {
    pub omega: Vec3,
    pub sigma: Vec3,
}

/// Wrap a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Nearest-image representative of `b - a`. Components lie in `(-1/2, 1/2]`,
/// so an exact half-torus separation is reported as `+1/2`.
pub fn min_image_displacement(a: &Vec3, b: &Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let x = b[k] - a[k];
        out[k] = x - (x - 0.5).ceil();
    }
    out
}

/// Distance on the unit torus.
pub fn torus_distance(a: &Vec3, b: &Vec3) -> f64 {
    norm(&min_image_displacement(a, b))
}

/// Hard-sphere exchange of the normal momentum component along `omega`.
/// A grazing configuration (`<omega, v - w> = 0`) is returned unchanged.
pub fn scatter(v: &Vec3, w: &Vec3, omega: &Vec3) -> Result<(Vec3, Vec3), GeometryError> {
    let n = norm(omega);
    if !((n - 1.0).abs() <= UNIT_TOL) {
        return Err(GeometryError::NonUnitOmega(n));
    }
    let p = dot(omega, &sub(v, w));
    if p == 0.0 {
        return Ok((*v, *w));
    }
    let dv = scale(omega, p);
    Ok((sub(v, &dv), crate::vec3::add(w, &dv)))
}

/// Post-collisional relative direction for impact direction `omega` and
/// relative velocity `u`: the reflection of `u/|u|` across the plane normal
/// to `omega`.
pub fn sigma_of(omega: &Vec3, u: &Vec3) -> Option<Vec3> {
    let uh = normalized(u)?;
    let p = dot(omega, &uh);
    Some(sub(&uh, &scale(omega, 2.0 * p)))
}

/// Inverse of [`sigma_of`] on the half-sphere `<omega, u> > 0`.
pub fn omega_of(sigma: &Vec3, u: &Vec3) -> Option<Vec3> {
    let uh = normalized(u)?;
    normalized(&sub(&uh, sigma))
}

/// Draw `omega` on `{<omega,u> > 0}` with density proportional to
/// `<omega,u>_+`.
///
/// In three dimensions `sigma` is uniform on the sphere and `omega` is its
/// image under the scattering map, whose Jacobian is `4 <omega, u/|u|>`. In two
/// dimensions the same map has a constant Jacobian, so the angle to `u` is
/// drawn directly from the cosine law and `sigma` is obtained by reflection.
pub fn sample_flux_angle<R: Rng + ?Sized>(
    u: &Vec3,
    d: usize,
    rng: &mut R,
) -> Result<DeviationAngle, GeometryError> {
    let uh = normalized(u).ok_or(GeometryError::DegenerateRelativeVelocity)?;
    match d {
        3 => loop {
            let sigma = rng::unit_sphere(rng, 3);
            if let Some(omega) = normalized(&sub(&uh, &sigma)) {
                if dot(&omega, &uh) > 0.0 {
                    return Ok(DeviationAngle { omega, sigma });
                }
            }
        },
        2 => loop {
            let s: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let th = s.asin();
            let (sn, cs) = th.sin_cos();
            let perp = [-uh[1], uh[0], 0.0];
            let omega = [cs * uh[0] + sn * perp[0], cs * uh[1] + sn * perp[1], 0.0];
            if cs > 0.0 {
                let sigma = sigma_of(&omega, &uh).expect("unit u");
                return Ok(DeviationAngle { omega, sigma });
            }
        },
        other => Err(GeometryError::Dimension(other)),
    }
}

/// Surface area of the unit sphere `S^{n}` embedded in `R^{n+1}`.
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 2.0,
        1 => 2.0 * PI,
        2 => 4.0 * PI,
        3 => 2.0 * PI * PI,
        _ => {
            let k = (n + 1) as f64;
            2.0 * PI.powf(k / 2.0) / statrs::function::gamma::gamma(k / 2.0)
        }
    }
}

/// Total flux `int <omega,u>_+ d omega = |S^{d-2}| |u| / (d-1)`.
pub fn flux_total(u_norm: f64, d: usize) -> f64 {
    sphere_area(d - 2) / (d as f64 - 1.0) * u_norm
}
