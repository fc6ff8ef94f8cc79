//! Quadrature rules used by the deterministic numerics.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).expect("nonzero"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Product rule on the unit sphere S^2: Gauss-Legendre in cos(theta) times a
/// uniform azimuthal grid. Exact for spherical harmonics of degree below
/// `min(2 n_polar, n_azimuth)`.
pub fn sphere_rule(n_polar: usize, n_azimuth: usize) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::with_capacity(n_polar * n_azimuth);
    let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
    for (x, w) in gauss_legendre(n_polar, -1.0, 1.0) {
        let st = (1.0 - x * x).max(0.0).sqrt();
        for k in 0..n_azimuth {
            let ph = (k as f64 + 0.5) * dphi;
            out.push(([st * ph.cos(), st * ph.sin(), x], w * dphi));
        }
    }
    out
}

/// Uniform rule on the unit circle.
pub fn circle_rule(n: usize) -> Vec<([f64; 3], f64)> {
    let dphi = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|k| {
            let ph = (k as f64 + 0.5) * dphi;
            ([ph.cos(), ph.sin(), 0.0], dphi)
        })
        .collect()
}
