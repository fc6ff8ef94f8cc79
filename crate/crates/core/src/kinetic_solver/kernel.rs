use super::{loss_rate, SolverError, VelocityGrid};
use crate::quad::gauss_legendre;
use rayon::prelude::*;
use statrs::function::erf::erfc;
use std::f64::consts::PI;
use std::sync::Arc;

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
const GROUP: usize = 48;

fn act(g: usize, a: [i32; 3]) -> [i32; 3] {
    let p = PERMS[g / 8];
    let s = |k: usize| if (g >> k) & 1 == 1 { -1 } else { 1 };
    [s(0) * a[p[0]], s(1) * a[p[1]], s(2) * a[p[2]]]
}

/// Gain kernel of the symmetric form on a velocity grid.
///
/// Off the diagonal `K_ij = h^3 k(v_i, v_j)`. The diagonal holds the
/// integrable singularity of the cell: a Gaussian bump of width `2h` around
/// `v_i` is integrated analytically against the kernel and its grid sum is
/// subtracted. Only rows in the fundamental domain `0 <= a_0 <= a_1 <= a_2` of
/// the signed-permutation group are stored.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Arc<VelocityGrid>,
    reps: Vec<usize>,
    rows: Vec<f64>,
    rep_of: Vec<(u32, u8)>,
    perm: Vec<u32>,
    inv: [u8; GROUP],
    nu_disc: Vec<f64>,
    nu: Vec<f64>,
    diag: Vec<f64>,
}

/// Pointwise kernel `sqrt(beta/2pi)/|u| exp(-beta [|u|^2/8 + (|eta|^2-|v|^2)^2/(8|u|^2)])`.
pub(crate) fn kernel_value(beta: f64, u_sq: f64, energy_gap: f64) -> f64 {
    (beta / (2.0 * PI)).sqrt() / u_sq.sqrt() * (-beta * (u_sq / 8.0 + energy_gap * energy_gap / (8.0 * u_sq))).exp()
}

/// `int k(v, eta) M^{1/2}(eta)/M^{1/2}(v) exp(-|eta - v|^2/(2 s^2)) d eta`.
fn smoothed_cell_integral(beta: f64, a: f64, s: f64) -> f64 {
    let big_a = beta / 2.0 + 1.0 / (2.0 * s * s);
    let mut tot = 0.0;
    for (x, w) in gauss_legendre(64, -1.0, 1.0) {
        let b = beta * a * x;
        let z = b / (2.0 * big_a.sqrt());
        let gauss = -0.5 * beta * a * a * x * x;
        let pre = gauss.exp();
        let j = 0.5 * (PI / big_a).sqrt() * (z * z + gauss).exp() * erfc(z);
        tot += w * (pre - b * j) / (2.0 * big_a);
    }
    (beta / (2.0 * PI)).sqrt() * 2.0 * PI * tot
}

impl KernelMatrix {
    pub fn build(grid: Arc<VelocityGrid>, d: usize) -> Result<Self, SolverError> {
        if d != 3 {
            return Err(SolverError::Unsupported(d));
        }
        let n = grid.len();
        let mut inv = [0u8; GROUP];
        for g in 0..GROUP {
            let probe = act(g, [1, 2, 3]);
            inv[g] = (0..GROUP).find(|&q| act(q, probe) == [1, 2, 3]).expect("group closed") as u8;
        }
        let mut perm = vec![0u32; GROUP * n];
        for g in 0..GROUP {
            for (j, c) in grid.coords().iter().enumerate() {
                perm[g * n + j] = grid.index_of(act(g, *c)).expect("grid symmetric") as u32;
            }
        }
        let mut reps = Vec::new();
        let mut slot_of = vec![u32::MAX; n];
        for (i, c) in grid.coords().iter().enumerate() {
            if 0 <= c[0] && c[0] <= c[1] && c[1] <= c[2] {
                slot_of[i] = reps.len() as u32;
                reps.push(i);
            }
        }
        let rep_of: Vec<(u32, u8)> = grid
            .coords()
            .iter()
            .map(|c| {
                let mut a = [c[0].abs(), c[1].abs(), c[2].abs()];
                a.sort_unstable();
                let r = grid.index_of(a).expect("grid symmetric");
                let g = (0..GROUP).find(|&g| act(g, a) == *c).expect("orbit");
                (slot_of[r], g as u8)
            })
            .collect();

        let beta = grid.beta;
        let pts = grid.points();
        let sq: Vec<f64> = pts.iter().map(crate::vec3::norm_sq).collect();
        let mh = grid.maxwellian_sqrt().to_vec();
        let w = grid.weight;
        let s = 2.0 * grid.h;
        let rows: Vec<Vec<f64>> = reps
            .par_iter()
            .map(|&i| {
                let v = pts[i];
                let mut row = vec![0.0; n];
                let mut smooth = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let e = pts[j];
                    let u_sq = (e[0] - v[0]).powi(2) + (e[1] - v[1]).powi(2) + (e[2] - v[2]).powi(2);
                    let k = w * kernel_value(beta, u_sq, sq[j] - sq[i]);
                    row[j] = k;
                    smooth += k * (-u_sq / (2.0 * s * s)).exp() * mh[j];
                }
                row[i] = smoothed_cell_integral(beta, sq[i].sqrt(), s) - smooth / mh[i];
                row
            })
            .collect();
        let rows: Vec<f64> = rows.into_iter().flatten().collect();
        let diag = (0..n).map(|i| rows[rep_of[i].0 as usize * n + reps[rep_of[i].0 as usize]]).collect();
        let nu = pts.iter().map(|v| loss_rate(v, beta, 3)).collect();
        let mut km = KernelMatrix { grid, reps, rows, rep_of, perm, inv, nu_disc: Vec::new(), nu, diag };
        let mh = km.grid.maxwellian_sqrt().to_vec();
        let kmh = km.apply(&mh);
        km.nu_disc = kmh.iter().zip(&mh).map(|(a, b)| a / b).collect();
        Ok(km)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn stored_rows(&self) -> usize {
        self.reps.len()
    }

    /// `K_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let n = self.len();
        let (slot, g) = self.rep_of[i];
        let jj = self.perm[self.inv[g as usize] as usize * n + j] as usize;
        self.rows[slot as usize * n + jj]
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `K x` in the symmetric representation.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n, "vector length");
        let mut xt = vec![0.0; n * GROUP];
        for g in 0..GROUP {
            let p = &self.perm[g * n..(g + 1) * n];
            for j in 0..n {
                xt[j * GROUP + g] = x[p[j] as usize];
            }
        }
        let acc: Vec<[f64; GROUP]> = (0..self.reps.len())
            .into_par_iter()
            .map(|r| {
                let row = &self.rows[r * n..(r + 1) * n];
                let mut a = [0.0; GROUP];
                for (j, &k) in row.iter().enumerate() {
                    let xs = &xt[j * GROUP..(j + 1) * GROUP];
                    for g in 0..GROUP {
                        a[g] += k * xs[g];
                    }
                }
                a
            })
            .collect();
        let mut y = vec![0.0; n];
        for (r, a) in acc.iter().enumerate() {
            let i = self.reps[r];
            for g in 0..GROUP {
                y[self.perm[g * n + i] as usize] = a[g];
            }
        }
        y
    }

    /// Loss factor consistent with the discrete gain: `(K M^{1/2}) / M^{1/2}`.
    pub fn nu_discrete(&self) -> &[f64] {
        &self.nu_disc
    }

    /// Exact loss factor at the grid points.
    pub fn nu_exact(&self) -> &[f64] {
        &self.nu
    }

    /// Function-form gain `M^{-1/2} K (M^{1/2} phi)`.
    pub fn gain_function(&self, phi: &[f64]) -> Vec<f64> {
        let mh = self.grid.maxwellian_sqrt();
        let r: Vec<f64> = phi.iter().zip(mh).map(|(a, b)| a * b).collect();
        self.apply(&r).iter().zip(mh).map(|(a, b)| a / b).collect()
    }

    /// Function-form generator `L phi = G phi - nu phi`.
    pub fn generator_function(&self, phi: &[f64]) -> Vec<f64> {
        let g = self.gain_function(phi);
        g.iter().zip(phi).zip(&self.nu_disc).map(|((g, p), n)| g - n * p).collect()
    }

    /// Smallest rate making `I + L / rate` a stochastic matrix.
    pub fn uniformization_rate(&self) -> f64 {
        self.nu_disc.iter().zip(&self.diag).map(|(n, d)| n - d).fold(0.0, f64::max)
    }

    /// `max |K_ij - K_ji|` over all pairs.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.len();
        self.reps
            .iter()
            .map(|&i| (0..n).map(|j| (self.entry(i, j) - self.entry(j, i)).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// `max_i |(K M^{1/2})_i - nu_i M^{1/2}_i| / max_i nu_i M^{1/2}_i`.
    pub fn eigen_defect(&self) -> f64 {
        let mh = self.grid.maxwellian_sqrt();
        let k = self.apply(mh);
        let scale = self.nu.iter().zip(mh).map(|(a, b)| a * b).fold(0.0, f64::max);
        k.iter().zip(self.nu.iter().zip(mh)).map(|(k, (n, m))| (k - n * m).abs()).fold(0.0, f64::max) / scale
    }

    /// Row sums `(K 1)(v_i)`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.apply(&vec![1.0; self.len()])
    }

    pub fn min_offdiagonal(&self) -> f64 {
        let n = self.len();
        let mut m = f64::INFINITY;
        for (r, &i) in self.reps.iter().enumerate() {
            for j in 0..n {
                if j != i {
                    m = m.min(self.rows[r * n + j]);
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::norm;

    #[test]
    fn group_tables() {
        let mut seen = std::collections::HashSet::new();
        for g in 0..GROUP {
            seen.insert(act(g, [1, 2, 3]));
        }
        assert_eq!(seen.len(), GROUP);
    }

    #[test]
    fn cell_integral_matches_quadrature() {
        // Spherical quadrature around v of the smoothed kernel integral.
        let beta = 1.0;
        let s = 0.7;
        for a in [0.0, 1.3, 3.0] {
            let v = [a, 0.0, 0.0];
            let mut tot = 0.0;
            for (r, wr) in gauss_legendre(80, 0.0, 8.0 * s) {
                for (dir, wd) in crate::quad::sphere_rule(32, 48) {
                    let e = [v[0] + r * dir[0], r * dir[1], r * dir[2]];
                    let gap = crate::vec3::norm_sq(&e) - a * a;
                    let k = kernel_value(beta, r * r, gap);
                    tot += wr * wd * r * r * k * (-0.25 * beta * gap).exp() * (-(r * r) / (2.0 * s * s)).exp();
                }
            }
            let c = smoothed_cell_integral(beta, a, s);
            assert!((c / tot - 1.0).abs() < 1e-8, "{a}: {c} vs {tot}");
        }
    }

    #[test]
    fn kernel_small_grid_properties() {
        let grid = Arc::new(VelocityGrid::new(17, 1.0).unwrap());
        let k = KernelMatrix::build(grid.clone(), 3).unwrap();
        assert!(k.stored_rows() * 20 < grid.len());
        assert!(k.symmetry_defect() < 1e-10);
        assert!(k.min_offdiagonal() >= 0.0);
        assert!(k.eigen_defect() < 5e-3, "{}", k.eigen_defect());
        let sums = k.row_sums();
        for (i, v) in grid.points().iter().enumerate() {
            let a = norm(v);
            if a >= 1.0 {
                assert!(sums[i] <= 17.0 * 4.0 * PI / a);
            }
        }
        // apply agrees with the explicit entries
        let x: Vec<f64> = grid.points().iter().map(|v| (v[0] + 2.0 * v[1] - v[2] * v[2]).sin()).collect();
        let y = k.apply(&x);
        for i in [0, 7, grid.len() / 2, grid.len() - 3] {
            let direct: f64 = (0..grid.len()).map(|j| k.entry(i, j) * x[j]).sum();
            assert!((direct - y[i]).abs() < 1e-12 * (1.0 + direct.abs()));
        }
        assert!(matches!(KernelMatrix::build(grid, 2), Err(SolverError::Unsupported(2))));
    }
}
