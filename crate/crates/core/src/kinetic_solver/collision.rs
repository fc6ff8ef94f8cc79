use super::{loss_rate, maxwellian_density, FieldForm, KernelMatrix, SolverError, VelocityField};
use crate::quad::{gauss_legendre, sphere_rule};
use crate::vec3::{norm, Vec3};

/// Collision operator on a grid field in the requested form: `L phi` for
/// functions, `L* chi` for densities, `K R - nu R` for the symmetric form.
pub fn apply_collision(kernel: &KernelMatrix, f: &VelocityField, form: FieldForm) -> Result<VelocityField, SolverError> {
    f.expect_form(form)?;
    if f.len() != kernel.len() {
        return Err(SolverError::GridMismatch(f.len(), kernel.len()));
    }
    let op = |x: &[f64]| -> Vec<f64> {
        let r = f.grid.maxwellian_sqrt();
        let nu = kernel.nu_discrete();
        let (to_r, from_r): (Vec<f64>, Vec<f64>) = match form {
            FieldForm::Function => (r.to_vec(), r.iter().map(|m| 1.0 / m).collect()),
            FieldForm::Density => (r.iter().map(|m| 1.0 / m).collect(), r.to_vec()),
            FieldForm::SymmetricR => (vec![1.0; r.len()], vec![1.0; r.len()]),
        };
        let y: Vec<f64> = x.iter().zip(&to_r).map(|(a, b)| a * b).collect();
        let ky = kernel.apply(&y);
        (0..x.len()).map(|i| ky[i] * from_r[i] - nu[i] * x[i]).collect()
    };
    let im = if f.im.iter().all(|x| *x == 0.0) { f.im.clone() } else { op(&f.im) };
    Ok(VelocityField { grid: f.grid.clone(), form, mode: f.mode, re: op(&f.re), im })
}

/// Function-form gain `G phi = M^{-1/2} K M^{1/2} phi` of a grid field's
/// values.
pub fn gain(kernel: &KernelMatrix, values: &[f64]) -> Vec<f64> {
    kernel.gain_function(values)
}

/// Biased collision term on the grid:
/// `e^{p} G[w e^{-p}] - w e^{-p} G[e^{p}]`, with the function-form gain
/// applied to the raw values of `w`.
pub fn biased_collision_rhs(kernel: &KernelMatrix, w: &VelocityField, p: &[f64]) -> Result<VelocityField, SolverError> {
    if w.len() != kernel.len() || p.len() != kernel.len() {
        return Err(SolverError::GridMismatch(w.len().min(p.len()), kernel.len()));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::Growth("non-finite bias".into()));
    }
    let ep: Vec<f64> = p.iter().map(|x| x.exp()).collect();
    let g_ep = kernel.gain_function(&ep);
    let apply = |x: &[f64]| -> Vec<f64> {
        let we: Vec<f64> = x.iter().zip(&ep).map(|(a, e)| a / e).collect();
        let g = kernel.gain_function(&we);
        (0..x.len()).map(|i| ep[i] * g[i] - x[i] / ep[i] * g_ep[i]).collect()
    };
    let im = if w.im.iter().all(|x| *x == 0.0) { w.im.clone() } else { apply(&w.im) };
    Ok(VelocityField { grid: w.grid.clone(), form: w.form, mode: w.mode, re: apply(&w.re), im })
}

/// Product quadrature for pointwise collision integrals in `d = 3`, in the
/// flux-weighted form
/// `G phi(v) = int M(v+u) (|u|/4) int_{S^2} phi(v + u/2 + sigma |u|/2) d sigma du`.
#[derive(Debug, Clone)]
pub struct CollisionQuadrature {
    beta: f64,
    radial: Vec<(f64, f64)>,
    dirs: Vec<(Vec3, f64)>,
    sigmas: Vec<(Vec3, f64)>,
    reach: f64,
}

impl CollisionQuadrature {
    pub fn new(beta: f64, n_r: usize, n_dir: usize, n_sigma: usize) -> Self {
        CollisionQuadrature {
            beta,
            radial: gauss_legendre(n_r, 0.0, 1.0),
            dirs: sphere_rule(n_dir, 2 * n_dir),
            sigmas: sphere_rule(n_sigma, 2 * n_sigma),
            reach: 11.0 / beta.sqrt(),
        }
    }

    pub fn standard(beta: f64) -> Self {
        Self::new(beta, 48, 16, 10)
    }

    pub fn fine(beta: f64) -> Self {
        Self::new(beta, 80, 24, 18)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gain_at(&self, v: &Vec3, phi: &dyn Fn(&Vec3) -> f64) -> f64 {
        let r_max = norm(v) + self.reach;
        let mut tot = 0.0;
        for &(x, wx) in &self.radial {
            let r = x * r_max;
            let wr = wx * r_max * r * r;
            for (d, wd) in &self.dirs {
                let u = [r * d[0], r * d[1], r * d[2]];
                let vc = [v[0] + u[0], v[1] + u[1], v[2] + u[2]];
                let m = maxwellian_density(&vc, self.beta, 3);
                if m < 1e-300 {
                    continue;
                }
                let centre = [v[0] + 0.5 * u[0], v[1] + 0.5 * u[1], v[2] + 0.5 * u[2]];
                let mut inner = 0.0;
                for (s, ws) in &self.sigmas {
                    let vp = [centre[0] + 0.5 * r * s[0], centre[1] + 0.5 * r * s[1], centre[2] + 0.5 * r * s[2]];
                    inner += ws * phi(&vp);
                }
                tot += wr * wd * m * 0.25 * r * inner;
            }
        }
        tot
    }
}

/// Pointwise collision operator by direct `(v_c, omega)` quadrature; for the
/// density form `L* chi = M L(chi / M)` by detailed balance.
pub fn collision_at(q: &CollisionQuadrature, v: &Vec3, f: &dyn Fn(&Vec3) -> f64, form: FieldForm) -> f64 {
    let beta = q.beta;
    let nu = loss_rate(v, beta, 3);
    match form {
        FieldForm::Function => q.gain_at(v, f) - nu * f(v),
        FieldForm::Density => {
            let phi = |w: &Vec3| f(w) / maxwellian_density(w, beta, 3);
            maxwellian_density(v, beta, 3) * (q.gain_at(v, &phi) - nu * phi(v))
        }
        FieldForm::SymmetricR => {
            let mh = |w: &Vec3| maxwellian_density(w, beta, 3).sqrt();
            let phi = |w: &Vec3| f(w) / mh(w);
            mh(v) * (q.gain_at(v, &phi) - nu * phi(v))
        }
    }
}

/// Pointwise biased collision term
/// `int B M(v_c) [w(v') e^{p(v)-p(v')} - w(v) e^{p(v')-p(v)}]`.
pub fn biased_collision_rhs_at(q: &CollisionQuadrature, v: &Vec3, w: &dyn Fn(&Vec3) -> f64, p: &dyn Fn(&Vec3) -> f64) -> f64 {
    let pv = p(v);
    let a = q.gain_at(v, &|x: &Vec3| w(x) * (pv - p(x)).exp());
    let b = q.gain_at(v, &|x: &Vec3| (p(x) - pv).exp());
    a - w(v) * b
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic_solver::VelocityGrid;
    use std::sync::Arc;

    #[test]
    fn pointwise_gain_of_constants_is_loss_rate() {
        let q = CollisionQuadrature::standard(1.0);
        for v in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.3], [3.0, 0.0, 0.0]] {
            let g = q.gain_at(&v, &|_| 1.0);
            assert!((g / loss_rate(&v, 1.0, 3) - 1.0).abs() < 1e-9, "{v:?}: {g}");
        }
        let chi = |w: &Vec3| maxwellian_density(w, 1.0, 3);
        assert!(collision_at(&q, &[0.4, 0.1, -0.2], &chi, FieldForm::Density).abs() < 1e-12);
        assert!(collision_at(&q, &[0.4, 0.1, -0.2], &|_| 2.0, FieldForm::Function).abs() < 1e-8);
    }

    #[test]
    fn pointwise_quadrature_is_converged() {
        let q = CollisionQuadrature::standard(1.0);
        let v = [0.3, 0.0, 0.0];
        let single = collision_at(&q, &v, &|w| w[0], FieldForm::Function);
        let fine = CollisionQuadrature::fine(1.0);
        let single_f = collision_at(&fine, &v, &|w| w[0], FieldForm::Function);
        assert!((single - single_f).abs() < 1e-8);
    }

    #[test]
    fn grid_collision_forms_agree_and_are_dual() {
        let grid = Arc::new(VelocityGrid::new(17, 1.0).unwrap());
        let k = KernelMatrix::build(grid.clone(), 3).unwrap();
        let one = VelocityField::constant(grid.clone(), 1.0);
        assert!(apply_collision(&k, &one, FieldForm::Function).unwrap().max_abs() < 1e-12);
        let m = VelocityField::maxwellian(grid.clone());
        assert!(apply_collision(&k, &m, FieldForm::Density).unwrap().max_abs() < 1e-14);
        assert!(apply_collision(&k, &m, FieldForm::Function).is_err());
        let phi = VelocityField::from_fn(grid.clone(), FieldForm::Function, |v| (0.3 * v[0] - 0.2 * v[1] * v[2]).cos());
        let psi = VelocityField::from_fn(grid.clone(), FieldForm::Function, |v| (-0.1 * crate::vec3::norm_sq(v)).exp() * (1.0 + v[2]));
        let chi = psi.to_form(FieldForm::Density);
        let lchi = apply_collision(&k, &chi, FieldForm::Density).unwrap();
        let lphi = apply_collision(&k, &phi, FieldForm::Function).unwrap();
        let a: f64 = lchi.re.iter().zip(&phi.re).map(|(x, y)| x * y).sum::<f64>() * grid.weight;
        let b: f64 = chi.re.iter().zip(&lphi.re).map(|(x, y)| x * y).sum::<f64>() * grid.weight;
        assert!((a - b).abs() < 1e-6 * (a.abs() + b.abs()), "{a} {b}");
        let r = phi.to_form(FieldForm::SymmetricR);
        let lr = apply_collision(&k, &r, FieldForm::SymmetricR).unwrap().to_form(FieldForm::Function);
        for i in 0..grid.len() {
            assert!((lr.re[i] - lphi.re[i]).abs() < 1e-9 * (1.0 + lphi.re[i].abs()));
        }
    }

    #[test]
    fn grid_collision_matches_pointwise_quadrature() {
        let grid = Arc::new(VelocityGrid::new(21, 1.0).unwrap());
        let k = KernelMatrix::build(grid.clone(), 3).unwrap();
        let f = |v: &Vec3| (-0.125 * crate::vec3::norm_sq(v)).exp() * (1.0 + 0.5 * v[0]);
        let phi = VelocityField::from_fn(grid.clone(), FieldForm::Function, f);
        let lphi = apply_collision(&k, &phi, FieldForm::Function).unwrap();
        let q = CollisionQuadrature::standard(1.0);
        for a in [[0, 0, 0], [2, 1, 0], [-3, 0, 2]] {
            let i = grid.index_of(a).unwrap();
            let v = grid.points()[i];
            let exact = collision_at(&q, &v, &f, FieldForm::Function);
            assert!((lphi.re[i] - exact).abs() < 2e-3 * loss_rate(&v, 1.0, 3), "{a:?}: {} vs {exact}", lphi.re[i]);
        }
    }

    #[test]
    fn biased_rhs_reductions() {
        let grid = Arc::new(VelocityGrid::new(17, 1.0).unwrap());
        let k = KernelMatrix::build(grid.clone(), 3).unwrap();
        let w = VelocityField::from_fn(grid.clone(), FieldForm::Function, |v| 1.0 + 0.3 * v[1] * (-0.2 * crate::vec3::norm_sq(v)).exp());
        let l = apply_collision(&k, &w, FieldForm::Function).unwrap();
        let zero = vec![0.0; grid.len()];
        let b0 = biased_collision_rhs(&k, &w, &zero).unwrap();
        let bc = biased_collision_rhs(&k, &w, &vec![0.7; grid.len()]).unwrap();
        for i in 0..grid.len() {
            assert!((b0.re[i] - l.re[i]).abs() < 1e-10 * (1.0 + l.re[i].abs()));
            assert!((bc.re[i] - l.re[i]).abs() < 1e-10 * (1.0 + l.re[i].abs()));
        }
        let q = CollisionQuadrature::standard(1.0);
        let fine = CollisionQuadrature::fine(1.0);
        let wf = |v: &Vec3| 1.0 + 0.3 * v[1] * (-0.2 * crate::vec3::norm_sq(v)).exp();
        let pf = |v: &Vec3| 0.05 * v[0] - 0.03 * v[2] * v[2] * (-0.25 * crate::vec3::norm_sq(v)).exp();
        let v = [0.5, -0.4, 1.0];
        let a = biased_collision_rhs_at(&q, &v, &wf, &pf);
        let b = biased_collision_rhs_at(&fine, &v, &wf, &pf);
        assert!((a - b).abs() < 1e-5, "{a} {b}");
        let plain = collision_at(&q, &v, &wf, FieldForm::Function);
        let tol = 1e-8 * loss_rate(&v, 1.0, 3);
        assert!((biased_collision_rhs_at(&q, &v, &wf, &|_| 0.0) - plain).abs() < tol);
        assert!((biased_collision_rhs_at(&q, &v, &wf, &|_| 1.5) - plain).abs() < tol);
    }
}
