//! Rate machinery of the tagged-particle large deviations: the Hamiltonian,
//! the decoupled forward/backward Boltzmann-Hamilton-Jacobi system, the action
//! functional, the direct cumulant generating functional and its Legendre
//! transform over finite observable families, and biased solution paths.

use crate::kinetic_solver::{
    default_v_max, estimate_f1_dyson, expm_generator, solve_rb_jump_mc, DysonOptions, FieldForm, JumpOptions, KernelMatrix, PathObservable,
    SolverError, TransportSign, VelocityField,
};
use crate::statistics::{maxwellian_integral, phase::quasi_random_points, PhaseFunction, Point};
use crate::vec3::norm_sq;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("observable outside the bounded-transport class: {0}")]
    Class(String),
    #[error("empty candidate list")]
    NoCandidates,
    #[error("boundary data do not match the observable: {0}")]
    Boundary(String),
    #[error("normalized mass required, got {0}")]
    Mass(f64),
    #[error("step size {0} is unstable for this bias (need <= {1})")]
    Step(f64, f64),
}

/// Observable `h(s, x, v)` with a sampled certificate of
/// `sup (h - (beta/4)|v|^2)_+` and `sup |(d_s - v . grad_x) h|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservablePath {
    h: PhaseFunction,
    growth_excess: f64,
    transport_bound: f64,
}

impl ObservablePath {
    pub fn new(h: PhaseFunction, beta: f64, t: f64) -> Result<Self, LdpError> {
        if h.growth() >= beta / 4.0 {
            return Err(LdpError::Class(format!("declared growth {} >= beta/4", h.growth())));
        }
        let mut excess = 0.0f64;
        let mut transport = 0.0f64;
        for p in quasi_random_points(3, t, default_v_max(beta), 4096) {
            let a = h.eval(&p);
            let b = h.backward_transport(&p);
            if !a.is_finite() || !b.is_finite() {
                return Err(LdpError::Class(format!("non-finite value at {p}")));
            }
            excess = excess.max(a - 0.25 * beta * norm_sq(&p.v));
            transport = transport.max(b.abs());
        }
        Ok(ObservablePath { h, growth_excess: excess, transport_bound: transport })
    }

    /// Certificate checked against declared constants.
    pub fn with_limits(h: PhaseFunction, beta: f64, t: f64, growth_limit: f64, transport_limit: f64) -> Result<Self, LdpError> {
        let o = Self::new(h, beta, t)?;
        if o.growth_excess > growth_limit || o.transport_bound > transport_limit {
            return Err(LdpError::Class(format!(
                "sampled constants ({}, {}) exceed declared ({growth_limit}, {transport_limit})",
                o.growth_excess, o.transport_bound
            )));
        }
        Ok(o)
    }

    pub fn h(&self) -> &PhaseFunction {
        &self.h
    }

    pub fn growth_excess(&self) -> f64 {
        self.growth_excess
    }

    pub fn transport_bound(&self) -> f64 {
        self.transport_bound
    }
}

fn grid_values(kernel: &KernelMatrix, f: &PhaseFunction, t: f64) -> Vec<f64> {
    kernel.grid().points().iter().map(|v| f.eval_tv(t, v)).collect()
}

/// `sum_i w q_i (e^{-p_i} G[e^p]_i - nu_i)` on the grid.
pub fn hamiltonian_values(kernel: &KernelMatrix, q: &[f64], p: &[f64]) -> f64 {
    let ep: Vec<f64> = p.iter().map(|x| x.exp()).collect();
    let g = kernel.gain_function(&ep);
    let nu = kernel.nu_discrete();
    let w = kernel.grid().weight;
    (0..q.len()).map(|i| w * q[i] * (g[i] / ep[i] - nu[i])).sum()
}

/// `int B M(v_2) q(z_1) (e^{p(z_1') - p(z_1)} - 1)`.
pub fn hamiltonian_value(kernel: &KernelMatrix, q: &VelocityField, p: &PhaseFunction, t: f64) -> Result<f64, LdpError> {
    q.expect_form(FieldForm::Density)?;
    if !p.is_homogeneous() {
        return Err(SolverError::Inhomogeneous.into());
    }
    crate::kinetic_solver::check_growth_class(p, kernel.grid(), t)?;
    Ok(hamiltonian_values(kernel, &q.re, &grid_values(kernel, p, t)))
}

/// Forward density `chi` and backward function `eta` on a uniform time grid.
#[derive(Debug, Clone)]
pub struct BhjSolution {
    pub times: Vec<f64>,
    pub chi: Vec<VelocityField>,
    pub eta: Vec<VelocityField>,
}

impl BhjSolution {
    /// `q = chi eta` at snapshot `j`.
    pub fn q(&self, j: usize) -> Vec<f64> {
        self.chi[j].re.iter().zip(&self.eta[j].re).map(|(a, b)| a * b).collect()
    }

    /// `p = log eta` at snapshot `j`.
    pub fn p(&self, j: usize) -> Vec<f64> {
        self.eta[j].re.iter().map(|x| x.ln()).collect()
    }
}

fn step_count(t: f64, dt: f64) -> Result<usize, LdpError> {
    if !(dt > 0.0 && dt.is_finite()) || !(t >= 0.0 && t.is_finite()) {
        return Err(SolverError::Step(dt).into());
    }
    Ok(((t / dt).ceil() as usize).max(1))
}

fn theta_integral(theta: &PhaseFunction, v: &crate::vec3::Vec3, a: f64, b: f64) -> f64 {
    crate::quad::gauss_legendre(4, a, b).iter().map(|(s, w)| w * theta.eval_tv(*s, v)).sum()
}

/// Strang step of `psi' = L psi - theta psi` over `[a, b]`, `a < b` or
/// `a > b` for backward integration.
fn potential_step(kernel: &KernelMatrix, psi: &[f64], theta: &PhaseFunction, a: f64, b: f64) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let pts = kernel.grid().points();
    let fac = |x: &[f64], lo: f64, hi: f64| -> Vec<f64> {
        let (l, h) = if lo < hi { (lo, hi) } else { (hi, lo) };
        x.iter().zip(pts).map(|(y, v)| y * (-theta_integral(theta, v, l, h)).exp()).collect()
    };
    let half = fac(psi, a, mid);
    let moved = expm_generator(kernel, &half, (b - a).abs());
    fac(&moved, mid, b)
}

fn positivity(fields: &[Vec<f64>]) -> Result<(), LdpError> {
    let m = fields.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if m < -1e-10 {
        return Err(SolverError::Positivity(m).into());
    }
    Ok(())
}

/// Backward Feynman-Kac solve `d_s eta = -L eta + theta eta`, `eta(t) = gamma`;
/// returns `eta` at `s_j = j t / n`.
fn backward_eta(kernel: &KernelMatrix, theta: &PhaseFunction, gamma: &[f64], t: f64, n: usize) -> Vec<Vec<f64>> {
    let times: Vec<f64> = (0..=n).map(|j| t * j as f64 / n as f64).collect();
    let mut eta = vec![Vec::new(); n + 1];
    eta[n] = gamma.to_vec();
    for j in (0..n).rev() {
        eta[j] = potential_step(kernel, &eta[j + 1], theta, times[j + 1], times[j]);
    }
    eta
}

/// Solve the decoupled system: `chi' = L* chi - theta chi` from `M phi0`, and
/// `eta' = -L eta + theta eta` backward from `gamma_t`. Requires homogeneous
/// data.
pub fn solve_bhj(
    kernel: &KernelMatrix,
    theta: &PhaseFunction,
    gamma_t: &VelocityField,
    phi0: &PhaseFunction,
    t: f64,
    dt: f64,
) -> Result<BhjSolution, LdpError> {
    gamma_t.expect_form(FieldForm::Function)?;
    if !theta.is_homogeneous() || !phi0.is_homogeneous() || !gamma_t.is_homogeneous() {
        return Err(SolverError::Inhomogeneous.into());
    }
    let n = step_count(t, dt)?;
    let grid = kernel.grid().clone();
    let times: Vec<f64> = (0..=n).map(|j| t * j as f64 / n as f64).collect();
    let mut psi = vec![grid_values(kernel, phi0, 0.0)];
    for j in 0..n {
        let next = potential_step(kernel, &psi[j], theta, times[j], times[j + 1]);
        psi.push(next);
    }
    let eta = backward_eta(kernel, theta, &gamma_t.re, t, n);
    let m = grid.maxwellian();
    let chi: Vec<Vec<f64>> = psi.iter().map(|p| p.iter().zip(m).map(|(a, b)| a * b).collect()).collect();
    positivity(&chi)?;
    if eta.iter().flatten().any(|x| *x <= 0.0) {
        return Err(SolverError::Positivity(eta.iter().flatten().copied().fold(f64::INFINITY, f64::min)).into());
    }
    let wrap = |vals: Vec<Vec<f64>>, form| -> Vec<VelocityField> {
        vals.into_iter().map(|v| VelocityField::from_values(grid.clone(), form, v).expect("grid-sized finite values")).collect()
    };
    Ok(BhjSolution { times, chi: wrap(chi, FieldForm::Density), eta: wrap(eta, FieldForm::Function) })
}

/// `theta` of an observable for the given transport sign convention.
pub fn transport_of(g: &PhaseFunction, sign: TransportSign) -> PhaseFunction {
    let e = match sign {
        TransportSign::AsWritten => g.backward_expr().clone(),
        TransportSign::Forward => g.transport_expr().clone(),
    };
    PhaseFunction::from_expr(e)
}

/// `solve_bhj` with `theta` and `gamma(t) = e^{g(t)}` derived from `g`.
pub fn solve_bhj_for(kernel: &KernelMatrix, g: &ObservablePath, phi0: &PhaseFunction, t: f64, dt: f64) -> Result<BhjSolution, LdpError> {
    let theta = transport_of(g.h(), TransportSign::AsWritten);
    let gamma = VelocityField::from_fn(kernel.grid().clone(), FieldForm::Function, |v| g.h().eval_tv(t, v).exp());
    solve_bhj(kernel, &theta, &gamma, phi0, t, dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjAction {
    /// `int q(0) + A_1 + A_2`.
    pub value: f64,
    /// `int M phi0 e^{g(0)} + A_1 + A_2`.
    pub literal: f64,
    /// `A_1 = int_0^t int q (d_s - v . grad_x)(p - g)`.
    pub transport_term: f64,
    /// `A_2 = int_0^t H(q(s), p(s)) ds`.
    pub hamiltonian_term: f64,
}

fn trapezoid(times: &[f64], f: &[f64]) -> f64 {
    times.windows(2).zip(f.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

/// Action functional from a solved system; `d_s p` by second-order finite
/// differences on the solver grid, time integrals by the trapezoid rule.
pub fn hj_action(kernel: &KernelMatrix, g: &ObservablePath, sol: &BhjSolution, phi0: &PhaseFunction) -> Result<HjAction, LdpError> {
    let n = sol.times.len() - 1;
    let t = sol.times[n];
    let gt = grid_values(kernel, g.h(), t);
    let mismatch = sol.eta[n].re.iter().zip(&gt).map(|(e, g)| (e - g.exp()).abs() / g.exp()).fold(0.0, f64::max);
    if mismatch > 1e-12 {
        return Err(LdpError::Boundary(format!("eta(t) differs from exp(g(t)) by {mismatch:e}")));
    }
    let w = kernel.grid().weight;
    let p: Vec<Vec<f64>> = (0..=n).map(|j| sol.p(j)).collect();
    let q: Vec<Vec<f64>> = (0..=n).map(|j| sol.q(j)).collect();
    let theta = transport_of(g.h(), TransportSign::AsWritten);
    let pts = kernel.grid().points();
    let mut a1 = Vec::with_capacity(n + 1);
    let mut a2 = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let s = sol.times[j];
        let dp: Vec<f64> = (0..p[j].len())
            .map(|i| {
                if n == 1 {
                    (p[1][i] - p[0][i]) / (sol.times[1] - sol.times[0])
                } else if j == 0 {
                    (-3.0 * p[0][i] + 4.0 * p[1][i] - p[2][i]) / (sol.times[2] - sol.times[0])
                } else if j == n {
                    (3.0 * p[n][i] - 4.0 * p[n - 1][i] + p[n - 2][i]) / (sol.times[n] - sol.times[n - 2])
                } else {
                    (p[j + 1][i] - p[j - 1][i]) / (sol.times[j + 1] - sol.times[j - 1])
                }
            })
            .collect();
        a1.push((0..dp.len()).map(|i| w * q[j][i] * (dp[i] - theta.eval_tv(s, &pts[i]))).sum::<f64>());
        a2.push(hamiltonian_values(kernel, &q[j], &p[j]));
    }
    let transport_term = trapezoid(&sol.times, &a1);
    let hamiltonian_term = trapezoid(&sol.times, &a2);
    let q0: f64 = q[0].iter().sum::<f64>() * w;
    let m = kernel.grid().maxwellian();
    let literal0: f64 = pts.iter().zip(m).map(|(v, mi)| w * mi * phi0.eval_tv(0.0, v) * g.h().eval_tv(0.0, v).exp()).sum();
    Ok(HjAction {
        value: q0 + transport_term + hamiltonian_term,
        literal: literal0 + transport_term + hamiltonian_term,
        transport_term,
        hamiltonian_term,
    })
}

/// Backend of the direct functional `int F_1[exp(H_g)](t)`.
#[derive(Debug, Clone)]
pub enum RateBackend {
    /// Backward Feynman-Kac solve on the velocity grid.
    Deterministic { kernel: Arc<KernelMatrix>, dt: f64 },
    Jump(JumpOptions),
    Dyson(DysonOptions),
}

impl RateBackend {
    pub fn name(&self) -> &'static str {
        match self {
            RateBackend::Deterministic { .. } => "deterministic",
            RateBackend::Jump(_) => "jump",
            RateBackend::Dyson(_) => "dyson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateValue {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub truncation_bias: f64,
}

/// `int F_1[exp(g(t) - int_0^t (d_s - v . grad_x) g)](t)`.
pub fn rate_direct(g: &ObservablePath, phi0: &PhaseFunction, t: f64, backend: &RateBackend) -> Result<RateValue, LdpError> {
    let obs = PathObservable::ExpWeight(g.h().clone(), TransportSign::AsWritten);
    match backend {
        RateBackend::Deterministic { kernel, dt } => {
            if !g.h().is_homogeneous() || !phi0.is_homogeneous() {
                return Err(SolverError::Inhomogeneous.into());
            }
            let n = step_count(t, *dt)?;
            let gamma = grid_values(kernel, g.h(), t).iter().map(|x| x.exp()).collect::<Vec<_>>();
            let theta = transport_of(g.h(), TransportSign::AsWritten);
            let eta0 = &backward_eta(kernel, &theta, &gamma, t, n)[0];
            let grid = kernel.grid();
            let value = grid.points().iter().zip(grid.maxwellian()).zip(eta0).map(|((v, m), e)| grid.weight * m * phi0.eval_tv(0.0, v) * e).sum();
            Ok(RateValue { value, stderr: 0.0, n: grid.len(), truncation_bias: 0.0 })
        }
        RateBackend::Jump(o) => {
            let r = solve_rb_jump_mc(phi0, &[obs], t, o)?;
            Ok(RateValue { value: r.estimates[0].0, stderr: r.estimates[0].1, n: r.n, truncation_bias: 0.0 })
        }
        RateBackend::Dyson(o) => {
            let r = estimate_f1_dyson(phi0, &obs, t, o)?;
            Ok(RateValue { value: r.value, stderr: r.stderr, n: r.n, truncation_bias: r.truncation_bias })
        }
    }
}

/// Density-form measure path on the velocity grid.
#[derive(Debug, Clone)]
pub struct FieldPath {
    pub times: Vec<f64>,
    pub fields: Vec<VelocityField>,
}

impl FieldPath {
    /// `{h, w}_t = int h(t) dw_t - int_0^t int (d_s + v . grad_x) h dw_s ds`.
    pub fn filtered_pairing(&self, h: &PhaseFunction) -> f64 {
        let n = self.times.len() - 1;
        let end = self.fields[n].integrate_density(|v| h.eval_tv(self.times[n], v));
        let vals: Vec<f64> = self.fields.iter().zip(&self.times).map(|(f, s)| f.integrate_density(|v| h.transport(&Point::velocity(*s, *v)))).collect();
        end - trapezoid(&self.times, &vals)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub id: usize,
    pub name: String,
    pub pairing: f64,
    pub rate: f64,
    pub stderr: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEvaluation {
    /// `max {h, w} - I(t, h) + 1`, with the zero observable always included.
    pub lambda: f64,
    /// The same supremum with `-1` in place of `+1`.
    pub lambda_minus_one: f64,
    pub best: usize,
    pub rows: Vec<RateRow>,
}

impl RateEvaluation {
    /// CSV `candidate,name,pairing,rate,stderr,value`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["candidate", "name", "pairing", "rate", "stderr", "value"]).expect("in-memory");
        for r in &self.rows {
            w.write_record([r.id.to_string(), r.name.clone(), format!("{:e}", r.pairing), format!("{:e}", r.rate), format!("{:e}", r.stderr), format!("{:e}", r.value)])
                .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Lower bound on the rate of `path` by maximizing over the candidates.
pub fn legendre_rate(path: &FieldPath, candidates: &[ObservablePath], phi0: &PhaseFunction, backend: &RateBackend) -> Result<RateEvaluation, LdpError> {
    if candidates.is_empty() {
        return Err(LdpError::NoCandidates);
    }
    let beta = match backend {
        RateBackend::Deterministic { kernel, .. } => kernel.grid().beta,
        RateBackend::Jump(o) => o.beta,
        RateBackend::Dyson(o) => o.beta,
    };
    let mass = maxwellian_integral(phi0, beta, 3, 0.0);
    if (mass - 1.0).abs() > 1e-9 {
        return Err(LdpError::Mass(mass));
    }
    let t = *path.times.last().ok_or(LdpError::NoCandidates)?;
    let zero = ObservablePath::new(PhaseFunction::constant(0.0), beta, t)?;
    let mut all: Vec<&ObservablePath> = vec![&zero];
    all.extend(candidates.iter());
    let rows: Vec<Result<RateRow, LdpError>> = all
        .par_iter()
        .enumerate()
        .map(|(id, c)| {
            let pairing = path.filtered_pairing(c.h());
            let r = rate_direct(c, phi0, t, backend)?;
            Ok(RateRow { id, name: c.h().to_string(), pairing, rate: r.value, stderr: r.stderr, value: pairing - r.value + 1.0 })
        })
        .collect();
    let rows: Vec<RateRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let (best, lambda) = rows.iter().map(|r| r.value).enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    Ok(RateEvaluation { lambda, lambda_minus_one: lambda - 2.0, best, rows })
}

/// Snapshots of `w' = e^{p} G[w e^{-p}] - w e^{-p} G[e^{p}]` with the
/// Simpson residual of the defining equation on the output grid.
#[derive(Debug, Clone)]
pub struct BiasedPath {
    pub path: FieldPath,
    pub residual: f64,
}

fn biased_rhs(kernel: &KernelMatrix, w: &[f64], p: &[f64]) -> Vec<f64> {
    let ep: Vec<f64> = p.iter().map(|x| x.exp()).collect();
    let we: Vec<f64> = w.iter().zip(&ep).map(|(a, e)| a / e).collect();
    let g1 = kernel.gain_function(&we);
    let g2 = kernel.gain_function(&ep);
    (0..w.len()).map(|i| ep[i] * g1[i] - w[i] / ep[i] * g2[i]).collect()
}

fn rk4(f: &dyn Fn(f64, &[f64]) -> Vec<f64>, s: f64, y: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + c * y).collect() };
    let k1 = f(s, y);
    let k2 = f(s + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = f(s + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = f(s + h, &add(y, &k3, h));
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn stability_limit(kernel: &KernelMatrix, p: &PhaseFunction, t: f64) -> f64 {
    let mut spread = 0.0f64;
    for s in [0.0, 0.5 * t, t] {
        let v = grid_values(kernel, p, s);
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, x| (a.0.min(*x), a.1.max(*x)));
        spread = spread.max(hi - lo);
    }
    2.5 / (kernel.uniformization_rate() * (2.0 * spread).exp())
}

/// Integrate the biased equation from `w0` by classical Runge-Kutta with an
/// even number of steps of size at most `dt`.
pub fn solve_biased_path(kernel: &KernelMatrix, p: &ObservablePath, w0: &VelocityField, t: f64, dt: f64) -> Result<BiasedPath, LdpError> {
    if !p.h().is_homogeneous() || !w0.is_homogeneous() {
        return Err(SolverError::Inhomogeneous.into());
    }
    crate::kinetic_solver::check_growth_class(p.h(), kernel.grid(), 0.0)?;
    let mut n = step_count(t, dt)?;
    n += n % 2;
    let h = t / n as f64;
    let limit = stability_limit(kernel, p.h(), t);
    if h > limit {
        return Err(LdpError::Step(h, limit));
    }
    let rhs = |s: f64, y: &[f64]| biased_rhs(kernel, y, &grid_values(kernel, p.h(), s));
    let times: Vec<f64> = (0..=n).map(|j| t * j as f64 / n as f64).collect();
    let mut ys = vec![w0.re.clone()];
    for j in 0..n {
        let next = rk4(&rhs, times[j], &ys[j], h);
        ys.push(next);
    }
    let fs: Vec<Vec<f64>> = times.iter().zip(&ys).map(|(s, y)| rhs(*s, y)).collect();
    let scale = ys.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut residual = 0.0f64;
    for j in (0..n).step_by(2) {
        for i in 0..ys[j].len() {
            let r = ys[j + 2][i] - ys[j][i] - h / 3.0 * (fs[j][i] + 4.0 * fs[j + 1][i] + fs[j + 2][i]);
            residual = residual.max(r.abs() / scale);
        }
    }
    let grid = kernel.grid().clone();
    let fields = ys.into_iter().map(|y| VelocityField { grid: grid.clone(), form: w0.form, mode: [0; 3], im: vec![0.0; y.len()], re: y }).collect();
    Ok(BiasedPath { path: FieldPath { times, fields }, residual })
}

/// First-order response `d/d eps` of the biased path at `eps = 0` in the
/// direction `p`: `d' = L d + p G w - G[p w] + w p nu - w G[p]` along the
/// unbiased path `w' = L w`.
pub fn linear_response(kernel: &KernelMatrix, p: &ObservablePath, w0: &VelocityField, t: f64, dt: f64) -> Result<FieldPath, LdpError> {
    let mut n = step_count(t, dt)?;
    n += n % 2;
    let h = t / n as f64;
    let len = w0.len();
    let nu = kernel.nu_discrete();
    let rhs = |s: f64, y: &[f64]| -> Vec<f64> {
        let (w, d) = y.split_at(len);
        let pv = grid_values(kernel, p.h(), s);
        let lw = kernel.generator_function(w);
        let ld = kernel.generator_function(d);
        let gw = kernel.gain_function(w);
        let gpw = kernel.gain_function(&w.iter().zip(&pv).map(|(a, b)| a * b).collect::<Vec<_>>());
        let gp = kernel.gain_function(&pv);
        let mut out = lw;
        out.extend((0..len).map(|i| ld[i] + pv[i] * gw[i] - gpw[i] + w[i] * pv[i] * nu[i] - w[i] * gp[i]));
        out
    };
    let times: Vec<f64> = (0..=n).map(|j| t * j as f64 / n as f64).collect();
    let mut y = w0.re.clone();
    y.extend(std::iter::repeat_n(0.0, len));
    let grid = kernel.grid().clone();
    let mut fields = vec![VelocityField { grid: grid.clone(), form: w0.form, mode: [0; 3], re: vec![0.0; len], im: vec![0.0; len] }];
    for j in 0..n {
        y = rk4(&rhs, times[j], &y, h);
        fields.push(VelocityField { grid: grid.clone(), form: w0.form, mode: [0; 3], re: y[len..].to_vec(), im: vec![0.0; len] });
    }
    Ok(FieldPath { times, fields })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic_solver::{apply_collision, solve_rb_deterministic, VelocityGrid};

    fn kernel(m: usize) -> KernelMatrix {
        KernelMatrix::build(Arc::new(VelocityGrid::new(m, 1.0).unwrap()), 3).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let k = kernel(15);
        let phi = VelocityField::from_fn(k.grid().clone(), FieldForm::Function, |v| 1.0 + 0.4 * v[0] * (-0.2 * norm_sq(v)).exp());
        let q = phi.to_form(FieldForm::Density);
        assert_eq!(hamiltonian_value(&k, &q, &PhaseFunction::constant(0.0), 0.0).unwrap(), 0.0);
        assert!(hamiltonian_value(&k, &q, &PhaseFunction::constant(0.8), 0.0).unwrap().abs() < 1e-12);
        let p = PhaseFunction::parse("(* (+ vx (* 0.5 vy vz)) (gauss 0.1))").unwrap();
        let eps = 1e-4;
        let lin = (hamiltonian_value(&k, &q, &p.scaled(eps), 0.0).unwrap() - hamiltonian_value(&k, &q, &p.scaled(-eps), 0.0).unwrap()) / (2.0 * eps);
        let pf = VelocityField::from_fn(k.grid().clone(), FieldForm::Function, |v| p.eval_tv(0.0, v));
        let lp = apply_collision(&k, &pf, FieldForm::Function).unwrap();
        let dual: f64 = q.re.iter().zip(&lp.re).map(|(a, b)| a * b).sum::<f64>() * k.grid().weight;
        assert!((lin - dual).abs() < 1e-4 * (1.0 + dual.abs()), "{lin} {dual}");
        assert!(hamiltonian_value(&k, &phi, &p, 0.0).is_err());
    }

    #[test]
    fn bhj_examples() {
        let k = kernel(15);
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.6 vx (gauss 0.25)))").unwrap();
        let one = VelocityField::constant(k.grid().clone(), 1.0);
        let zero = PhaseFunction::constant(0.0);
        let sol = solve_bhj(&k, &zero, &one, &phi0, 0.5, 0.05).unwrap();
        assert!(sol.eta.iter().all(|e| e.re.iter().all(|x| (x - 1.0).abs() < 1e-10)));
        let rb = solve_rb_deterministic(&k, &phi0, &sol.times, 0.05).unwrap();
        for (j, chi) in sol.chi.iter().enumerate() {
            let want = rb.homogeneous(j).unwrap().to_form(FieldForm::Density);
            let err = chi.re.iter().zip(&want.re).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6);
        }
        let theta = PhaseFunction::parse("(* 3 (sin (+ (* 2 t) vx (* vy vz))))").unwrap();
        let s2 = solve_bhj(&k, &theta, &one, &phi0, 0.5, 0.05).unwrap();
        assert!(s2.chi.iter().all(|c| c.min_re() >= 0.0));
        assert!(s2.eta.iter().all(|e| e.min_re() > 0.0));
        let again = solve_bhj(&k, &theta, &one, &phi0, 0.5, 0.05).unwrap();
        assert!(again.chi.iter().zip(&s2.chi).all(|(a, b)| a == b));
    }

    #[test]
    fn action_of_constants_and_small_observables() {
        let k = Arc::new(kernel(15));
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.6 vx (gauss 0.25)))").unwrap();
        let g = k.grid();
        let mass: f64 = g.points().iter().zip(g.maxwellian()).map(|(v, m)| g.weight * m * phi0.eval_tv(0.0, v)).sum();
        assert!((mass - maxwellian_integral(&phi0, 1.0, 3, 0.0)).abs() < 1e-7);
        for c in [0.0, 0.4] {
            let g = ObservablePath::new(PhaseFunction::constant(c), 1.0, 0.5).unwrap();
            let sol = solve_bhj_for(&k, &g, &phi0, 0.5, 0.05).unwrap();
            let a = hj_action(&k, &g, &sol, &phi0).unwrap();
            assert!((a.value - c.exp() * mass).abs() < 1e-12, "{a:?}");
        }
        let g = ObservablePath::new(PhaseFunction::parse("(* 0.3 t vx (gauss 0.1))").unwrap(), 1.0, 0.5).unwrap();
        let sol = solve_bhj_for(&k, &g, &phi0, 0.5, 0.01).unwrap();
        let a = hj_action(&k, &g, &sol, &phi0).unwrap();
        let det = rate_direct(&g, &phi0, 0.5, &RateBackend::Deterministic { kernel: k.clone(), dt: 0.01 }).unwrap();
        assert!((a.value - det.value).abs() < 1e-4, "{a:?} {det:?}");
        assert!((a.transport_term + a.hamiltonian_term).abs() < 1e-4);
        let other = ObservablePath::new(PhaseFunction::constant(0.1), 1.0, 0.5).unwrap();
        assert!(matches!(hj_action(&k, &other, &sol, &phi0), Err(LdpError::Boundary(_))));
    }

    #[test]
    fn legendre_rate_at_the_typical_path() {
        let k = Arc::new(kernel(15));
        let phi0 = PhaseFunction::parse("(+ 1 (* 0.6 vx (gauss 0.25)))").unwrap();
        let times: Vec<f64> = (0..=20).map(|j| j as f64 * 0.025).collect();
        let rb = solve_rb_deterministic(&k, &phi0, &times, 0.05).unwrap();
        let path = FieldPath { times: times.clone(), fields: (0..times.len()).map(|j| rb.homogeneous(j).unwrap().to_form(FieldForm::Density)).collect() };
        let backend = RateBackend::Deterministic { kernel: k.clone(), dt: 0.025 };
        let zero_only = legendre_rate(&path, &[ObservablePath::new(PhaseFunction::constant(0.0), 1.0, 0.5).unwrap()], &phi0, &backend).unwrap();
        assert!(zero_only.lambda.abs() < 1e-7);
        let cands: Vec<ObservablePath> = ["(* 0.5 vx)", "(* -0.3 (gauss 0.2))", "(* 0.2 t vy)"]
            .iter()
            .map(|s| ObservablePath::new(PhaseFunction::parse(s).unwrap(), 1.0, 0.5).unwrap())
            .collect();
        let r1 = legendre_rate(&path, &cands[..1], &phi0, &backend).unwrap();
        let r3 = legendre_rate(&path, &cands, &phi0, &backend).unwrap();
        assert!(r3.lambda >= r1.lambda && r1.lambda >= zero_only.lambda);
        assert!(r3.lambda <= 0.02 && r3.lambda >= -1e-7, "{r3:?}");
        assert!(r3.rows.iter().skip(1).all(|r| r.value < 1e-4));
        assert!(legendre_rate(&path, &[], &phi0, &backend).is_err());
        let heavy = PhaseFunction::parse("(+ 2 vx)").unwrap();
        assert!(matches!(legendre_rate(&path, &cands, &heavy, &backend), Err(LdpError::Mass(_))));
    }

    #[test]
    fn biased_path_reductions_and_response() {
        let k = kernel(13);
        let w0 = VelocityField::from_fn(k.grid().clone(), FieldForm::Function, |v| 1.0 + 0.5 * v[0] * (-0.25 * norm_sq(v)).exp());
        let zero = ObservablePath::new(PhaseFunction::constant(0.0), 1.0, 0.2).unwrap();
        let b = solve_biased_path(&k, &zero, &w0, 0.2, 0.005).unwrap();
        assert!(b.residual < 1e-6, "{}", b.residual);
        let exact = expm_generator(&k, &w0.re, 0.2);
        let last = b.path.fields.last().unwrap();
        let err = exact.iter().zip(&last.re).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        let p = PhaseFunction::parse("(* (+ vx (* 0.3 t vsq)) (gauss 0.15))").unwrap();
        let eps = 1e-3;
        let plus = solve_biased_path(&k, &ObservablePath::new(p.scaled(eps), 1.0, 0.2).unwrap(), &w0, 0.2, 0.005).unwrap();
        let minus = solve_biased_path(&k, &ObservablePath::new(p.scaled(-eps), 1.0, 0.2).unwrap(), &w0, 0.2, 0.005).unwrap();
        let lin = linear_response(&k, &ObservablePath::new(p, 1.0, 0.2).unwrap(), &w0, 0.2, 0.005).unwrap();
        let d = lin.fields.last().unwrap();
        let scale = d.max_abs();
        for i in 0..d.len() {
            let fd = (plus.path.fields.last().unwrap().re[i] - minus.path.fields.last().unwrap().re[i]) / (2.0 * eps);
            assert!((fd - d.re[i]).abs() < 1e-4 * scale, "{fd} {}", d.re[i]);
        }
        assert!(matches!(solve_biased_path(&k, &zero, &w0, 4.0, 2.0), Err(LdpError::Step(..))));
    }
}
