use kc_core::kinetic_solver::{
    estimate_f1_dyson, solve_rb_deterministic, solve_rb_jump_mc, DysonOptions, JumpOptions, KernelMatrix, PathObservable, VelocityGrid,
};
use kc_core::statistics::{maxwellian_integral, PhaseFunction};
use std::sync::Arc;

fn kernel(m: usize) -> KernelMatrix {
    KernelMatrix::build(Arc::new(VelocityGrid::new(m, 1.0).unwrap()), 3).unwrap()
}

const OBS: [&str; 3] = ["vx", "(gauss 0.3)", "(* vx vy (gauss 0.2))"];

#[test]
fn three_backends_agree_on_homogeneous_data() {
    let k = kernel(21);
    let phi0 = PhaseFunction::parse("(+ 1 (* 0.8 vx (gauss 0.25)) (* 0.4 vx vy (gauss 0.3)))").unwrap().with_bound(2.0);
    let hs: Vec<PhaseFunction> = OBS.iter().map(|s| PhaseFunction::parse(s).unwrap()).collect();
    let times = [0.25, 0.5, 1.0];
    let det = solve_rb_deterministic(&k, &phi0, &times, 0.05).unwrap();
    for (ti, &t) in times.iter().enumerate() {
        let obs: Vec<PathObservable> = hs.iter().map(|h| PathObservable::Endpoint(h.clone())).collect();
        let jump = solve_rb_jump_mc(&phi0, &obs, t, &JumpOptions::new(3, 1.0, 20_000, 3 + ti as u64)).unwrap();
        for (j, h) in hs.iter().enumerate() {
            let d = det.pairing(ti, h);
            let (mj, sj) = jump.estimates[j];
            let dy = estimate_f1_dyson(&phi0, &obs[j], t, &DysonOptions::new(3, 1.0, 20_000, 7 + ti as u64, 10)).unwrap();
            let grid_tol = 3e-3 * (d.abs() + 0.05);
            assert!((d - mj).abs() < 4.0 * sj + grid_tol, "t={t} {}: det {d} jump {mj}±{sj}", OBS[j]);
            assert!((d - dy.value).abs() < 4.0 * dy.stderr + grid_tol + dy.truncation_bias, "t={t} {}: det {d} dyson {}±{}", OBS[j], dy.value, dy.stderr);
        }
    }
}

#[test]
fn fourier_mode_transport_matches_jump_process() {
    let k = kernel(17);
    let phi0 = PhaseFunction::parse("(+ 1 (* 0.6 (cos (* 2 pi x))) (* 0.3 vy (sin (* 2 pi z))))").unwrap().with_bound(2.0);
    let hs: Vec<PhaseFunction> = ["(cos (* 2 pi x))", "(* vx (sin (* 2 pi x)))", "(* vy (sin (* 2 pi z)))"].iter().map(|s| PhaseFunction::parse(s).unwrap()).collect();
    let t = 0.3;
    let det = solve_rb_deterministic(&k, &phi0, &[t], 0.02).unwrap();
    let obs: Vec<PathObservable> = hs.iter().map(|h| PathObservable::Endpoint(h.clone())).collect();
    let jump = solve_rb_jump_mc(&phi0, &obs, t, &JumpOptions::new(3, 1.0, 40_000, 17)).unwrap();
    for (j, h) in hs.iter().enumerate() {
        let d = det.pairing(0, h);
        let (m, s) = jump.estimates[j];
        assert!((d - m).abs() < 4.0 * s + 3e-3, "{j}: {d} vs {m}±{s}");
    }
    let zero = det.pairing(0, &PhaseFunction::constant(1.0));
    assert!((zero - maxwellian_integral(&phi0, 1.0, 3, 0.0)).abs() < 1e-6);
}
