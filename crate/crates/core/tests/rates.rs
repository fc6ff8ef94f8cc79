use kc_core::kinetic_solver::{JumpOptions, KernelMatrix, VelocityGrid};
use kc_core::large_deviations::{hj_action, rate_direct, solve_bhj_for, ObservablePath, RateBackend};
use kc_core::statistics::PhaseFunction;
use std::sync::Arc;

#[test]
fn action_reproduces_the_direct_functional() {
    let k = Arc::new(KernelMatrix::build(Arc::new(VelocityGrid::new(15, 1.0).unwrap()), 3).unwrap());
    let phi0 = PhaseFunction::parse("(+ 1 (* 0.5 vy (gauss 0.2)))").unwrap();
    let t = 0.4;
    for (i, g) in ["(* 0.3 vx)", "(* -0.2 t (- vsq 3) (gauss 0.1))", "(+ 0.1 (* 0.2 vy vz (gauss 0.2)))"].iter().enumerate() {
        let g = ObservablePath::new(PhaseFunction::parse(g).unwrap(), 1.0, t).unwrap();
        let sol = solve_bhj_for(&k, &g, &phi0, t, 0.01).unwrap();
        let a = hj_action(&k, &g, &sol, &phi0).unwrap();
        let det = rate_direct(&g, &phi0, t, &RateBackend::Deterministic { kernel: k.clone(), dt: 0.01 }).unwrap();
        assert!((a.value - det.value).abs() < 1e-4, "{a:?} {det:?}");
        let mc = rate_direct(&g, &phi0, t, &RateBackend::Jump(JumpOptions::new(3, 1.0, 20_000, 40 + i as u64))).unwrap();
        assert!((mc.value - det.value).abs() < 4.0 * mc.stderr + 3e-3, "{mc:?} {det:?}");
    }
}
