mod common;

use bkst::coefficients::{gamma_family, DEFAULT_NODES};
use bkst::kernels::{gain_slice, solve_kappa_c, solve_kernels, CIntegrand};
use bkst::numerics::{IntervalGrid, TriangularGrid};
use bkst::controller::forward_transform;
use bkst::plant::{simulate, simulate_target, ControllerSpec, PlantState};
use bkst::coefficients::CoefficientSet;
use bkst::numerics::trapezoid;
use bkst::plant::{cfl_dt, step};
use common::l2_diff;
use proptest::prelude::*;

/// Open-loop doubling time of `phi` for gamma = 5 from `u = 1`, `v = sin x`, measured
/// once on a 400-cell grid.
const DOUBLING_REFERENCE: f64 = 0.0471;

fn doubling_time(n: usize) -> f64 {
    let c = gamma_family(5.0, DEFAULT_NODES).unwrap();
    let init = PlantState::reference(IntervalGrid::new(n).unwrap());
    let trace = simulate(&c, &init, &ControllerSpec::OpenLoop, 0.1, 0).unwrap();
    trace.growth_time(2.0).expect("phi did not double")
}

#[test]
fn open_loop_doubles_before_reference_time() {
    let t = doubling_time(400);
    assert!(t <= DOUBLING_REFERENCE, "{t}");
}

#[test]
fn open_loop_doubling_time_converges() {
    let (a, b, c) = (doubling_time(100), doubling_time(200), doubling_time(400));
    assert!((b - c).abs() < (a - b).abs() && (a - c).abs() < 2e-3, "{a} {b} {c}");
}

#[test]
fn zero_gains_reproduce_open_loop() {
    let c = gamma_family(2.0, DEFAULT_NODES).unwrap();
    let grid = IntervalGrid::new(60).unwrap();
    let init = PlantState::from_fns(grid, |x| x.cos(), |x| x * (1.0 - x)).unwrap();
    let open = simulate(&c, &init, &ControllerSpec::OpenLoop, 0.3, 0).unwrap();
    let zero = ControllerSpec::GainFeedback(bkst::GainVector::zeros(grid));
    let fed = simulate(&c, &init, &zero, 0.3, 0).unwrap();
    assert_eq!(open.phi, fed.phi);
}

#[test]
fn plant_tracks_target_system_under_exact_gains() {
    let n = 100;
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let grid = IntervalGrid::new(n).unwrap();
    let ks = solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap();
    let ks = solve_kappa_c(&c, &ks, CIntegrand::Kappa).unwrap();
    let init = PlantState::reference(grid);
    let stride = 40;
    let plant = simulate(&c, &init, &ControllerSpec::GainFeedback(gain_slice(&ks)), 1.5, stride).unwrap();
    let target = simulate_target(&c, &ks, &init, 1.5, stride).unwrap();
    assert_eq!(plant.times, target.times);
    // Both discretizations are first order, so they agree to O(h) relative to the state size.
    let scale = plant.phi.iter().fold(0.0f64, |m, p| m.max(p.sqrt()));
    let tol = 2.0 * grid.h() * scale;
    for (p, t) in plant.snapshots.iter().zip(&target.snapshots) {
        let beta = forward_transform(p, &ks).unwrap();
        let du = l2_diff(&p.u, &t.u, grid.h());
        let db = l2_diff(&beta, &t.v, grid.h());
        assert!(du <= tol && db <= tol, "t {}: {du:e} {db:e}", p.t);
    }
}

#[test]
fn target_system_from_zero_stays_zero() {
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let ks = solve_kappa_c(&c, &solve_kernels(&c, TriangularGrid::new(30).unwrap()).unwrap(), CIntegrand::Kappa).unwrap();
    let trace = simulate_target(&c, &ks, &PlantState::zeros(IntervalGrid::new(30).unwrap()), 1.0, 0).unwrap();
    assert!(trace.phi.iter().all(|&p| p == 0.0));
}

#[test]
fn target_beta_vanishes_after_one_transit() {
    let n = 100;
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let grid = IntervalGrid::new(n).unwrap();
    let ks = solve_kappa_c(&c, &solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap(), CIntegrand::Kappa).unwrap();
    let mu = c.resample(grid).unwrap().mu().to_vec();
    let transit = trapezoid(&mu.iter().map(|m| 1.0 / m).collect::<Vec<_>>(), grid.h()).unwrap();
    let trace = simulate_target(&c, &ks, &PlantState::reference(grid), transit + 0.3, 20).unwrap();
    let zeros = vec![0.0; n + 1];
    // Upwind diffusion leaves a short tail behind the front, so allow 0.1 past the transit.
    for s in trace.snapshots.iter().filter(|s| s.t >= transit + 0.1) {
        let norm = l2_diff(&s.v, &zeros, grid.h());
        assert!(norm <= 5.0 * grid.h(), "t {}: {norm:e}", s.t);
    }
}

/// L2 error at `t = 0.5` of unit-speed transport with no coupling, against the exact
/// shifted profiles.
fn transport_error(n: usize) -> f64 {
    let c = CoefficientSet::uniform(11, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    let grid = IntervalGrid::new(n).unwrap();
    let bump = |x: f64| if (0.0..=1.0).contains(&x) { (std::f64::consts::PI * x).sin().powi(2) } else { 0.0 };
    let init = PlantState::from_fns(grid, bump, bump).unwrap();
    let trace = simulate(&c, &init, &ControllerSpec::OpenLoop, 0.5, 1).unwrap();
    let last = trace.snapshots.last().unwrap();
    let t = last.t;
    let u_exact = grid.sample(|x| bump(x - t));
    let v_exact = grid.sample(|x| bump(x + t));
    l2_diff(&last.u, &u_exact, grid.h()).hypot(l2_diff(&last.v, &v_exact, grid.h()))
}

#[test]
fn upwind_transport_converges_at_first_order() {
    let (a, b) = (transport_error(100), transport_error(200));
    assert!(a <= 5.0 / 100.0, "{a}");
    assert!((1.6..=2.4).contains(&(a / b)), "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn boundary_identities_hold_after_a_step(
        lam in 0.2f64..3.0, mu in 0.2f64..3.0, sig in -1.0f64..1.0, om in -1.0f64..1.0,
        th in -1.0f64..1.0, q in -2.0f64..2.0, u_in in -5.0f64..5.0, seed in any::<u64>(),
    ) {
        let c = CoefficientSet::uniform(41, lam, mu, sig, om, th, q).unwrap();
        let grid = IntervalGrid::new(40).unwrap();
        let s = common::random_smooth_state(grid, seed);
        let next = step(&s, &c, u_in, cfl_dt(&c, grid)).unwrap();
        prop_assert_eq!(next.u[0], q * next.v[0]);
        prop_assert_eq!(next.v[40], u_in);
    }
}
