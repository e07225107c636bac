mod common;

use bkst::coefficients::{gamma_family, DEFAULT_NODES};
use bkst::controller::{consistent_control, control_value, forward_transform, inverse_transform};
use bkst::kernels::{gain_slice, solve_inverse_kernels, solve_kernels};
use bkst::numerics::{IntervalGrid, TriangularGrid};
use bkst::plant::{simulate, ControllerSpec, PlantState};
use common::{l2_diff, random_smooth_state};
use proptest::prelude::*;

#[test]
fn inverse_undoes_forward_on_random_states() {
    let n = 100;
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let ks = solve_inverse_kernels(&solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap()).unwrap();
    let grid = IntervalGrid::new(n).unwrap();
    for seed in 0..20 {
        let s = random_smooth_state(grid, seed);
        let beta = forward_transform(&s, &ks).unwrap();
        let v = inverse_transform(&s.u, &beta, &ks).unwrap();
        let err = l2_diff(&v, &s.v, grid.h());
        assert!(err <= 10.0 * grid.h(), "seed {seed}: {err:e}");
    }
}

#[test]
fn transformed_boundary_value_vanishes_along_closed_loop() {
    let n = 100;
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let ks = solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap();
    let init = PlantState::reference(IntervalGrid::new(n).unwrap());
    let trace = simulate(&c, &init, &ControllerSpec::GainFeedback(gain_slice(&ks)), 2.0, 25).unwrap();
    for s in trace.snapshots.iter().skip(1) {
        let beta = forward_transform(s, &ks).unwrap();
        let scale = s.v.iter().chain(&s.u).fold(1.0f64, |m, x| m.max(x.abs()));
        assert!(beta[n].abs() <= 1e-13 * scale, "t {}: {:e}", s.t, beta[n]);
    }
}

#[test]
fn consistent_control_is_a_fixed_point_of_the_feedback_integral() {
    let n = 50;
    let c = gamma_family(3.0, DEFAULT_NODES).unwrap();
    let gains = gain_slice(&solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap());
    let mut s = random_smooth_state(IntervalGrid::new(n).unwrap(), 7);
    let u = consistent_control(&gains, &s).unwrap();
    s.v[n] = u;
    let direct = control_value(&gains, &s).unwrap();
    assert!((u - direct).abs() <= 1e-12 * u.abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn control_and_transform_are_linear_in_the_state(a in -3.0f64..3.0, s1 in any::<u64>(), s2 in any::<u64>()) {
        let n = 30;
        let c = gamma_family(2.0, DEFAULT_NODES).unwrap();
        let ks = solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap();
        let gains = gain_slice(&ks);
        let grid = IntervalGrid::new(n).unwrap();
        let (x, y) = (random_smooth_state(grid, s1), random_smooth_state(grid, s2));
        let comb = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(p, q)| a * p + q).collect::<Vec<_>>();
        let z = PlantState::new(grid, comb(&x.u, &y.u), comb(&x.v, &y.v), 0.0).unwrap();
        let (ux, uy, uz) = (
            control_value(&gains, &x).unwrap(),
            control_value(&gains, &y).unwrap(),
            control_value(&gains, &z).unwrap(),
        );
        prop_assert!((uz - (a * ux + uy)).abs() <= 1e-12 * (1.0 + uz.abs()));
        let (bx, by, bz) = (
            forward_transform(&x, &ks).unwrap(),
            forward_transform(&y, &ks).unwrap(),
            forward_transform(&z, &ks).unwrap(),
        );
        for i in 0..=n {
            prop_assert!((bz[i] - (a * bx[i] + by[i])).abs() <= 1e-12 * (1.0 + bz[i].abs()));
        }
    }
}
