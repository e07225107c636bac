mod common;

use bkst::analysis::{residual_operators, sup_difference_on};
use bkst::coefficients::{gamma_family, sample_random, CoefficientFamily, DEFAULT_NODES};
use bkst::kernels::{solve_inverse_kernels, solve_kappa_c, solve_kernels, CIntegrand};
use bkst::numerics::TriangularGrid;
use common::{dense_kappa, picard_oracle, sup_diff_against, Gamma};
use proptest::prelude::*;

#[test]
fn coarse_grid_matches_characteristic_oracle() {
    for gamma in [1.0, 3.0] {
        let c = gamma_family(gamma, DEFAULT_NODES).unwrap();
        let ks = solve_kernels(&c, TriangularGrid::new(50).unwrap()).unwrap();
        let oracle = picard_oracle(Gamma(gamma), 500, 1e-12);
        let (d1, d2) = sup_diff_against(&ks, &oracle);
        let h = 1.0 / 50.0;
        assert!(d1.max(d2) <= 5.0 * h, "gamma {gamma}: {d1:e} {d2:e}");
    }
}

#[test]
fn oracle_is_second_order_consistent() {
    // Halving the oracle step should shrink its change by about four.
    let a = picard_oracle(Gamma(1.0), 50, 1e-12);
    let b = picard_oracle(Gamma(1.0), 100, 1e-12);
    let c = picard_oracle(Gamma(1.0), 200, 1e-12);
    let diff = |p: &common::OracleKernels, q: &common::OracleKernels| {
        let f = q.n / p.n;
        let mut d = 0.0f64;
        for i in 0..=p.n {
            for j in 0..=i {
                d = d.max((p.k1[i][j] - q.k1[i * f][j * f]).abs());
                d = d.max((p.k2[i][j] - q.k2[i * f][j * f]).abs());
            }
        }
        d
    };
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
}

#[test]
fn kappa_matches_dense_direct_solve() {
    for gamma in [1.0, 5.0] {
        let c = gamma_family(gamma, DEFAULT_NODES).unwrap();
        let grid = TriangularGrid::new(40).unwrap();
        let ks = solve_kappa_c(&c, &solve_kernels(&c, grid).unwrap(), CIntegrand::Kappa).unwrap();
        let omega = c.resample(grid.interval()).unwrap().omega().to_vec();
        let dense = dense_kappa(&ks, &omega);
        let kappa = ks.kappa.as_ref().unwrap();
        let scale = kappa.sup_norm();
        for (i, row) in dense.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((kappa.get(i, j) - v).abs() <= 1e-11 * scale.max(1.0), "({i},{j})");
            }
        }
    }
}

#[test]
fn self_referential_c_variant_differs_but_stays_finite() {
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let ks = solve_kernels(&c, TriangularGrid::new(40).unwrap()).unwrap();
    let a = solve_kappa_c(&c, &ks, CIntegrand::Kappa).unwrap();
    let b = solve_kappa_c(&c, &ks, CIntegrand::SelfReferential).unwrap();
    let (ca, cb) = (a.c.unwrap(), b.c.unwrap());
    assert!(cb.values().iter().all(|v| v.is_finite()));
    assert!(ca.sub(&cb).unwrap().sup_norm() > 1e-6);
    assert_eq!(a.kappa, b.kappa);
}

#[test]
fn refinement_study() {
    let c = gamma_family(1.0, DEFAULT_NODES).unwrap();
    let sols: Vec<_> = [50, 100, 200]
        .iter()
        .map(|&n| solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap())
        .collect();
    let d = |a: usize, b: usize| {
        let g = sols[a].grid();
        sup_difference_on(g, &sols[a].k1, &sols[b].k1)
            .unwrap()
            .max(sup_difference_on(g, &sols[a].k2, &sols[b].k2).unwrap())
    };
    let ratio = d(0, 1) / d(1, 2);
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
    let r100 = residual_operators(&c, &sols[1].k1, &sols[1].k2).unwrap();
    let r200 = residual_operators(&c, &sols[2].k1, &sols[2].k2).unwrap();
    assert!(r200.sup_interior1 <= 0.7 * r100.sup_interior1);
    assert!(r200.sup_interior2 <= 0.7 * r100.sup_interior2);
}

#[test]
fn inverse_kernels_invert_the_kernel_equation() {
    // l = k + int k2(x, s) l(s, xi) ds holds in the discrete trapezoid sense.
    let c = gamma_family(2.0, DEFAULT_NODES).unwrap();
    let grid = TriangularGrid::new(30).unwrap();
    let ks = solve_inverse_kernels(&solve_kernels(&c, grid).unwrap()).unwrap();
    let h = grid.h();
    for (k, l) in [(&ks.k1, ks.l1.as_ref().unwrap()), (&ks.k2, ks.l2.as_ref().unwrap())] {
        for i in 0..=30 {
            for j in 0..=i {
                let mut integral = 0.0;
                for s in j..=i {
                    let w = if s == j || s == i { 0.5 * h } else { h };
                    integral += if i == j { 0.0 } else { w * ks.k2.get(i, s) * l.get(s, j) };
                }
                let res = l.get(i, j) - k.get(i, j) - integral;
                assert!(res.abs() <= 1e-11 * l.sup_norm().max(1.0), "({i},{j}): {res:e}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn boundary_identities_hold_for_random_coefficients(seed in any::<u64>(), n in 8usize..60) {
        let fam = CoefficientFamily::RandomSmooth { gamma_min: 0.5, gamma_max: 5.0, amplitude: 0.5 };
        let c = sample_random(&fam, seed, DEFAULT_NODES).unwrap();
        let ks = solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap();
        let (diag, bottom) = ks.boundary_residuals(&c).unwrap();
        prop_assert!(diag <= 1e-12 && bottom <= 1e-12);
    }

    #[test]
    fn zero_theta_gives_zero_kernels(seed in any::<u64>(), n in 4usize..40) {
        let fam = CoefficientFamily::RandomSmooth { gamma_min: 0.5, gamma_max: 5.0, amplitude: 0.5 };
        let c = sample_random(&fam, seed, 41).unwrap();
        let c = c.with_theta(vec![0.0; 41]).unwrap();
        let ks = solve_kernels(&c, TriangularGrid::new(n).unwrap()).unwrap();
        prop_assert!(ks.k1.sup_norm() <= 1e-12 && ks.k2.sup_norm() <= 1e-12);
    }
}
