mod common;

use std::f64::consts::PI;

use modlock::averaging::{average_g1, antiderivative_u1, second_average_g2, PhiGrid};
use modlock::system::Example2Params;
use modlock::trig::spectral_derivative;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::g2_oracle;
use common::{max_abs_diff, system};

#[test]
fn example2_g2_on_the_orbit() {
    let sys = system("example2", &[]);
    for k in 0..16 {
        let psi = 2.0 * PI * k as f64 / 16.0 + 0.1;
        let x = Example2Params::x0(psi);
        let g2 = second_average_g2(&sys, &x, psi, PhiGrid::default()).unwrap();
        let s2 = psi.sin().powi(2);
        let expected = [0.0, -psi.sin(), -x[3] * s2, x[2] * s2];
        assert!(max_abs_diff(&g2, &expected) < 1e-12, "{psi}: {g2:?} vs {expected:?}");
    }
}

#[test]
fn example2_u1_third_component() {
    let sys = system("example2", &[]);
    let grid = PhiGrid::default();
    let psi = 0.9;
    let x = [0.2, -0.4, 0.6, 0.8];
    let u = antiderivative_u1(&sys, &x, psi, grid).unwrap();
    for (k, v) in u.iter().enumerate() {
        assert!((v[2] - psi.sin() * grid.node(k).sin()).abs() < 1e-13);
    }
}

#[test]
fn u1_invariants() {
    for name in ["example2", "yamada"] {
        let sys = system(name, &[("g_op", "sin")].into_iter().filter(|_| name == "yamada").collect::<Vec<_>>());
        let grid = PhiGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let psi = rng.gen_range(0.0..2.0 * PI);
            let u = antiderivative_u1(&sys, &x, psi, grid).unwrap();
            let g1 = average_g1(&sys, &x, psi, grid).unwrap();
            for i in 0..4 {
                let col: Vec<f64> = u.iter().map(|v| v[i]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                assert!(mean.abs() < 1e-10);
                let d = spectral_derivative(&col);
                for (k, dk) in d.iter().enumerate() {
                    let g = sys.g_eval(&x, psi, grid.node(k));
                    assert!((dk - (g[i] - g1[i])).abs() < 1e-8);
                }
            }
        }
    }
}

#[test]
fn g2_matches_adaptive_quadrature_oracle() {
    let sys = system("example2", &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let psi = rng.gen_range(0.0..2.0 * PI);
        let fast = second_average_g2(&sys, &x, psi, PhiGrid::default()).unwrap();
        let slow = g2_oracle(&sys, &x, psi);
        assert!(max_abs_diff(&fast, &slow) < 1e-9, "{fast:?} vs {slow:?}");
    }
}

#[test]
fn doubling_phi_grid_changes_nothing() {
    let ex2 = system("example2", &[]);
    let yam = system("yamada", &[("g_el", "two_harmonic"), ("g_op", "sin")]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let psi = rng.gen_range(0.0..2.0 * PI);
        for sys in [&ex2, &yam] {
            let (a, b) = (PhiGrid::new(64).unwrap(), PhiGrid::new(128).unwrap());
            let d1 = max_abs_diff(
                &average_g1(sys, &x, psi, a).unwrap(),
                &average_g1(sys, &x, psi, b).unwrap(),
            );
            let d2 = max_abs_diff(
                &second_average_g2(sys, &x, psi, a).unwrap(),
                &second_average_g2(sys, &x, psi, b).unwrap(),
            );
            assert!(d1 < 1e-10 && d2 < 1e-10, "{d1} {d2}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averages_are_equivariant(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        psi in 0.0f64..(2.0 * PI),
        xi in 0.0f64..(2.0 * PI),
    ) {
        for sys in [system("example2", &[]), system("yamada", &[("g_op", "0.5cos1")])] {
            let grid = PhiGrid::default();
            let rx = sys.generator().rotate(xi, &x);
            let lhs1 = average_g1(&sys, &rx, psi, grid).unwrap();
            let rhs1 = sys.generator().rotate(xi, &average_g1(&sys, &x, psi, grid).unwrap());
            prop_assert!(max_abs_diff(&lhs1, &rhs1) < 1e-9);
            let lhs2 = second_average_g2(&sys, &rx, psi, grid).unwrap();
            let rhs2 = sys.generator().rotate(xi, &second_average_g2(&sys, &x, psi, grid).unwrap());
            prop_assert!(max_abs_diff(&lhs2, &rhs2) < 1e-9);
        }
    }
}
