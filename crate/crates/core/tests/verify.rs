mod common;

use std::f64::consts::PI;

use modlock::orbit::PeriodicOrbit;
use modlock::system::EquivariantSystem;
use modlock::verify::{
    diagnose_lock, project_to_torus, simulate_forced, DiagnoseOptions, LockParameters, TorusProjector,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{orbit_with, system};

fn brute_distance(orbit: &PeriodicOrbit, sys: &EquivariantSystem, x: &[f64], m: usize) -> f64 {
    let grid: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
    let x0: Vec<Vec<f64>> = grid.iter().map(|&p| orbit.x0(p)).collect();
    let mut best = f64::INFINITY;
    for &phi in &grid {
        let (s, c) = phi.sin_cos();
        for y in &x0 {
            // Both built-ins rotate only the (x₃, x₄) plane.
            let r = [y[0], y[1], c * y[2] - s * y[3], s * y[2] + c * y[3]];
            let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d);
        }
    }
    let _ = sys;
    best.sqrt()
}

fn on_torus(orbit: &PeriodicOrbit, sys: &EquivariantSystem, psi: f64, phi: f64) -> Vec<f64> {
    sys.generator().rotate(phi, &orbit.x0(psi))
}

/// Unit vector orthogonal to both torus tangents at `e^{Aφ}x₀(ψ)`.
fn normal(orbit: &PeriodicOrbit, sys: &EquivariantSystem, psi: f64, phi: f64, seed: u64) -> Vec<f64> {
    let g = sys.generator();
    let t1 = DVector::from_vec(g.rotate(phi, &orbit.x0_derivative(psi)));
    let t2 = DVector::from_vec(g.apply(&on_torus(orbit, sys, psi, phi)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
    let e1 = t1.normalize();
    let e2 = (&t2 - &e1 * e1.dot(&t2)).normalize();
    v -= &e1 * e1.dot(&v);
    v -= &e2 * e2.dot(&v);
    v.normalize().as_slice().to_vec()
}

#[test]
fn point_on_torus_is_recovered() {
    for name in ["yamada", "example2"] {
        let sys = system(name, &[]);
        let orbit = orbit_with(&sys, 256);
        let x = on_torus(&orbit, &sys, 2.0, 1.0);
        let p = project_to_torus(&orbit, &sys, &x).unwrap();
        assert!(!p.coarse_only);
        assert!((p.psi_hat - 2.0).abs() < 1e-8 && (p.phi_hat - 1.0).abs() < 1e-8, "{name} {p:?}");
        assert!(p.distance < 1e-10);
    }
}

#[test]
fn normal_offset_distance() {
    for name in ["yamada", "example2"] {
        let sys = system(name, &[]);
        let orbit = orbit_with(&sys, 256);
        let nu = normal(&orbit, &sys, 2.0, 1.0, 3);
        let x: Vec<f64> = on_torus(&orbit, &sys, 2.0, 1.0)
            .iter()
            .zip(&nu)
            .map(|(a, b)| a + 0.01 * b)
            .collect();
        let p = project_to_torus(&orbit, &sys, &x).unwrap();
        assert!(p.distance > 0.0 && p.distance < 0.011, "{name} {p:?}");
        let brute = brute_distance(&orbit, &sys, &x, 1024);
        assert!(p.distance <= brute + 1e-12, "{} vs {brute}", p.distance);
        assert!(brute - p.distance < 1e-2, "{} vs {brute}", p.distance);
    }
}

#[test]
fn off_state_is_far_from_torus() {
    let sys = system("yamada", &[]);
    let orbit = orbit_with(&sys, 256);
    let x = [7.0, 5.8, 0.0, 0.0];
    let p = project_to_torus(&orbit, &sys, &x).unwrap();
    let brute = brute_distance(&orbit, &sys, &x, 1024);
    assert!(p.distance > 0.5 && brute > 0.5);
    assert!(p.distance <= brute + 1e-12);
}

#[test]
fn projection_ignores_constant_rotation() {
    let sys = system("yamada", &[]);
    let orbit = orbit_with(&sys, 256);
    let beta = orbit.beta0() + 0.02;
    let traj = simulate_forced(&sys, 50.0, beta, 0.01, &orbit.x0(0.0), 20.0 * 2.0 * PI / beta, 1e-9).unwrap();
    let proj = TorusProjector::new(&orbit, sys.generator()).unwrap();
    for i in (0..traj.len()).step_by(37) {
        let x = traj.state(i);
        let a = proj.project(x);
        let b = proj.project(&sys.generator().rotate(0.7, x));
        let dpsi = (a.psi_hat - b.psi_hat + PI).rem_euclid(2.0 * PI) - PI;
        assert!(dpsi.abs() < 1e-8, "{a:?} {b:?}");
        assert!((a.distance - b.distance).abs() < 1e-8);
    }
}

#[test]
fn unforced_orbit_stays_on_torus() {
    for name in ["yamada", "example2"] {
        let sys = system(name, &[]);
        let orbit = orbit_with(&sys, 512);
        let t = 10.0 * orbit.period();
        let traj = simulate_forced(&sys, 1.0, orbit.beta0(), 0.0, &orbit.x0(0.0), t, 1e-11).unwrap();
        let proj = TorusProjector::new(&orbit, sys.generator()).unwrap();
        let worst = traj.states().map(|x| proj.project(x).distance).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{name} {worst}");
    }
}

#[test]
fn yamada_transverse_perturbation_decays() {
    let sys = system("yamada", &[]);
    let orbit = orbit_with(&sys, 512);
    let nu = normal(&orbit, &sys, 0.5, 0.0, 11);
    let x: Vec<f64> = orbit.x0(0.5).iter().zip(&nu).map(|(a, b)| a + 0.05 * b).collect();
    let proj = TorusProjector::new(&orbit, sys.generator()).unwrap();
    assert!((proj.project(&x).distance - 0.05).abs() < 5e-3);
    let traj = simulate_forced(&sys, 1.0, orbit.beta0(), 0.0, &x, 2000.0, 1e-10).unwrap();
    // Envelope per orbit period must shrink.
    let per = orbit.period();
    let mut envelopes = Vec::new();
    let mut k = 0;
    while (k as f64 + 1.0) * per <= 2000.0 {
        let env = (0..traj.len())
            .filter(|&i| {
                let t = traj.times()[i];
                t >= k as f64 * per && t < (k as f64 + 1.0) * per
            })
            .map(|i| proj.project(traj.state(i)).distance)
            .fold(0.0, f64::max);
        envelopes.push(env);
        k += 1;
    }
    for w in envelopes.windows(2) {
        assert!(w[1] <= w[0] || w[1] < 1e-8, "{envelopes:?}");
    }
    let last = proj.project(traj.final_state()).distance;
    assert!(last < 1e-4, "{last}");
}

#[test]
fn example2_radius_contracts() {
    let sys = system("example2", &[]);
    let r = 0.8f64.sqrt();
    let x = [r * 0.6, r * 0.8, 0.6, 0.5];
    let traj = simulate_forced(&sys, 10.0, 1.0, 0.0, &x, 60.0, 1e-10).unwrap();
    let end = traj.final_state();
    assert!((end[0] * end[0] + end[1] * end[1] - 1.0).abs() < 1e-6, "{end:?}");
}

#[test]
fn unforced_diagnoses() {
    let sys = system("yamada", &[]);
    let orbit = orbit_with(&sys, 512);
    let b0 = orbit.beta0();
    let opts = DiagnoseOptions::default();
    let t = 400.0 * 2.0 * PI / b0;
    let traj = simulate_forced(&sys, 50.0, b0, 0.0, &orbit.x0(0.0), t, 1e-11).unwrap();
    let params = LockParameters { alpha: 50.0, beta: b0, gamma: 0.0 };
    let d = diagnose_lock(&orbit, &sys, &traj, params, &opts).unwrap();
    assert!(d.locked, "{d:?}");
    assert!(d.sigma.abs() < 1e-6 && d.drift_rate.abs() < 1e-8, "{d:?}");

    let beta = b0 + 0.01;
    let t = 400.0 * 2.0 * PI / beta;
    let traj = simulate_forced(&sys, 50.0, beta, 0.0, &orbit.x0(0.0), t, 1e-10).unwrap();
    let params = LockParameters { alpha: 50.0, beta, gamma: 0.0 };
    let d = diagnose_lock(&orbit, &sys, &traj, params, &opts).unwrap();
    assert!(!d.locked);
    assert!((d.drift_rate + 0.01).abs() < 1e-6, "{d:?}");
}

#[test]
fn short_tail_is_rejected() {
    let sys = system("example2", &[]);
    let orbit = orbit_with(&sys, 128);
    let traj = simulate_forced(&sys, 10.0, 1.0, 0.0, &orbit.x0(0.0), 30.0, 1e-9).unwrap();
    let params = LockParameters { alpha: 10.0, beta: 1.0, gamma: 0.0 };
    assert!(diagnose_lock(&orbit, &sys, &traj, params, &DiagnoseOptions::default()).is_err());
}
