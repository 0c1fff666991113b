mod common;

use modlock::adjoint::{biorthonormality_report, solve_adjoint, AdjointOptions, EigenspaceMethod};
use modlock::orbit::corotating_field;
use modlock::trig::spectral_derivative;

use common::{max_abs_diff, pipeline, system};

#[test]
fn example2_adjoint_is_closed_form() {
    let sys = system("example2", &[]);
    let (orbit, pair) = pipeline(&sys, 128);
    for (psi, p) in pair.psi_grid().iter().zip(pair.p1_values()) {
        let expected = [psi.cos(), -psi.sin(), 0.0, 0.0];
        assert!(max_abs_diff(p, &expected) < 1e-8, "{psi}: {p:?}");
    }
    assert!(biorthonormality_report(&pair, &orbit).unwrap() < 1e-8);
}

#[test]
fn yamada_adjoint_structure() {
    let sys = system("yamada", &[]);
    let (orbit, pair) = pipeline(&sys, 512);
    let b = biorthonormality_report(&pair, &orbit).unwrap();
    eprintln!("biorth {b:e}, periodicity {:e}", pair.record().periodicity_error);
    assert!(b < 1e-8);
    let p14 = pair.p1_values().iter().map(|p| p[3].abs()).fold(0.0, f64::max);
    assert!(p14 < 1e-8, "{p14}");
    assert!(pair.record().periodicity_error < 1e-6);

    let alt = solve_adjoint(
        &orbit,
        &sys,
        &AdjointOptions {
            method: EigenspaceMethod::InverseIteration,
            ..AdjointOptions::default()
        },
    )
    .unwrap();
    let d = pair
        .p1_values()
        .iter()
        .zip(alt.p1_values())
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max);
    assert!(d < 1e-7, "{d}");
}

#[test]
fn adjoint_satisfies_the_adjoint_equation() {
    for name in ["example2", "yamada"] {
        let sys = system(name, &[]);
        let (orbit, pair) = pipeline(&sys, 512);
        let field = corotating_field(&sys, orbit.alpha0(), orbit.beta0()).unwrap();
        let n = orbit.dim();
        for values in [pair.p1_values(), pair.p2_values()] {
            let mut worst = 0.0f64;
            let derivs: Vec<Vec<f64>> = (0..n)
                .map(|i| spectral_derivative(&values.iter().map(|p| p[i]).collect::<Vec<_>>()))
                .collect();
            for (k, x) in orbit.x0_values().iter().enumerate() {
                let j = field.jacobian(x);
                for r in 0..n {
                    let rhs: f64 = -(0..n).map(|c| j[(c, r)] * values[k][c]).sum::<f64>();
                    worst = worst.max((derivs[r][k] - rhs).abs());
                }
            }
            assert!(worst < 1e-6, "{name}: {worst}");
        }
    }
}

#[test]
fn doubled_p1_breaks_biorthonormality() {
    let sys = system("example2", &[]);
    let (orbit, pair) = pipeline(&sys, 64);
    let doubled = pair.with_scaled_p1(2.0).unwrap();
    let r = biorthonormality_report(&doubled, &orbit).unwrap();
    assert!((r - 1.0).abs() < 1e-8, "{r}");
}
