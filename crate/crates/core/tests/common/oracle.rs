//! Adaptive-quadrature oracle for the second-order average, shared with
//! the acceptance target.

use std::f64::consts::PI;

use modlock::system::EquivariantSystem;

/// Adaptive Simpson on a vector-valued integrand.
pub fn simpson<F: Fn(f64) -> Vec<f64>>(f: &F, a: f64, b: f64, tol: f64) -> Vec<f64> {
    fn rule(fa: &[f64], fm: &[f64], fb: &[f64], h: f64) -> Vec<f64> {
        fa.iter()
            .zip(fm)
            .zip(fb)
            .map(|((a, m), b)| h / 6.0 * (a + 4.0 * m + b))
            .collect()
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> Vec<f64>>(
        f: &F,
        a: f64,
        b: f64,
        fa: Vec<f64>,
        fm: Vec<f64>,
        fb: Vec<f64>,
        whole: Vec<f64>,
        tol: f64,
        depth: u32,
    ) -> Vec<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = rule(&fa, &flm, &fm, m - a);
        let right = rule(&fm, &frm, &fb, b - m);
        let err = left
            .iter()
            .zip(&right)
            .zip(&whole)
            .map(|((l, r), w)| (l + r - w).abs())
            .fold(0.0, f64::max);
        if depth == 0 || err <= 15.0 * tol {
            return left
                .iter()
                .zip(&right)
                .zip(&whole)
                .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
                .collect();
        }
        let mut l = recurse(f, a, m, fa, flm, fm.clone(), left, tol / 2.0, depth - 1);
        let r = recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
        l.iter_mut().zip(&r).for_each(|(x, y)| *x += y);
        l
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = rule(&fa, &fm, &fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Brute-force `g₂` from nested adaptive quadrature of the defining integrals.
pub fn g2_oracle(sys: &EquivariantSystem, x: &[f64], psi: f64) -> Vec<f64> {
    let n = sys.dim();
    let tol = 1e-10;
    let jac = |phi: f64| -> Vec<f64> {
        let j = sys.g_xjac(x, psi, phi);
        (0..n * n).map(|e| j[(e / n, e % n)]).collect()
    };
    let jbar: Vec<f64> = simpson(&jac, 0.0, 2.0 * PI, tol)
        .into_iter()
        .map(|v| v / (2.0 * PI))
        .collect();
    let centered = |phi: f64| -> Vec<f64> { jac(phi).iter().zip(&jbar).map(|(a, b)| a - b).collect() };
    let primitive = |phi: f64| -> Vec<f64> {
        if phi == 0.0 {
            vec![0.0; n * n]
        } else {
            simpson(&centered, 0.0, phi, tol)
        }
    };
    let mean_primitive: Vec<f64> = simpson(&primitive, 0.0, 2.0 * PI, tol)
        .into_iter()
        .map(|v| v / (2.0 * PI))
        .collect();
    let integrand = |phi: f64| -> Vec<f64> {
        let du: Vec<f64> = primitive(phi)
            .iter()
            .zip(&mean_primitive)
            .map(|(a, b)| a - b)
            .collect();
        let g = sys.g_eval(x, psi, phi);
        (0..n)
            .map(|r| (0..n).map(|c| du[r * n + c] * g[c]).sum::<f64>())
            .collect()
    };
    simpson(&integrand, 0.0, 2.0 * PI, tol)
        .into_iter()
        .map(|v| -v / (2.0 * PI))
        .collect()
}
