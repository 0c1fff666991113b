//! First and second averages of the forcing over the fast wave phase φ.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::system::{sample_ball, EquivariantSystem};
use crate::trig::{zero_mean_antiderivative, zero_mean_antiderivative_in_place};

/// Default threshold on `‖g₁‖` for the degenerate branch.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Uniform nodes `φ_k = 2πk/N_φ`, `N_φ` a power of two, at least 64.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiGrid {
    n: usize,
}

impl PhiGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "phi grid size must be a power of two >= 64, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }
}

impl Default for PhiGrid {
    fn default() -> Self {
        Self { n: 64 }
    }
}

fn check_finite(v: &[f64], x: &[f64], psi: f64, phi: f64) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteField {
            context: format!("in g at x = {x:?}, psi = {psi}, phi = {phi}"),
        })
    }
}

/// `g` sampled on the φ grid: `samples[k]` is `g(x, ψ, φ_k)`.
fn sample_g(sys: &EquivariantSystem, x: &[f64], psi: f64, grid: PhiGrid) -> Result<Vec<Vec<f64>>> {
    (0..grid.len())
        .map(|k| {
            let phi = grid.node(k);
            let v = sys.g_eval(x, psi, phi);
            check_finite(&v, x, psi, phi)?;
            Ok(v)
        })
        .collect()
}

/// `g₁(x, ψ) = (1/2π) ∫ g(x, ψ, φ) dφ` by the periodic rectangle rule.
pub fn average_g1(sys: &EquivariantSystem, x: &[f64], psi: f64, grid: PhiGrid) -> Result<Vec<f64>> {
    let mut v = vec![0.0; sys.dim()];
    let mut m = vec![0.0; sys.dim()];
    for k in 0..grid.len() {
        let phi = grid.node(k);
        sys.g_into(x, psi, phi, &mut v);
        check_finite(&v, x, psi, phi)?;
        m.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / grid.len() as f64;
    m.iter_mut().for_each(|a| *a *= inv);
    Ok(m)
}

/// Largest `‖g₁‖` over seeded samples `‖x‖ ≤ 10`, `ψ ∈ [0, 2π)`.
pub fn max_g1_norm(sys: &EquivariantSystem, n_samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = PhiGrid::default();
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, sys.dim(), 10.0);
        let psi = rng.gen_range(0.0..2.0 * PI);
        let g1 = average_g1(sys, &x, psi, grid)?;
        worst = worst.max(g1.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(worst)
}

/// True iff `g₁` vanishes (below `tol`) at every sample. Evaluation
/// failures count as non-degenerate.
pub fn is_degenerate(sys: &EquivariantSystem, n_samples: usize, tol: f64, seed: u64) -> bool {
    let n_samples = n_samples.max(20);
    max_g1_norm(sys, n_samples, seed).is_ok_and(|m| m < tol)
}

/// Zero-mean primitive in φ of `g(x, ψ, ·) − g₁(x, ψ)`; one n-vector per node.
pub fn antiderivative_u1(
    sys: &EquivariantSystem,
    x: &[f64],
    psi: f64,
    grid: PhiGrid,
) -> Result<Vec<Vec<f64>>> {
    let samples = sample_g(sys, x, psi, grid)?;
    Ok(antiderivative_columns(&samples))
}

fn antiderivative_columns(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = samples.len();
    let n = samples[0].len();
    let mut out = vec![vec![0.0; n]; m];
    let mut column = vec![0.0; m];
    for i in 0..n {
        for (k, s) in samples.iter().enumerate() {
            column[k] = s[i];
        }
        let u = zero_mean_antiderivative(&column);
        for k in 0..m {
            out[k][i] = u[k];
        }
    }
    out
}

/// `g₂(x, ψ) = −(1/2π) ∫ (∂u₁/∂x)(x, ψ, φ) g(x, ψ, φ) dφ`, with `∂u₁/∂x` the
/// zero-mean φ-primitive of `∂g/∂x − ∂g₁/∂x`.
///
/// Integrating by parts moves the primitive onto `g`, so this evaluates
/// `(1/2π) ∫ (∂g/∂x) G dφ` with `G` the zero-mean primitive of `g`.
pub fn second_average_g2(
    sys: &EquivariantSystem,
    x: &[f64],
    psi: f64,
    grid: PhiGrid,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let m = grid.len();
    let mut samples = vec![0.0; m * n];
    for (k, v) in samples.chunks_exact_mut(n).enumerate() {
        let phi = grid.node(k);
        sys.g_into(x, psi, phi, v);
        check_finite(v, x, psi, phi)?;
    }
    // The primitive maps real samples to real samples, so two components
    // share one complex transform.
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for c in (0..n).step_by(2) {
        let pair = c + 1 < n;
        for (b, v) in buf.iter_mut().zip(samples.chunks_exact(n)) {
            *b = Complex64::new(v[c], if pair { v[c + 1] } else { 0.0 });
        }
        zero_mean_antiderivative_in_place(&mut buf);
        for (b, v) in buf.iter().zip(samples.chunks_exact_mut(n)) {
            v[c] = b.re;
            if pair {
                v[c + 1] = b.im;
            }
        }
    }
    let mut jac = DMatrix::zeros(n, n);
    let mut g2 = vec![0.0; n];
    for (k, gk) in samples.chunks_exact(n).enumerate() {
        sys.g_xjac_into(x, psi, grid.node(k), &mut jac);
        // Column-major: entry (r, c) sits at c·n + r.
        for (col, g) in jac.as_slice().chunks_exact(n).zip(gk) {
            for (acc, j) in g2.iter_mut().zip(col) {
                *acc += j * g;
            }
        }
    }
    if g2.iter().any(|v| !v.is_finite()) {
        for k in 0..m {
            sys.g_xjac_into(x, psi, grid.node(k), &mut jac);
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteField {
                    context: format!("in dg/dx at x = {x:?}, psi = {psi}, phi = {}", grid.node(k)),
                });
            }
        }
        return Err(Error::NonFiniteField {
            context: format!("in g2 at x = {x:?}, psi = {psi}"),
        });
    }
    let inv = 1.0 / m as f64;
    g2.iter_mut().for_each(|v| *v *= inv);
    Ok(g2)
}

/// Evaluators for the averaged forcings of one system on a fixed φ grid.
#[derive(Debug, Clone)]
pub struct ForcingAverages<'a> {
    sys: &'a EquivariantSystem,
    grid: PhiGrid,
    degenerate: bool,
}

impl<'a> ForcingAverages<'a> {
    pub fn new(sys: &'a EquivariantSystem, grid: PhiGrid) -> Self {
        let degenerate = is_degenerate(sys, 50, DEGENERACY_TOL, 0);
        Self {
            sys,
            grid,
            degenerate,
        }
    }

    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    /// 1 when `g₁ ≢ 0`, 2 otherwise.
    pub fn order(&self) -> u8 {
        if self.degenerate {
            2
        } else {
            1
        }
    }

    pub fn grid(&self) -> PhiGrid {
        self.grid
    }

    pub fn g1(&self, x: &[f64], psi: f64) -> Result<Vec<f64>> {
        average_g1(self.sys, x, psi, self.grid)
    }

    pub fn u1(&self, x: &[f64], psi: f64) -> Result<Vec<Vec<f64>>> {
        antiderivative_u1(self.sys, x, psi, self.grid)
    }

    pub fn g2(&self, x: &[f64], psi: f64) -> Result<Vec<f64>> {
        second_average_g2(self.sys, x, psi, self.grid)
    }

    /// `g_m` for `m = order`.
    pub fn g_order(&self, order: u8, x: &[f64], psi: f64) -> Result<Vec<f64>> {
        match order {
            1 => self.g1(x, psi),
            2 => self.g2(x, psi),
            other => Err(Error::InvalidArgument(format!("order must be 1 or 2, got {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin, Generator};
    use std::collections::BTreeMap;

    #[test]
    fn grid_validation() {
        assert!(PhiGrid::new(32).is_err());
        assert!(PhiGrid::new(96).is_err());
        let g = PhiGrid::new(128).unwrap();
        assert_eq!(g.nodes().len(), 128);
        assert_eq!(g.node(64), PI);
    }

    #[test]
    fn cosine_component_integrates_to_sine() {
        let sys = EquivariantSystem::builder("test", Generator::single_plane(3, 1, 2))
            .f(|_x, out| out.fill(0.0))
            .g(|_x, _psi, phi, out| {
                out[0] = phi.cos();
                out[1] = 0.0;
                out[2] = 0.0;
            })
            .build()
            .unwrap();
        let grid = PhiGrid::default();
        let u = antiderivative_u1(&sys, &[0.0; 3], 0.0, grid).unwrap();
        let mean: f64 = u.iter().map(|v| v[0]).sum::<f64>() / u.len() as f64;
        assert!(mean.abs() < 1e-12);
        for (k, v) in u.iter().enumerate() {
            assert!((v[0] - grid.node(k).sin()).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_forcing_is_degenerate_and_has_zero_g2() {
        let sys = EquivariantSystem::builder("quiet", Generator::single_plane(3, 1, 2))
            .f(|_x, out| out.fill(0.0))
            .build()
            .unwrap();
        assert!(is_degenerate(&sys, 20, 1e-10, 1));
        let g2 = second_average_g2(&sys, &[1.0, 2.0, 3.0], 0.5, PhiGrid::default()).unwrap();
        assert_eq!(g2, vec![0.0; 3]);
    }

    #[test]
    fn state_independent_rotating_forcing_has_zero_g2() {
        let sys = EquivariantSystem::builder("wave", Generator::single_plane(3, 1, 2))
            .f(|_x, out| out.fill(0.0))
            .g(|_x, psi, phi, out| {
                let (s, c) = phi.sin_cos();
                let (b1, b2) = (psi.cos(), 0.4);
                out[0] = 0.7;
                out[1] = c * b1 - s * b2;
                out[2] = s * b1 + c * b2;
            })
            .build()
            .unwrap();
        let g2 = second_average_g2(&sys, &[1.0, 0.0, 2.0], 0.3, PhiGrid::default()).unwrap();
        assert!(g2.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn builtin_first_averages() {
        let ex2 = builtin("example2", &BTreeMap::new()).unwrap();
        let g1 = average_g1(&ex2, &[0.3, 0.1, -2.0, 1.0], 1.1, PhiGrid::default()).unwrap();
        assert!(g1.iter().all(|v| v.abs() < 1e-12));
        assert!(is_degenerate(&ex2, 20, 1e-10, 3));
        let yam = builtin("yamada", &BTreeMap::new()).unwrap();
        let g1 = average_g1(&yam, &[1.0, 2.0, 3.0, 4.0], 0.8, PhiGrid::default()).unwrap();
        assert!((g1[0] - 0.8f64.sin()).abs() < 1e-15);
        assert!(g1[1..].iter().all(|v| v.abs() < 1e-15));
        assert!(!is_degenerate(&yam, 20, 1e-10, 3));
    }

    #[test]
    fn phi_independent_forcing_is_its_own_average() {
        let yam = builtin("yamada", &BTreeMap::new()).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let g = yam.g_eval(&x, 0.2, 0.0);
        let g1 = average_g1(&yam, &x, 0.2, PhiGrid::default()).unwrap();
        for (a, b) in g.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
