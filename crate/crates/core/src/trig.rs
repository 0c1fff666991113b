//! Trigonometric interpolation and spectral calculus on uniform periodic grids.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Uniform nodes `2πk/n`, `k = 0..n`, periodic endpoint excluded.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Normalized DFT coefficients `c_k = (1/n) Σ_j f_j e^{-ikψ_j}`.
pub fn dft(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Inverse of [`dft`], returning the real part.
pub fn idft_real(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    inverse_plan(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Signed wavenumber of DFT slot `j`.
fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Spectral derivative of periodic samples at the nodes. The Nyquist mode
/// is dropped.
pub fn spectral_derivative(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut c = dft(values);
    for (j, cj) in c.iter_mut().enumerate() {
        let k = wavenumber(j, n);
        if n % 2 == 0 && j == n / 2 {
            *cj = Complex64::new(0.0, 0.0);
        } else {
            *cj *= Complex64::new(0.0, k as f64);
        }
    }
    idft_real(&c)
}

/// Zero-mean spectral antiderivative: divides each mode by `ik` and drops the
/// mean (and the Nyquist mode).
pub fn zero_mean_antiderivative(values: &[f64]) -> Vec<f64> {
    let mut c = dft(values);
    antiderivative_coeffs(&mut c);
    idft_real(&c)
}

/// In-place variant of [`zero_mean_antiderivative`] on a complex buffer
/// holding real samples.
pub(crate) fn zero_mean_antiderivative_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    forward_plan(n).process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    antiderivative_coeffs(buf);
    inverse_plan(n).process(buf);
}

pub(crate) fn antiderivative_coeffs(c: &mut [Complex64]) {
    let n = c.len();
    for (j, cj) in c.iter_mut().enumerate() {
        let k = wavenumber(j, n);
        if k == 0 || (n % 2 == 0 && j == n / 2) {
            *cj = Complex64::new(0.0, 0.0);
        } else {
            *cj /= Complex64::new(0.0, k as f64);
        }
    }
}

/// Arithmetic mean (periodic trapezoidal rule).
pub fn periodic_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Band-limited interpolant of vector-valued samples on a uniform grid.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    n_nodes: usize,
    dim: usize,
    /// `coeffs[k * dim + i]` for k = 0..=n/2 (non-negative wavenumbers).
    coeffs: Vec<Complex64>,
}

impl TrigInterpolant {
    /// `samples[j]` is the vector value at node `2πj/N`.
    pub fn new(samples: &[Vec<f64>]) -> Result<Self> {
        let n_nodes = samples.len();
        if n_nodes < 2 {
            return Err(Error::InvalidArgument(
                "interpolant needs at least two nodes".into(),
            ));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::GridMismatch("ragged samples".into()));
        }
        let half = n_nodes / 2;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); (half + 1) * dim];
        let mut column = vec![0.0; n_nodes];
        for i in 0..dim {
            for (j, s) in samples.iter().enumerate() {
                column[j] = s[i];
            }
            let c = dft(&column);
            for k in 0..=half {
                coeffs[k * dim + i] = c[k];
            }
        }
        Ok(Self {
            n_nodes,
            dim,
            coeffs,
        })
    }

    pub fn scalar(samples: &[f64]) -> Result<Self> {
        let v: Vec<Vec<f64>> = samples.iter().map(|&s| vec![s]).collect();
        Self::new(&v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Complex coefficient of `e^{ikψ}` for component `i`, `0 ≤ k ≤ N/2`.
    pub fn coefficient(&self, k: usize, i: usize) -> Complex64 {
        self.coeffs[k * self.dim + i]
    }

    pub fn eval(&self, psi: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_derivative_into(psi, 0, &mut out);
        out
    }

    pub fn eval_into(&self, psi: f64, out: &mut [f64]) {
        self.eval_derivative_into(psi, 0, out);
    }

    pub fn eval_derivative(&self, psi: f64, order: u32) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_derivative_into(psi, order, &mut out);
        out
    }

    /// `order`-th derivative of the interpolant at `psi`.
    pub fn eval_derivative_into(&self, psi: f64, order: u32, out: &mut [f64]) {
        let n = self.n_nodes;
        let half = n / 2;
        let even = n % 2 == 0;
        let dim = self.dim;
        let ik_pow = |k: usize| -> Complex64 { Complex64::new(0.0, k as f64).powu(order) };
        for (i, o) in out.iter_mut().enumerate() {
            *o = if order == 0 { self.coeffs[i].re } else { 0.0 };
        }
        let step = Complex64::from_polar(1.0, psi);
        let mut z = Complex64::new(1.0, 0.0);
        let last_full = if even { half.saturating_sub(1) } else { half };
        for k in 1..=last_full {
            z *= step;
            let w = ik_pow(k) * z;
            for i in 0..dim {
                out[i] += 2.0 * (self.coeffs[k * dim + i] * w).re;
            }
        }
        if even && half >= 1 {
            // Nyquist term c·cos(Nψ/2) with c real for real data.
            let kf = half as f64;
            let phase = kf * psi;
            let d = match order % 4 {
                0 => phase.cos(),
                1 => -phase.sin(),
                2 => -phase.cos(),
                _ => phase.sin(),
            } * kf.powi(order as i32);
            for i in 0..dim {
                out[i] += self.coeffs[half * dim + i].re * d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolant_reproduces_nodes_and_between() {
        let n = 32;
        let grid = uniform_grid(n);
        let f = |x: f64| (x.sin() * 2.0).exp();
        let samples: Vec<Vec<f64>> = grid.iter().map(|&x| vec![f(x), x.cos()]).collect();
        let interp = TrigInterpolant::new(&samples).unwrap();
        for (j, &x) in grid.iter().enumerate() {
            let v = interp.eval(x);
            assert!((v[0] - samples[j][0]).abs() < 1e-12);
            assert!((v[1] - samples[j][1]).abs() < 1e-13);
        }
        let v = interp.eval(0.123);
        assert!((v[0] - f(0.123)).abs() < 1e-8);
        assert!((v[1] - 0.123f64.cos()).abs() < 1e-13);
        let d = interp.eval_derivative(0.4, 1);
        assert!((d[1] + 0.4f64.sin()).abs() < 1e-12);
        let d2 = interp.eval_derivative(0.4, 2);
        assert!((d2[1] + 0.4f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn antiderivative_of_cosine_is_sine() {
        let grid = uniform_grid(64);
        let v: Vec<f64> = grid.iter().map(|x| x.cos()).collect();
        let u = zero_mean_antiderivative(&v);
        for (x, u) in grid.iter().zip(&u) {
            assert!((u - x.sin()).abs() < 1e-13);
        }
        assert!(periodic_mean(&u).abs() < 1e-15);
    }

    #[test]
    fn antiderivative_drops_constant() {
        let grid = uniform_grid(64);
        let v: Vec<f64> = grid.iter().map(|x| 3.0 + (2.0 * x).sin()).collect();
        let u = zero_mean_antiderivative(&v);
        for (x, u) in grid.iter().zip(&u) {
            assert!((u + 0.5 * (2.0 * x).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_matches_analytic() {
        let grid = uniform_grid(64);
        let v: Vec<f64> = grid.iter().map(|x| (x.cos()).exp()).collect();
        let d = spectral_derivative(&v);
        for (x, d) in grid.iter().zip(&d) {
            assert!((d + x.sin() * x.cos().exp()).abs() < 1e-11);
        }
    }

    #[test]
    fn odd_node_count() {
        let grid = uniform_grid(15);
        let v: Vec<f64> = grid.iter().map(|x| (3.0 * x).sin()).collect();
        let interp = TrigInterpolant::scalar(&v).unwrap();
        assert!((interp.eval(1.0)[0] - 3.0f64.sin()).abs() < 1e-13);
    }
}
