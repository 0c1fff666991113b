//! Adaptive Dormand–Prince 5(4) integration with dense output, and joint
//! integration of a system with its variational equation.
//!
//! Fields are plain closures `Fn(t, y, dy)` writing the derivative into `dy`.
//! Jacobians write an `n×n` matrix. Both directions of integration are
//! supported; stored nodes are ordered in the direction of integration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension (Hairer, Nørsett & Wanner, dopri5 `contd5`).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive step controller settings.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on |h|.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

/// One accepted step, handed to the driver callback.
struct Step<'a> {
    t: f64,
    h: f64,
    y0: &'a [f64],
    y1: &'a [f64],
    k: &'a [Vec<f64>; 7],
}

impl Step<'_> {
    /// Coefficients `r1..r5` of the continuous extension, stored contiguously.
    fn dense_coeffs(&self, out: &mut Vec<f64>) {
        let n = self.y0.len();
        let h = self.h;
        let k = self.k;
        let base = out.len();
        out.resize(base + 5 * n, 0.0);
        let (r1, rest) = out[base..].split_at_mut(n);
        let (r2, rest) = rest.split_at_mut(n);
        let (r3, rest) = rest.split_at_mut(n);
        let (r4, r5) = rest.split_at_mut(n);
        for i in 0..n {
            let ydiff = self.y1[i] - self.y0[i];
            let bspl = h * k[0][i] - ydiff;
            r1[i] = self.y0[i];
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k[6][i] - bspl;
            r5[i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
    }
}

fn eval_dense(coeffs: &[f64], theta: f64, out: &mut [f64]) {
    let n = out.len();
    let theta1 = 1.0 - theta;
    for i in 0..n {
        out[i] = coeffs[i]
            + theta
                * (coeffs[n + i]
                    + theta1
                        * (coeffs[2 * n + i]
                            + theta * (coeffs[3 * n + i] + theta1 * coeffs[4 * n + i])));
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Integrator {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    fn validate(&self, y0: &[f64], t0: f64, t1: f64) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
            return Err(Error::InvalidArgument(format!(
                "degenerate time span [{t0}, {t1}]"
            )));
        }
        if y0.is_empty() || !all_finite(y0) {
            return Err(Error::InvalidArgument(
                "initial state must be non-empty and finite".into(),
            ));
        }
        Ok(())
    }

    fn scaled_rms(&self, v: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let n = v.len();
        let s: f64 = (0..n)
            .map(|i| {
                let sc = self.abs_tol + self.rel_tol * y0[i].abs().max(y1[i].abs());
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    }

    fn initial_step<F>(&self, field: &F, t0: f64, y0: &[f64], f0: &[f64], dir: f64) -> f64
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let d0 = self.scaled_rms(y0, y0, y0);
        let d1 = self.scaled_rms(f0, y0, y0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(self.h_max);
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + dir * h0 * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        field(t0 + dir * h0, &y1, &mut f1);
        let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
        let d2 = self.scaled_rms(&diff, y0, y0) / h0;
        let h1 = if !d2.is_finite() {
            h0
        } else if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.h_max)
    }

    /// Core stepping loop. Returns the final state.
    fn drive<F, C>(&self, field: &F, y0: &[f64], t0: f64, t1: f64, mut on_step: C) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64], &mut [f64]),
        C: FnMut(&Step<'_>),
    {
        self.validate(y0, t0, t1)?;
        let n = y0.len();
        let dir = (t1 - t0).signum();
        let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        let mut y = y0.to_vec();
        let mut y1 = vec![0.0; n];
        let mut ytmp = vec![0.0; n];
        let mut errv = vec![0.0; n];

        field(t0, &y, &mut k[0]);
        if !all_finite(&k[0]) {
            return Err(Error::NonFiniteField {
                context: format!("at t = {t0}"),
            });
        }
        let mut t = t0;
        let mut h = dir * self.initial_step(field, t0, &y, &k[0], dir);
        let span = (t1 - t0).abs();
        let mut steps = 0usize;
        let mut last_rejected = false;

        loop {
            let remaining = (t1 - t) * dir;
            if remaining <= 1e-13 * span.max(t.abs()) {
                break;
            }
            if steps >= self.max_steps {
                return Err(Error::TooManySteps {
                    steps,
                    t,
                    target: t1,
                });
            }
            if h.abs() > self.h_max {
                h = dir * self.h_max;
            }
            // Land exactly on t1; also avoid leaving a sliver.
            if h.abs() >= remaining || remaining - h.abs() < 1e-10 * h.abs() {
                h = dir * remaining;
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(Error::IntegrationFailure { t, h });
            }

            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k[0][i];
            }
            field(t + C2 * h, &ytmp, &mut k[1]);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
            }
            field(t + C3 * h, &ytmp, &mut k[2]);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            field(t + C4 * h, &ytmp, &mut k[3]);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            field(t + C5 * h, &ytmp, &mut k[4]);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k[0][i]
                        + A62 * k[1][i]
                        + A63 * k[2][i]
                        + A64 * k[3][i]
                        + A65 * k[4][i]);
            }
            field(t + h, &ytmp, &mut k[5]);
            for i in 0..n {
                y1[i] = y[i]
                    + h * (A71 * k[0][i]
                        + A73 * k[2][i]
                        + A74 * k[3][i]
                        + A75 * k[4][i]
                        + A76 * k[5][i]);
            }
            field(t + h, &y1, &mut k[6]);
            for i in 0..n {
                errv[i] = h
                    * (E1 * k[0][i]
                        + E3 * k[2][i]
                        + E4 * k[3][i]
                        + E5 * k[4][i]
                        + E6 * k[5][i]
                        + E7 * k[6][i]);
            }
            let err = self.scaled_rms(&errv, &y, &y1);

            if err.is_finite() && err <= 1.0 && all_finite(&y1) && all_finite(&k[6]) {
                steps += 1;
                on_step(&Step {
                    t,
                    h,
                    y0: &y,
                    y1: &y1,
                    k: &k,
                });
                t = if h.abs() == remaining { t1 } else { t + h };
                std::mem::swap(&mut y, &mut y1);
                let (first, rest) = k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);
                let mut fac = if err == 0.0 {
                    10.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
                };
                if last_rejected {
                    fac = fac.min(1.0);
                }
                last_rejected = false;
                h *= fac;
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
                } else {
                    0.2
                };
                h *= fac;
                last_rejected = true;
            }
        }
        Ok(y)
    }

    /// Integrates and keeps every accepted step with its continuous extension.
    pub fn integrate<F>(&self, field: F, y0: &[f64], t_span: (f64, f64)) -> Result<Trajectory>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let mut times = vec![t_span.0];
        let mut states = y0.to_vec();
        let mut dense = Vec::new();
        self.drive(&field, y0, t_span.0, t_span.1, |s| {
            times.push(s.t + s.h);
            states.extend_from_slice(s.y1);
            s.dense_coeffs(&mut dense);
        })?;
        if let Some(last) = times.last_mut() {
            *last = t_span.1;
        }
        Ok(Trajectory {
            dim: n,
            times,
            states,
            derivs: Vec::new(),
            dense: Some(dense),
        })
    }

    /// Integrates and records the solution only at `sample_times` (sorted in
    /// the direction of integration, inside the span). Between samples the
    /// trajectory is evaluated by cubic Hermite interpolation.
    pub fn integrate_sampled<F>(
        &self,
        field: F,
        y0: &[f64],
        t_span: (f64, f64),
        sample_times: &[f64],
    ) -> Result<Trajectory>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let dir = (t_span.1 - t_span.0).signum();
        for w in sample_times.windows(2) {
            if (w[1] - w[0]) * dir <= 0.0 {
                return Err(Error::InvalidArgument(
                    "sample times must be strictly monotone in the integration direction".into(),
                ));
            }
        }
        if let (Some(&first), Some(&last)) = (sample_times.first(), sample_times.last()) {
            if (first - t_span.0) * dir < 0.0 || (t_span.1 - last) * dir < 0.0 {
                return Err(Error::InvalidArgument(
                    "sample times must lie inside the time span".into(),
                ));
            }
        }
        let mut times = Vec::with_capacity(sample_times.len());
        let mut states = Vec::with_capacity(sample_times.len() * n);
        let mut next = 0usize;
        while next < sample_times.len() && sample_times[next] == t_span.0 {
            times.push(t_span.0);
            states.extend_from_slice(y0);
            next += 1;
        }
        let mut coeffs = Vec::with_capacity(5 * n);
        let mut buf = vec![0.0; n];
        let final_state = self.drive(&field, y0, t_span.0, t_span.1, |s| {
            let t_end = s.t + s.h;
            if next >= sample_times.len() || (sample_times[next] - t_end) * dir > 0.0 {
                return;
            }
            coeffs.clear();
            s.dense_coeffs(&mut coeffs);
            while next < sample_times.len() && (sample_times[next] - t_end) * dir <= 0.0 {
                let ts = sample_times[next];
                let theta = ((ts - s.t) / s.h).clamp(0.0, 1.0);
                eval_dense(&coeffs, theta, &mut buf);
                times.push(ts);
                states.extend_from_slice(&buf);
                next += 1;
            }
        })?;
        // Samples at t1 that rounding pushed past the last step.
        while next < sample_times.len() {
            times.push(sample_times[next]);
            states.extend_from_slice(&final_state);
            next += 1;
        }
        let mut derivs = vec![0.0; states.len()];
        for (i, &t) in times.iter().enumerate() {
            field(t, &states[i * n..(i + 1) * n], &mut derivs[i * n..(i + 1) * n]);
        }
        Ok(Trajectory {
            dim: n,
            times,
            states,
            derivs,
            dense: None,
        })
    }

    /// Integrates and returns only the state at `t_span.1`.
    pub fn integrate_final<F>(&self, field: F, y0: &[f64], t_span: (f64, f64)) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        self.drive(&field, y0, t_span.0, t_span.1, |_| {})
    }

    /// Joint integration of `y' = f(t, y)` and `Ω' = J(t, y) Ω`, `Ω(t0) = I`,
    /// with one shared step controller over the augmented state.
    pub fn integrate_with_variational<F, J>(
        &self,
        field: F,
        jacobian: J,
        y0: &[f64],
        t_span: (f64, f64),
    ) -> Result<(Trajectory, FundamentalMatrixPath)>
    where
        F: Fn(f64, &[f64], &mut [f64]),
        J: Fn(f64, &[f64], &mut DMatrix<f64>),
    {
        let n = y0.len();
        let aug0 = augmented_initial(y0);
        let jac = std::cell::RefCell::new(DMatrix::zeros(n, n));
        let aug_field = |t: f64, z: &[f64], dz: &mut [f64]| {
            let (y, omega) = z.split_at(n);
            let (dy, domega) = dz.split_at_mut(n);
            field(t, y, dy);
            let mut j = jac.borrow_mut();
            jacobian(t, y, &mut j);
            // Ω stored column-major: column c occupies omega[c*n..(c+1)*n].
            for c in 0..n {
                let col = &omega[c * n..(c + 1) * n];
                for r in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += j[(r, m)] * col[m];
                    }
                    domega[c * n + r] = acc;
                }
            }
        };
        let full = self.integrate(aug_field, &aug0, t_span)?;
        Ok(split_augmented(full, n))
    }
}

fn augmented_initial(y0: &[f64]) -> Vec<f64> {
    let n = y0.len();
    let mut z = Vec::with_capacity(n + n * n);
    z.extend_from_slice(y0);
    for c in 0..n {
        for r in 0..n {
            z.push(if r == c { 1.0 } else { 0.0 });
        }
    }
    z
}

fn split_augmented(full: Trajectory, n: usize) -> (Trajectory, FundamentalMatrixPath) {
    let m = n + n * n;
    let count = full.times.len();
    let mut states = Vec::with_capacity(count * n);
    let mut matrices = Vec::with_capacity(count);
    for i in 0..count {
        let z = &full.states[i * m..(i + 1) * m];
        states.extend_from_slice(&z[..n]);
        matrices.push(DMatrix::from_column_slice(n, n, &z[n..]));
    }
    let path = FundamentalMatrixPath {
        times: full.times.clone(),
        matrices,
        augmented: full.clone(),
    };
    let dense = full.dense.as_ref().map(|d| {
        let steps = count - 1;
        let mut out = Vec::with_capacity(steps * 5 * n);
        for s in 0..steps {
            let block = &d[s * 5 * m..(s + 1) * 5 * m];
            for r in 0..5 {
                out.extend_from_slice(&block[r * m..r * m + n]);
            }
        }
        out
    });
    let traj = Trajectory {
        dim: n,
        times: full.times,
        states,
        derivs: Vec::new(),
        dense,
    };
    (traj, path)
}

/// Free-function form with the given tolerances.
pub fn integrate<F>(
    field: F,
    y0: &[f64],
    t_span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    Integrator::new(rel_tol, abs_tol).integrate(field, y0, t_span)
}

pub fn integrate_with_variational<F, J>(
    field: F,
    jacobian: J,
    y0: &[f64],
    t_span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(Trajectory, FundamentalMatrixPath)>
where
    F: Fn(f64, &[f64], &mut [f64]),
    J: Fn(f64, &[f64], &mut DMatrix<f64>),
{
    Integrator::new(rel_tol, abs_tol).integrate_with_variational(field, jacobian, y0, t_span)
}

/// Compares `jacobian` against central finite differences of `field` at
/// `(t, y)`. Fails with the maximum relative deviation when it exceeds `tol`.
pub fn check_jacobian<F, J>(field: F, jacobian: J, t: f64, y: &[f64], tol: f64) -> Result<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
    J: Fn(f64, &[f64], &mut DMatrix<f64>),
{
    let n = y.len();
    let mut analytic = DMatrix::zeros(n, n);
    jacobian(t, y, &mut analytic);
    let fd = finite_difference_jacobian(&field, t, y);
    let scale = analytic.amax().max(fd.amax()).max(1.0);
    let dev = (&analytic - &fd).amax() / scale;
    if dev > tol {
        Err(Error::JacobianMismatch { max_deviation: dev })
    } else {
        Ok(dev)
    }
}

/// Central-difference Jacobian with step `∛ε·(1+|y_j|)`.
pub fn finite_difference_jacobian<F>(field: &F, t: f64, y: &[f64]) -> DMatrix<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut out = DMatrix::zeros(n, n);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = f64::EPSILON.cbrt() * (1.0 + y[j].abs());
        yp[j] = y[j] + h;
        field(t, &yp, &mut fp);
        yp[j] = y[j] - h;
        field(t, &yp, &mut fm);
        yp[j] = y[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

/// Sampled solution with dense evaluation between nodes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    dense: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// 4 for the Runge–Kutta continuous extension, 3 for Hermite samples.
    pub fn interpolation_order(&self) -> usize {
        if self.dense.is_some() {
            4
        } else {
            3
        }
    }

    fn interval(&self, t: f64) -> usize {
        let count = self.times.len();
        if count < 2 {
            return 0;
        }
        let increasing = self.times[count - 1] > self.times[0];
        let key = |x: f64| if increasing { x } else { -x };
        let tk = key(t);
        let idx = self.times.partition_point(|&x| key(x) <= tk);
        idx.saturating_sub(1).min(count - 2)
    }

    /// Dense evaluation; outside the span the nearest end interval is extrapolated.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim;
        if self.times.len() == 1 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let i = self.interval(t);
        let t0 = self.times[i];
        let h = self.times[i + 1] - t0;
        let theta = (t - t0) / h;
        if theta == 0.0 {
            out.copy_from_slice(self.state(i));
            return;
        }
        if theta == 1.0 {
            out.copy_from_slice(self.state(i + 1));
            return;
        }
        match &self.dense {
            Some(d) => eval_dense(&d[i * 5 * n..(i + 1) * 5 * n], theta, out),
            None => {
                let y0 = self.state(i);
                let y1 = self.state(i + 1);
                let d0 = &self.derivs[i * n..(i + 1) * n];
                let d1 = &self.derivs[(i + 1) * n..(i + 2) * n];
                let t2 = theta * theta;
                let t3 = t2 * theta;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + theta;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                for k in 0..n {
                    out[k] = h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k];
                }
            }
        }
    }
}

/// Fundamental matrices `Ω(t, t0)` at the nodes of the joint integration.
#[derive(Debug, Clone)]
pub struct FundamentalMatrixPath {
    times: Vec<f64>,
    matrices: Vec<DMatrix<f64>>,
    augmented: Trajectory,
}

impl FundamentalMatrixPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn final_matrix(&self) -> &DMatrix<f64> {
        self.matrices.last().unwrap()
    }

    /// Dense evaluation of `Ω(t, t0)`.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let n = self.matrices[0].nrows();
        let z = self.augmented.eval(t);
        DMatrix::from_column_slice(n, n, &z[n..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_block_field(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = 0.0;
        dy[1] = 0.0;
        dy[2] = -y[3];
        dy[3] = y[2];
    }

    fn rotation_block_jac(_t: f64, _y: &[f64], j: &mut DMatrix<f64>) {
        j.fill(0.0);
        j[(2, 3)] = -1.0;
        j[(3, 2)] = 1.0;
    }

    #[test]
    fn rotation_returns_after_full_turn() {
        let traj = integrate(
            rotation_block_field,
            &[0.0, 0.0, 1.0, 0.0],
            (0.0, 2.0 * std::f64::consts::PI),
            1e-10,
            1e-12,
        )
        .unwrap();
        let y = traj.final_state();
        let expect = [0.0, 0.0, 1.0, 0.0];
        for i in 0..4 {
            assert!((y[i] - expect[i]).abs() < 1e-8, "{y:?}");
        }
    }

    #[test]
    fn scalar_decay() {
        let traj = integrate(|_, y, dy| dy[0] = -y[0], &[1.0], (0.0, 1.0), 1e-10, 1e-12).unwrap();
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let y = Integrator::new(1e-10, 1e-12)
            .integrate_final(|_, y, dy| dy[0] = -y[0], &[(-1.0f64).exp()], (1.0, 0.0))
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn node_evaluation_reproduces_states() {
        let traj = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            (0.0, 10.0),
            1e-8,
            1e-10,
        )
        .unwrap();
        assert_eq!(traj.interpolation_order(), 4);
        for i in 0..traj.len() {
            let y = traj.eval(traj.times()[i]);
            for k in 0..2 {
                let s = traj.state(i)[k];
                assert!((y[k] - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
        for w in traj.times().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn dense_output_matches_reintegration() {
        let field = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0] + 0.3 * (1.0 - y[0] * y[0]) * y[1];
        };
        let tol = 1e-8;
        let traj = integrate(field, &[2.0, 0.0], (0.0, 20.0), tol, tol * 1e-2).unwrap();
        for i in (0..traj.len() - 1).step_by(7) {
            let t0 = traj.times()[i];
            let t1 = traj.times()[i + 1];
            let tm = 0.5 * (t0 + t1);
            let dense = traj.eval(tm);
            let fresh = integrate(field, traj.state(i), (t0, tm), 1e-13, 1e-15).unwrap();
            for k in 0..2 {
                let y = fresh.final_state()[k];
                let scale = traj.state(i)[k].abs().max(traj.state(i + 1)[k].abs());
                assert!(
                    (dense[k] - y).abs() < 10.0 * (tol * scale + tol * 1e-2),
                    "interval {i}: {} vs {}",
                    dense[k],
                    y
                );
            }
        }
    }

    #[test]
    fn variational_of_rotation_is_identity_after_full_turn() {
        let (_, path) = integrate_with_variational(
            rotation_block_field,
            rotation_block_jac,
            &[0.0, 0.0, 1.0, 0.0],
            (0.0, 2.0 * std::f64::consts::PI),
            1e-10,
            1e-12,
        )
        .unwrap();
        let m = path.final_matrix();
        assert!((m - DMatrix::<f64>::identity(4, 4)).amax() < 1e-9);
        assert!((&path.matrices()[0] - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        for m in path.matrices() {
            assert!(m.determinant().abs() > 0.0);
        }
    }

    #[test]
    fn variational_scalar_decay() {
        let (_, path) = integrate_with_variational(
            |_, y, dy| dy[0] = -y[0],
            |_, _, j| j[(0, 0)] = -1.0,
            &[1.0],
            (0.0, 1.0),
            1e-10,
            1e-12,
        )
        .unwrap();
        assert!((path.final_matrix()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn jacobian_check_detects_mismatch() {
        let field = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        assert!(check_jacobian(field, |_, y, j| j[(0, 0)] = 2.0 * y[0], 0.0, &[1.5], 1e-5).is_ok());
        match check_jacobian(field, |_, y, j| j[(0, 0)] = y[0], 0.0, &[1.5], 1e-5) {
            Err(Error::JacobianMismatch { max_deviation }) => assert!(max_deviation > 0.1),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn blow_up_reports_failure() {
        let res = integrate(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], (0.0, 2.0), 1e-8, 1e-10);
        assert!(matches!(
            res,
            Err(Error::IntegrationFailure { .. }) | Err(Error::NonFiniteField { .. })
        ));
    }

    #[test]
    fn non_finite_field_is_reported() {
        let res = integrate(|_, _, dy| dy[0] = f64::NAN, &[1.0], (0.0, 1.0), 1e-8, 1e-10);
        assert!(matches!(res, Err(Error::NonFiniteField { .. })));
    }

    #[test]
    fn invalid_inputs() {
        let f = |_: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        assert!(integrate(f, &[1.0], (0.0, 0.0), 1e-8, 1e-10).is_err());
        assert!(integrate(f, &[1.0], (0.0, 1.0), 0.0, 1e-10).is_err());
    }

    #[test]
    fn sampled_integration_hits_requested_times() {
        let samples: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let traj = Integrator::new(1e-10, 1e-12)
            .integrate_sampled(|_, y, dy| dy[0] = -y[0], &[1.0], (0.0, 10.0), &samples)
            .unwrap();
        assert_eq!(traj.len(), samples.len());
        assert_eq!(traj.interpolation_order(), 3);
        for (i, &t) in samples.iter().enumerate() {
            assert!((traj.state(i)[0] - (-t).exp()).abs() < 1e-9);
        }
        // Hermite between samples.
        assert!((traj.eval(0.25)[0] - (-0.25f64).exp()).abs() < 1e-3);
    }
}
