//! Simulation of the full forced system and lock diagnosis by projecting the
//! trajectory onto the unperturbed torus.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Integrator, Trajectory};
use crate::orbit::PeriodicOrbit;
use crate::system::{EquivariantSystem, Generator};

pub const DIAGNOSIS_SCHEMA_VERSION: u32 = 1;

/// Coarse grid size per angle for the torus projection.
pub const COARSE_GRID: usize = 64;

/// Samples of the trajectory per modulation period `2π/β`.
pub const SAMPLES_PER_PERIOD: usize = 64;

/// Default simulated time in modulation periods.
pub const DEFAULT_PERIODS: f64 = 400.0;

const GRADIENT_TOL: f64 = 1e-10;
const MAX_REFINE: usize = 60;

fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Nearest point of the torus `{e^{Aφ}x₀(ψ)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusProjection {
    pub psi_hat: f64,
    pub phi_hat: f64,
    pub distance: f64,
    /// Refinement failed; the coarse minimum is returned.
    pub coarse_only: bool,
}

/// Precomputed coarse table `e^{Aφ_j}x₀(ψ_i)` for repeated projections.
pub struct TorusProjector<'a> {
    orbit: &'a PeriodicOrbit,
    generator: Generator,
    grid: Vec<f64>,
    rotations: Vec<DMatrix<f64>>,
    /// `table[i * m + j]` is `e^{Aφ_j}x₀(ψ_i)`.
    table: Vec<Vec<f64>>,
}

struct Local {
    r: Vec<f64>,
    dpsi: Vec<f64>,
    dphi: Vec<f64>,
    dpsipsi: Vec<f64>,
    dpsiphi: Vec<f64>,
    dphiphi: Vec<f64>,
}

impl<'a> TorusProjector<'a> {
    pub fn new(orbit: &'a PeriodicOrbit, generator: &Generator) -> Result<Self> {
        if generator.dim() != orbit.dim() {
            return Err(Error::InvalidArgument(format!(
                "generator dimension {} does not match orbit dimension {}",
                generator.dim(),
                orbit.dim()
            )));
        }
        let m = COARSE_GRID;
        let grid: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
        let rotations: Vec<DMatrix<f64>> = grid.iter().map(|&phi| generator.exp(phi)).collect();
        let x0_grid: Vec<Vec<f64>> = grid.iter().map(|&psi| orbit.x0(psi)).collect();
        let mut table = Vec::with_capacity(m * m);
        for y in &x0_grid {
            for &phi in &grid {
                table.push(generator.rotate(phi, y));
            }
        }
        Ok(Self {
            orbit,
            generator: generator.clone(),
            grid,
            rotations,
            table,
        })
    }

    fn coarse(&self, x: &[f64]) -> (f64, f64, f64) {
        let m = self.grid.len();
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for i in 0..m {
            for j in 0..m {
                let d: f64 = self.table[i * m + j]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                // Strict comparison keeps the smallest (ψ, then φ) on ties.
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        (self.grid[best.1], self.grid[best.2], best.0.sqrt())
    }

    fn local(&self, x: &[f64], psi: f64, phi: f64) -> Local {
        let interp = self.orbit.interpolant();
        let g = &self.generator;
        let y = interp.eval(psi);
        let y1 = interp.eval_derivative(psi, 1);
        let y2 = interp.eval_derivative(psi, 2);
        let ry = g.rotate(phi, &y);
        let ry1 = g.rotate(phi, &y1);
        let ary = g.apply(&ry);
        let ary1 = g.apply(&ry1);
        let aary = g.apply(&ary);
        let r = x.iter().zip(&ry).map(|(a, b)| a - b).collect();
        let neg = |v: Vec<f64>| v.into_iter().map(|a| -a).collect::<Vec<f64>>();
        Local {
            r,
            dpsi: neg(ry1),
            dphi: neg(ary),
            dpsipsi: neg(g.rotate(phi, &y2)),
            dpsiphi: neg(ary1),
            dphiphi: neg(aary),
        }
    }

    /// Newton on `½‖x − e^{Aφ}x₀(ψ)‖²` with Levenberg shifts when the Hessian
    /// is not positive definite. Returns `None` when the gradient tolerance is
    /// not met.
    fn refine(&self, x: &[f64], psi0: f64, phi0: f64) -> Option<(f64, f64, f64)> {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let gradient = |l: &Local| Vector2::new(dot(&l.r, &l.dpsi), dot(&l.r, &l.dphi));
        let (mut psi, mut phi) = (psi0, phi0);
        let mut loc = self.local(x, psi, phi);
        let mut cost = 0.5 * dot(&loc.r, &loc.r);
        for _ in 0..MAX_REFINE {
            let grad = gradient(&loc);
            if grad.norm() < GRADIENT_TOL {
                return Some((wrap(psi), wrap(phi), (2.0 * cost).sqrt()));
            }
            let jtj = Matrix2::new(
                dot(&loc.dpsi, &loc.dpsi),
                dot(&loc.dpsi, &loc.dphi),
                dot(&loc.dpsi, &loc.dphi),
                dot(&loc.dphi, &loc.dphi),
            );
            let hess = jtj
                + Matrix2::new(
                    dot(&loc.r, &loc.dpsipsi),
                    dot(&loc.r, &loc.dpsiphi),
                    dot(&loc.r, &loc.dpsiphi),
                    dot(&loc.r, &loc.dphiphi),
                );
            let scale = jtj.trace().max(1e-300);
            let step = [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 1.0]
                .iter()
                .find_map(|&lam| (hess + Matrix2::identity() * (lam * scale)).cholesky())
                .or_else(|| jtj.cholesky())
                .map(|c| c.solve(&(-grad)))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let (p, q) = (psi + t * step[0], phi + t * step[1]);
                let trial = self.local(x, p, q);
                let c = 0.5 * dot(&trial.r, &trial.r);
                let armijo = c <= cost + 1e-4 * t * grad.dot(&step);
                // At rounding level the cost no longer resolves progress.
                let flat = c <= cost * (1.0 + 1e-8) + 1e-300 && gradient(&trial).norm() < grad.norm();
                if armijo || flat {
                    psi = p;
                    phi = q;
                    loc = trial;
                    cost = c;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        None
    }

    pub fn project(&self, x: &[f64]) -> TorusProjection {
        let (psi, phi, d) = self.coarse(x);
        match self.refine(x, psi, phi) {
            Some((p, q, dist)) if dist <= d + 1e-12 => TorusProjection {
                psi_hat: p,
                phi_hat: q,
                distance: dist,
                coarse_only: false,
            },
            _ => TorusProjection {
                psi_hat: psi,
                phi_hat: phi,
                distance: d,
                coarse_only: true,
            },
        }
    }

    /// `inf_φ ‖x − e^{Aφ}x₀(ψ)‖` at a prescribed `ψ`.
    pub fn distance_at_phase(&self, x: &[f64], psi: f64) -> f64 {
        let y = self.orbit.x0(psi);
        let g = &self.generator;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let n = x.len();
        let mut best = (f64::INFINITY, 0.0);
        let mut ry = vec![0.0; n];
        for (rot, &phi) in self.rotations.iter().zip(&self.grid) {
            for r in 0..n {
                ry[r] = (0..n).map(|c| rot[(r, c)] * y[c]).sum();
            }
            let d: f64 = ry.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, phi);
            }
        }
        let cost = |phi: f64| -> f64 {
            let ry = g.rotate(phi, &y);
            ry.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let mut phi = best.1;
        let mut c = best.0;
        for _ in 0..MAX_REFINE {
            let ry = g.rotate(phi, &y);
            let ary = g.apply(&ry);
            let aary = g.apply(&ary);
            let r: Vec<f64> = x.iter().zip(&ry).map(|(a, b)| a - b).collect();
            let grad = -dot(&r, &ary);
            if grad.abs() < GRADIENT_TOL {
                break;
            }
            let h = dot(&ary, &ary) - dot(&r, &aary);
            let step = if h > 0.0 { -grad / h } else { -grad.signum() * 1e-3 };
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let trial = cost(phi + t * step);
                if trial <= c {
                    phi += t * step;
                    c = trial;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        c.max(0.0).sqrt()
    }
}

/// One-off projection; see [`TorusProjector`] for repeated use.
pub fn project_to_torus(orbit: &PeriodicOrbit, sys: &EquivariantSystem, x: &[f64]) -> Result<TorusProjection> {
    if x.len() != orbit.dim() {
        return Err(Error::InvalidArgument(format!(
            "state has dimension {}, orbit has {}",
            x.len(),
            orbit.dim()
        )));
    }
    Ok(TorusProjector::new(orbit, sys.generator())?.project(x))
}

/// Uniform output spacing for a forcing with modulation frequency `beta`.
pub fn sample_spacing(beta: f64) -> f64 {
    2.0 * PI / beta / SAMPLES_PER_PERIOD as f64
}

/// Integrates `x' = f(x) + γ g(x, βt, αt)` on `[0, T]` and samples it
/// uniformly with [`SAMPLES_PER_PERIOD`] points per modulation period.
pub fn simulate_forced(
    sys: &EquivariantSystem,
    alpha: f64,
    beta: f64,
    gamma: f64,
    x_init: &[f64],
    t_final: f64,
    tol: f64,
) -> Result<Trajectory> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidFrequency(format!("beta must be positive, got {beta}")));
    }
    simulate_forced_with_spacing(sys, alpha, beta, gamma, x_init, t_final, tol, sample_spacing(beta))
}

/// As [`simulate_forced`] with an explicit sample spacing.
#[allow(clippy::too_many_arguments)]
pub fn simulate_forced_with_spacing(
    sys: &EquivariantSystem,
    alpha: f64,
    beta: f64,
    gamma: f64,
    x_init: &[f64],
    t_final: f64,
    tol: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidFrequency(format!("alpha must be positive, got {alpha}")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter {
            name: "gamma".into(),
            reason: format!("must be non-negative, got {gamma}"),
        });
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    if !(tol > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument("tolerance and spacing must be positive".into()));
    }
    if x_init.len() != sys.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has dimension {}, system has {}",
            x_init.len(),
            sys.dim()
        )));
    }
    let mut samples: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .take_while(|&t| t < t_final - 1e-6 * dt)
        .collect();
    samples.push(t_final);
    let mut h_max = 2.0 * PI / beta.abs().max(1e-300) / 8.0;
    if gamma > 0.0 && sys.forcing_depends_on_fast_phase() {
        h_max = h_max.min(2.0 * PI / alpha / 8.0);
    }
    let integrator = Integrator::new(tol, tol * 1e-2).with_h_max(h_max);
    let buf = RefCell::new(vec![0.0; sys.dim()]);
    let field = |t: f64, x: &[f64], out: &mut [f64]| {
        sys.f_into(x, out);
        if gamma != 0.0 {
            let mut g = buf.borrow_mut();
            sys.g_into(x, beta * t, alpha * t, &mut g);
            for (o, v) in out.iter_mut().zip(g.iter()) {
                *o += gamma * v;
            }
        }
    };
    integrator.integrate_sampled(field, x_init, (0.0, t_final), &samples)
}

/// Thresholds of the lock verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub window_fraction: f64,
    /// `None` ⇒ `1e-4·β`.
    pub drift_tol: Option<f64>,
    /// Bound on the torus residual; `None` leaves it out of the verdict.
    pub residual_tol: Option<f64>,
    /// Bound on the deviation of `ψ̂ − βt` from its fitted line.
    pub phase_tol: f64,
    pub detach: f64,
    /// Minimum number of modulation periods spanned by the tail window.
    pub min_tail_periods: f64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            window_fraction: 0.3,
            drift_tol: None,
            residual_tol: None,
            phase_tol: 0.5 * PI,
            detach: 0.5,
            min_tail_periods: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockParameters {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockDiagnosis {
    pub schema_version: u32,
    pub kind: String,
    pub locked: bool,
    /// Trajectory left the torus neighbourhood in the tail window.
    pub diverged: bool,
    pub sigma: f64,
    pub drift_rate: f64,
    pub residual: f64,
    /// Largest deviation of `ψ̂ − βt` from the fitted line over the tail.
    pub phase_residual: f64,
    pub transient_time: f64,
    pub max_distance: f64,
    pub drift_tol: f64,
    pub residual_tol: Option<f64>,
    pub params: LockParameters,
}

/// Point of the phase time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    /// Unwrapped `ψ̂(t) − βt`.
    pub phase_offset: f64,
    pub distance: f64,
}

/// Unwrapped torus phase along the trajectory samples with `t ≥ t_from`.
pub fn phase_series(
    projector: &TorusProjector<'_>,
    traj: &Trajectory,
    beta: f64,
    t_from: f64,
) -> Vec<PhasePoint> {
    let idx: Vec<usize> = (0..traj.len()).filter(|&i| traj.times()[i] >= t_from).collect();
    let proj: Vec<TorusProjection> = idx.par_iter().map(|&i| projector.project(traj.state(i))).collect();
    let mut out = Vec::with_capacity(idx.len());
    let mut prev: Option<f64> = None;
    for (&i, p) in idx.iter().zip(&proj) {
        let raw = p.psi_hat;
        let psi = match prev {
            None => raw,
            Some(last) => last + (raw - last + PI).rem_euclid(2.0 * PI) - PI,
        };
        prev = Some(psi);
        let t = traj.times()[i];
        out.push(PhasePoint {
            t,
            phase_offset: psi - beta * t,
            distance: p.distance,
        });
    }
    out
}

/// Least-squares slope and intercept of `y` against `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Lock verdict from the tail of a forced trajectory.
pub fn diagnose_lock(
    orbit: &PeriodicOrbit,
    sys: &EquivariantSystem,
    traj: &Trajectory,
    params: LockParameters,
    opts: &DiagnoseOptions,
) -> Result<LockDiagnosis> {
    let beta = params.beta;
    if !(beta > 0.0) {
        return Err(Error::InvalidFrequency(format!("beta must be positive, got {beta}")));
    }
    if !(opts.window_fraction > 0.0 && opts.window_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window fraction must lie in (0, 1], got {}",
            opts.window_fraction
        )));
    }
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let transient_time = t1 - opts.window_fraction * (t1 - t0);
    let tail_periods = (t1 - transient_time) * beta / (2.0 * PI);
    if tail_periods < opts.min_tail_periods {
        return Err(Error::InvalidArgument(format!(
            "tail window spans {tail_periods:.2} modulation periods, need {}",
            opts.min_tail_periods
        )));
    }
    let drift_tol = opts.drift_tol.unwrap_or(1e-4 * beta);
    let residual_tol = opts.residual_tol;
    let projector = TorusProjector::new(orbit, sys.generator())?;
    let series = phase_series(&projector, traj, beta, transient_time);
    if series.len() < 2 {
        return Err(Error::InvalidArgument("tail window holds fewer than two samples".into()));
    }
    let max_distance = series.iter().map(|p| p.distance).fold(0.0, f64::max);
    let times: Vec<f64> = series.iter().map(|p| p.t).collect();
    let offsets: Vec<f64> = series.iter().map(|p| p.phase_offset).collect();
    let (drift_rate, intercept) = linear_fit(&times, &offsets);
    let mid = 0.5 * (times[0] + times[times.len() - 1]);
    let sigma_raw = intercept + drift_rate * mid;
    let sigma = sigma_raw - 2.0 * PI * ((sigma_raw + PI) / (2.0 * PI)).floor();
    let phase_residual = times
        .iter()
        .zip(&offsets)
        .map(|(t, y)| (y - intercept - drift_rate * t).abs())
        .fold(0.0, f64::max);
    let diverged = !max_distance.is_finite() || max_distance > opts.detach;
    let residual = {
        let idx: Vec<usize> = (0..traj.len()).filter(|&i| traj.times()[i] >= transient_time).collect();
        idx.par_iter()
            .map(|&i| {
                let t = traj.times()[i];
                projector.distance_at_phase(traj.state(i), beta * t + sigma)
            })
            .reduce(|| 0.0, f64::max)
    };
    let locked = !diverged
        && drift_rate.abs() < drift_tol
        && phase_residual < opts.phase_tol
        && residual_tol.is_none_or(|tol| residual < tol);
    Ok(LockDiagnosis {
        schema_version: DIAGNOSIS_SCHEMA_VERSION,
        kind: "lock_diagnosis".into(),
        locked,
        diverged,
        sigma,
        drift_rate,
        residual,
        phase_residual,
        transient_time,
        max_distance,
        drift_tol,
        residual_tol,
        params,
    })
}

/// Simulates for `periods` modulation periods from `x_init` and diagnoses.
pub fn verify_point(
    orbit: &PeriodicOrbit,
    sys: &EquivariantSystem,
    params: LockParameters,
    x_init: &[f64],
    periods: f64,
    tol: f64,
    opts: &DiagnoseOptions,
) -> Result<LockDiagnosis> {
    let t_final = periods * 2.0 * PI / params.beta;
    let dt = sample_spacing(params.beta.max(orbit.beta0()));
    let traj = simulate_forced_with_spacing(
        sys,
        params.alpha,
        params.beta,
        params.gamma,
        x_init,
        t_final,
        tol,
        dt,
    )?;
    diagnose_lock(orbit, sys, &traj, params, opts)
}
