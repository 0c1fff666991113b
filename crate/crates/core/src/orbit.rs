//! Relative periodic orbits as 2π-periodic solutions of the co-rotating
//! system, found by Newton shooting, and their Floquet structure.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::Integrator;
use crate::system::{EquivariantSystem, SystemDescriptor};
use crate::trig::{uniform_grid, TrigInterpolant};

pub const ORBIT_SCHEMA_VERSION: u32 = 1;

/// Tolerance for counting a multiplier as one of the trivial pair.
pub const TRIVIAL_MULTIPLIER_TOL: f64 = 1e-6;

/// Minimum angle between `q₁` and `q₂` accepted as linearly independent.
pub const MIN_TANGENT_ANGLE: f64 = 1e-3;

/// `dy/dψ = (f(y) − α₀Ay)/β₀`.
#[derive(Clone, Copy)]
pub struct CorotatingField<'a> {
    sys: &'a EquivariantSystem,
    alpha0: f64,
    beta0: f64,
}

pub fn corotating_field(
    sys: &EquivariantSystem,
    alpha0: f64,
    beta0: f64,
) -> Result<CorotatingField<'_>> {
    if !(beta0 > 0.0) || !beta0.is_finite() {
        return Err(Error::InvalidFrequency(format!(
            "modulation frequency must be positive, got {beta0}"
        )));
    }
    if !alpha0.is_finite() {
        return Err(Error::InvalidFrequency(format!(
            "wave frequency must be finite, got {alpha0}"
        )));
    }
    Ok(CorotatingField { sys, alpha0, beta0 })
}

impl CorotatingField<'_> {
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        self.sys.f_into(y, out);
        let a = self.sys.generator().matrix();
        for r in 0..n {
            let ay: f64 = (0..n).map(|c| a[(r, c)] * y[c]).sum();
            out[r] = (out[r] - self.alpha0 * ay) / self.beta0;
        }
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.eval_into(y, &mut out);
        out
    }

    /// `(f′(y) − α₀A)/β₀`.
    pub fn jacobian_into(&self, y: &[f64], out: &mut DMatrix<f64>) {
        self.sys.f_jac_into(y, out);
        let a = self.sys.generator().matrix();
        *out -= a * self.alpha0;
        *out /= self.beta0;
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let n = y.len();
        let mut m = DMatrix::zeros(n, n);
        self.jacobian_into(y, &mut m);
        m
    }

    /// Closure form `(ψ, y, dy)` for the integrator.
    pub fn as_fn(&self) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        move |_psi, y, dy| self.eval_into(y, dy)
    }

    pub fn jacobian_fn(&self) -> impl Fn(f64, &[f64], &mut DMatrix<f64>) + '_ {
        move |_psi, y, j| self.jacobian_into(y, j)
    }
}

/// Where ψ = 0 sits on the converged orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAnchor {
    /// Keep the point selected by the phase conditions at the seed.
    #[default]
    Seed,
    /// Move ψ = 0 to the maximum of ‖x₀(ψ)‖² and rotate the group phase so
    /// that the second coordinate of the first rotation plane vanishes there.
    NormMaximum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    pub n_psi: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub anchor: PhaseAnchor,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-9,
            max_iter: 25,
            n_psi: 512,
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            anchor: PhaseAnchor::Seed,
        }
    }
}

impl OrbitOptions {
    fn integrator(&self) -> Integrator {
        Integrator::new(self.rel_tol, self.abs_tol)
    }
}

/// Seed for [`find_orbit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSeed {
    pub state: Vec<f64>,
    pub alpha0: f64,
    pub beta0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOptions {
    /// Starting point; falls back to the system's registered initial state.
    pub initial_state: Option<Vec<f64>>,
    /// Wave frequency of the frame used for the transient; falls back to the
    /// system parameter `alpha0`, then 0.
    pub alpha_hint: Option<f64>,
    pub transient: f64,
    pub window: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SeedOptions {
    fn default() -> Self {
        Self {
            initial_state: None,
            alpha_hint: None,
            transient: 20000.0,
            window: 3000.0,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Golden-section maximization of `h` on `[a, b]`.
fn golden_max(h: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    while (b - a).abs() > tol {
        if hc > hd {
            b = d;
            d = c;
            hd = hc;
            c = b - r * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + r * (b - a);
            hd = h(d);
        }
    }
    0.5 * (a + b)
}

/// Group angle `ξ` minimizing `‖to − e^{Aξ} from‖`.
fn best_rotation(sys: &EquivariantSystem, from: &[f64], to: &[f64]) -> f64 {
    let gen = sys.generator();
    let score = |xi: f64| -> f64 {
        let r = gen.rotate(xi, from);
        -r.iter().zip(to).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let m = 720;
    let (mut best, mut best_s) = (0.0, f64::NEG_INFINITY);
    for k in 0..m {
        let xi = 2.0 * PI * k as f64 / m as f64;
        let s = score(xi);
        if s > best_s {
            best_s = s;
            best = xi;
        }
    }
    let step = 2.0 * PI / m as f64;
    golden_max(score, best - step, best + step, 1e-13)
}

/// Long transient integration in a frame rotating at the hinted wave
/// frequency, then period and drift estimation from successive maxima of
/// `‖x‖²` (a rotation-invariant Poincaré section).
pub fn seed_from_transient(sys: &EquivariantSystem, opts: &SeedOptions) -> Result<OrbitSeed> {
    let n = sys.dim();
    let x_init = match (&opts.initial_state, sys.initial_state()) {
        (Some(x), _) => x.clone(),
        (None, Some(x)) => x.to_vec(),
        (None, None) => vec![0.5; n],
    };
    if x_init.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has length {}, expected {n}",
            x_init.len()
        )));
    }
    if !(opts.transient >= 0.0) || !(opts.window > 0.0) {
        return Err(Error::InvalidArgument(
            "transient must be non-negative and window positive".into(),
        ));
    }
    let alpha_hint = opts.alpha_hint.or(sys.param("alpha0")).unwrap_or(0.0);
    let frame = corotating_field(sys, alpha_hint, 1.0)?;
    let integ = Integrator::new(opts.rel_tol, opts.abs_tol);
    let start = integ.integrate_final(frame.as_fn(), &x_init, (0.0, opts.transient))?;
    let traj = integ.integrate(frame.as_fn(), &start, (0.0, opts.window))?;

    let samples = 40_000usize;
    let dt = opts.window / samples as f64;
    let values: Vec<f64> = (0..=samples).map(|k| norm2(&traj.eval(k as f64 * dt))).collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi - lo > 1e-8 * hi.max(1.0)) {
        return Err(Error::DegenerateOrbit(
            "transient shows no modulation (equilibrium or pure rotation)".into(),
        ));
    }
    let level = 0.5 * (lo + hi);
    let mut peaks = Vec::new();
    for k in 1..samples {
        if values[k] > level && values[k] >= values[k - 1] && values[k] > values[k + 1] {
            let t = golden_max(
                |t| norm2(&traj.eval(t)),
                (k - 1) as f64 * dt,
                (k + 1) as f64 * dt,
                1e-12 * opts.window.max(1.0),
            );
            peaks.push(t);
        }
    }
    if peaks.len() < 3 {
        return Err(Error::DegenerateOrbit(format!(
            "found {} maxima in the observation window; increase it",
            peaks.len()
        )));
    }
    let t2 = peaks[peaks.len() - 1];
    let t1 = peaks[peaks.len() - 2];
    let period = t2 - t1;
    let y1 = traj.eval(t1);
    let y2 = traj.eval(t2);
    let xi = wrap_pi(best_rotation(sys, &y1, &y2));
    Ok(OrbitSeed {
        state: y2,
        alpha0: alpha_hint + xi / period,
        beta0: 2.0 * PI / period,
    })
}

/// Shooting map with sensitivities: returns `y(2π)` and the `n × (n+2)`
/// matrix `[∂y/∂y₀ | ∂y/∂α | ∂y/∂β]`.
fn shoot(
    sys: &EquivariantSystem,
    integ: &Integrator,
    y0: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = y0.len();
    corotating_field(sys, alpha, beta)?;
    let a = sys.generator().matrix().clone();
    let aug_field = |_psi: f64, w: &[f64], dw: &mut [f64]| {
        let co = CorotatingField {
            sys,
            alpha0: w[n],
            beta0: w[n + 1],
        };
        co.eval_into(&w[..n], &mut dw[..n]);
        dw[n] = 0.0;
        dw[n + 1] = 0.0;
    };
    let aug_jac = |_psi: f64, w: &[f64], j: &mut DMatrix<f64>| {
        let (al, be) = (w[n], w[n + 1]);
        let y = &w[..n];
        let co = CorotatingField {
            sys,
            alpha0: al,
            beta0: be,
        };
        let mut top = DMatrix::zeros(n, n);
        co.jacobian_into(y, &mut top);
        let fy = co.eval(y);
        j.fill(0.0);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = top[(r, c)];
            }
            let ay: f64 = (0..n).map(|c| a[(r, c)] * y[c]).sum();
            j[(r, n)] = -ay / be;
            j[(r, n + 1)] = -fy[r] / be;
        }
    };
    let mut w0 = y0.to_vec();
    w0.push(alpha);
    w0.push(beta);
    let (traj, path) = integ.integrate_with_variational(aug_field, aug_jac, &w0, (0.0, 2.0 * PI))?;
    let end = traj.final_state()[..n].to_vec();
    let omega = path.final_matrix();
    let sens = omega.rows(0, n).into_owned();
    Ok((end, sens))
}

struct NewtonState {
    y0: Vec<f64>,
    alpha: f64,
    beta: f64,
    residual: DVector<f64>,
    sens: DMatrix<f64>,
    norm: f64,
}

fn newton_state(
    sys: &EquivariantSystem,
    integ: &Integrator,
    y0: Vec<f64>,
    alpha: f64,
    beta: f64,
    q1s: &[f64],
    aseed: &[f64],
    seed: &[f64],
) -> Result<NewtonState> {
    let n = y0.len();
    let (end, sens) = shoot(sys, integ, &y0, alpha, beta)?;
    let mut r = DVector::zeros(n + 2);
    for i in 0..n {
        r[i] = end[i] - y0[i];
    }
    let dy: Vec<f64> = y0.iter().zip(seed).map(|(a, b)| a - b).collect();
    r[n] = dot(q1s, &dy);
    r[n + 1] = dot(aseed, &dy);
    let norm = r.amax();
    if !norm.is_finite() {
        return Err(Error::NonFiniteField {
            context: "in the shooting residual".into(),
        });
    }
    Ok(NewtonState {
        y0,
        alpha,
        beta,
        residual: r,
        sens,
        norm,
    })
}

/// The converged relative periodic orbit on a uniform ψ grid.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    record: OrbitRecord,
    interp: TrigInterpolant,
}

/// Serializable form of [`PeriodicOrbit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitRecord {
    pub schema_version: u32,
    pub kind: String,
    #[serde(default)]
    pub system: Option<SystemDescriptor>,
    pub alpha0: f64,
    pub beta0: f64,
    pub psi_grid: Vec<f64>,
    pub x0_values: Vec<Vec<f64>>,
    pub q1_values: Vec<Vec<f64>>,
    pub q2_values: Vec<Vec<f64>>,
    /// Row-major monodromy of the co-rotating variational equation.
    pub monodromy: Vec<Vec<f64>>,
    /// `[re, im]` pairs sorted by decreasing modulus.
    pub multipliers: Vec<Complex64>,
    pub newton_residuals: Vec<f64>,
    pub closure_error: f64,
}

impl PeriodicOrbit {
    pub fn from_record(record: OrbitRecord) -> Result<Self> {
        if record.schema_version != ORBIT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "orbit schema version {} (expected {ORBIT_SCHEMA_VERSION})",
                record.schema_version
            )));
        }
        if record.kind != "periodic_orbit" {
            return Err(Error::Schema(format!("expected a periodic_orbit record, got `{}`", record.kind)));
        }
        let m = record.psi_grid.len();
        if m < 8 {
            return Err(Error::Schema("psi grid needs at least 8 nodes".into()));
        }
        let n = record.x0_values.first().map_or(0, |v| v.len());
        let ok = record.x0_values.len() == m
            && record.q1_values.len() == m
            && record.q2_values.len() == m
            && [&record.x0_values, &record.q1_values, &record.q2_values]
                .iter()
                .all(|vs| vs.iter().all(|v| v.len() == n))
            && record.monodromy.len() == n
            && record.monodromy.iter().all(|r| r.len() == n)
            && record.multipliers.len() == n;
        if !ok || n == 0 {
            return Err(Error::Schema("inconsistent orbit array shapes".into()));
        }
        let grid = uniform_grid(m);
        if grid
            .iter()
            .zip(&record.psi_grid)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Schema("psi grid is not uniform on [0, 2π)".into()));
        }
        if !(record.beta0 > 0.0) {
            return Err(Error::Schema("beta0 must be positive".into()));
        }
        let interp = TrigInterpolant::new(&record.x0_values)?;
        Ok(Self { record, interp })
    }

    pub fn record(&self) -> &OrbitRecord {
        &self.record
    }

    pub fn into_record(self) -> OrbitRecord {
        self.record
    }

    pub fn dim(&self) -> usize {
        self.interp.dim()
    }

    pub fn n_psi(&self) -> usize {
        self.record.psi_grid.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.record.alpha0
    }

    pub fn beta0(&self) -> f64 {
        self.record.beta0
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.record.beta0
    }

    pub fn psi_grid(&self) -> &[f64] {
        &self.record.psi_grid
    }

    pub fn x0_values(&self) -> &[Vec<f64>] {
        &self.record.x0_values
    }

    pub fn q1_values(&self) -> &[Vec<f64>] {
        &self.record.q1_values
    }

    pub fn q2_values(&self) -> &[Vec<f64>] {
        &self.record.q2_values
    }

    pub fn multipliers(&self) -> &[Complex64] {
        &self.record.multipliers
    }

    pub fn monodromy(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| self.record.monodromy[r][c])
    }

    pub fn interpolant(&self) -> &TrigInterpolant {
        &self.interp
    }

    /// Trigonometric interpolant of `x₀` at any ψ.
    pub fn x0(&self, psi: f64) -> Vec<f64> {
        self.interp.eval(psi)
    }

    pub fn x0_into(&self, psi: f64, out: &mut [f64]) {
        self.interp.eval_into(psi, out)
    }

    pub fn x0_derivative(&self, psi: f64) -> Vec<f64> {
        self.interp.eval_derivative(psi, 1)
    }

    /// Replaces the multipliers, for constructing test records.
    pub fn with_multipliers(mut self, multipliers: Vec<Complex64>) -> Self {
        self.record.multipliers = multipliers;
        self
    }

    /// Smallest angle (radians) between the lines spanned by `q₁` and `q₂` on the grid.
    pub fn min_tangent_angle(&self) -> f64 {
        min_tangent_angle(&self.record.q1_values, &self.record.q2_values)
    }

    pub fn system(&self) -> Option<&SystemDescriptor> {
        self.record.system.as_ref()
    }
}

fn min_tangent_angle(q1: &[Vec<f64>], q2: &[Vec<f64>]) -> f64 {
    q1.iter()
        .zip(q2)
        .map(|(a, b)| {
            let na = norm2(a).sqrt();
            let nb = norm2(b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return 0.0;
            }
            let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
            let ang = c.acos();
            ang.min(PI - ang)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Multipliers sorted by decreasing modulus (ties by argument).
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal))
    });
    ev
}

/// Damped Newton shooting for `(y₀, α₀, β₀)`.
pub fn find_orbit(
    sys: &EquivariantSystem,
    seed_state: &[f64],
    seed_alpha0: f64,
    seed_beta0: f64,
    opts: &OrbitOptions,
) -> Result<PeriodicOrbit> {
    let n = sys.dim();
    if seed_state.len() != n {
        return Err(Error::InvalidArgument(format!(
            "seed state has length {}, expected {n}",
            seed_state.len()
        )));
    }
    if opts.n_psi < 8 {
        return Err(Error::InvalidArgument("n_psi must be at least 8".into()));
    }
    let (y0, alpha0, beta0, history) = newton_shooting(sys, seed_state, seed_alpha0, seed_beta0, opts)?;
    let (y0, alpha0, beta0, history) = match opts.anchor {
        PhaseAnchor::Seed => (y0, alpha0, beta0, history),
        PhaseAnchor::NormMaximum => {
            let anchored = anchor_at_norm_maximum(sys, &y0, alpha0, beta0, opts)?;
            let (y, a, b, mut h2) = newton_shooting(sys, &anchored, alpha0, beta0, opts)?;
            let mut h = history;
            h.append(&mut h2);
            (y, a, b, h)
        }
    };
    assemble_orbit(sys, &y0, alpha0, beta0, history, opts)
}

fn newton_shooting(
    sys: &EquivariantSystem,
    seed: &[f64],
    alpha_seed: f64,
    beta_seed: f64,
    opts: &OrbitOptions,
) -> Result<(Vec<f64>, f64, f64, Vec<f64>)> {
    let n = sys.dim();
    let integ = opts.integrator();
    let q1s = corotating_field(sys, alpha_seed, beta_seed)?.eval(seed);
    let aseed = sys.generator().apply(seed);
    if norm2(&q1s) == 0.0 || norm2(&aseed) == 0.0 {
        return Err(Error::DegenerateOrbit(
            "seed is an equilibrium or fixed by the group action".into(),
        ));
    }
    let mut cur = newton_state(sys, &integ, seed.to_vec(), alpha_seed, beta_seed, &q1s, &aseed, seed)?;
    let mut history = vec![cur.norm];
    for _ in 0..opts.max_iter {
        if cur.norm < opts.newton_tol {
            return Ok((cur.y0, cur.alpha, cur.beta, history));
        }
        let mut jm = DMatrix::zeros(n + 2, n + 2);
        for r in 0..n {
            for c in 0..n + 2 {
                jm[(r, c)] = cur.sens[(r, c)] - if r == c { 1.0 } else { 0.0 };
            }
        }
        for c in 0..n {
            jm[(n, c)] = q1s[c];
            jm[(n + 1, c)] = aseed[c];
        }
        let step = jm
            .lu()
            .solve(&(-&cur.residual))
            .ok_or_else(|| Error::NewtonFailure {
                iterations: history.len() - 1,
                history: history.clone(),
            })?;
        let mut lambda = 1.0;
        let mut next = None;
        for _ in 0..=8 {
            let y: Vec<f64> = (0..n).map(|i| cur.y0[i] + lambda * step[i]).collect();
            let al = cur.alpha + lambda * step[n];
            let be = cur.beta + lambda * step[n + 1];
            if be > 0.0 {
                if let Ok(trial) = newton_state(sys, &integ, y, al, be, &q1s, &aseed, seed) {
                    let better = trial.norm < cur.norm;
                    next = Some(trial);
                    if better {
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match next {
            Some(t) => cur = t,
            None => {
                return Err(Error::NewtonFailure {
                    iterations: history.len() - 1,
                    history,
                })
            }
        }
        history.push(cur.norm);
    }
    if cur.norm < opts.newton_tol {
        return Ok((cur.y0, cur.alpha, cur.beta, history));
    }
    Err(Error::NewtonFailure {
        iterations: opts.max_iter,
        history,
    })
}

fn anchor_at_norm_maximum(
    sys: &EquivariantSystem,
    y0: &[f64],
    alpha0: f64,
    beta0: f64,
    opts: &OrbitOptions,
) -> Result<Vec<f64>> {
    let field = corotating_field(sys, alpha0, beta0)?;
    let traj = opts.integrator().integrate(field.as_fn(), y0, (0.0, 2.0 * PI))?;
    let m = 4096;
    let h = 2.0 * PI / m as f64;
    let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
    for k in 0..m {
        let v = norm2(&traj.eval(k as f64 * h));
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    let eval_wrapped = |psi: f64| traj.eval(psi.rem_euclid(2.0 * PI));
    let c = best as f64 * h;
    let psi_star = golden_max(|p| norm2(&eval_wrapped(p)), c - h, c + h, 1e-13);
    let x = eval_wrapped(psi_star);
    Ok(match sys.generator().first_plane() {
        Some((i, j, rate)) if x[i].hypot(x[j]) > 0.0 => {
            let angle = x[j].atan2(x[i]);
            sys.generator().rotate(-angle / rate, &x)
        }
        _ => x,
    })
}

fn assemble_orbit(
    sys: &EquivariantSystem,
    y0: &[f64],
    alpha0: f64,
    beta0: f64,
    history: Vec<f64>,
    opts: &OrbitOptions,
) -> Result<PeriodicOrbit> {
    let n = sys.dim();
    let field = corotating_field(sys, alpha0, beta0)?;
    let integ = opts.integrator();
    let grid = uniform_grid(opts.n_psi);
    let (traj, path) = integ.integrate_with_variational(field.as_fn(), field.jacobian_fn(), y0, (0.0, 2.0 * PI))?;
    let closure_error = traj
        .final_state()
        .iter()
        .zip(y0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let monodromy = path.final_matrix().clone();
    let x0_values: Vec<Vec<f64>> = grid.iter().map(|&p| traj.eval(p)).collect();
    let q1_values: Vec<Vec<f64>> = x0_values.iter().map(|x| field.eval(x)).collect();
    let q2_values: Vec<Vec<f64>> = x0_values.iter().map(|x| sys.generator().apply(x)).collect();
    let angle = min_tangent_angle(&q1_values, &q2_values);
    if !(angle > MIN_TANGENT_ANGLE) {
        return Err(Error::DegenerateOrbit(format!(
            "q1 and q2 are nearly parallel (min angle {angle:e} rad)"
        )));
    }
    let multipliers = sorted_eigenvalues(&monodromy);
    let record = OrbitRecord {
        schema_version: ORBIT_SCHEMA_VERSION,
        kind: "periodic_orbit".into(),
        system: sys.descriptor().cloned(),
        alpha0,
        beta0,
        psi_grid: grid,
        x0_values,
        q1_values,
        q2_values,
        monodromy: (0..n).map(|r| (0..n).map(|c| monodromy[(r, c)]).collect()).collect(),
        multipliers,
        newton_residuals: history,
        closure_error,
    };
    PeriodicOrbit::from_record(record)
}

/// Monodromy of `dy/dψ = (f′(x₀(ψ)) − α₀A)/β₀ · y` over `[0, 2π]` and its
/// eigenvalues sorted by decreasing modulus. The orbit is re-traced from
/// `x₀(0)` jointly with the variational equation.
pub fn floquet(
    orbit: &PeriodicOrbit,
    sys: &EquivariantSystem,
    integ: &Integrator,
) -> Result<(DMatrix<f64>, Vec<Complex64>)> {
    let field = corotating_field(sys, orbit.alpha0(), orbit.beta0())?;
    let (_, path) = integ.integrate_with_variational(
        field.as_fn(),
        field.jacobian_fn(),
        &orbit.x0_values()[0],
        (0.0, 2.0 * PI),
    )?;
    let m = path.final_matrix().clone();
    let ev = sorted_eigenvalues(&m);
    Ok((m, ev))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pass: bool,
    pub trivial_count: usize,
    pub max_nontrivial_modulus: f64,
    pub margin: f64,
    pub multipliers: Vec<Complex64>,
}

/// Two multipliers within 1e-6 of 1 and the rest inside `|λ| ≤ 1 − margin`.
pub fn verify_stability(orbit: &PeriodicOrbit, margin: f64) -> StabilityReport {
    stability_of(orbit.multipliers(), margin)
}

pub fn stability_of(multipliers: &[Complex64], margin: f64) -> StabilityReport {
    let one = Complex64::new(1.0, 0.0);
    let mut dist: Vec<(f64, usize)> = multipliers
        .iter()
        .enumerate()
        .map(|(i, m)| ((m - one).norm(), i))
        .collect();
    dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let trivial_count = dist.iter().filter(|d| d.0 < TRIVIAL_MULTIPLIER_TOL).count();
    let max_nontrivial_modulus = dist
        .iter()
        .skip(2.min(dist.len()))
        .map(|d| multipliers[d.1].norm())
        .fold(0.0, f64::max);
    StabilityReport {
        pass: trivial_count == 2 && max_nontrivial_modulus <= 1.0 - margin,
        trivial_count,
        max_nontrivial_modulus,
        margin,
        multipliers: multipliers.to_vec(),
    }
}

/// Seeds from the closed-form orbit when the system has one, otherwise from
/// a transient.
pub fn default_seed(sys: &EquivariantSystem, opts: &SeedOptions) -> Result<OrbitSeed> {
    if sys.name() == "example2" {
        let beta0 = sys.param("beta0").unwrap_or(1.0);
        let alpha0 = sys.param("alpha0").unwrap_or(10.0);
        return Ok(OrbitSeed {
            state: crate::system::Example2Params::x0(0.0).to_vec(),
            alpha0,
            beta0,
        });
    }
    seed_from_transient(sys, opts)
}

/// Default phase anchor for a system: the closed-form example keeps its
/// analytic phase, everything else is anchored at the pulse maximum.
pub fn default_anchor(sys: &EquivariantSystem) -> PhaseAnchor {
    if sys.name() == "example2" {
        PhaseAnchor::Seed
    } else {
        PhaseAnchor::NormMaximum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin, Example2Params};
    use std::collections::BTreeMap;

    fn example2() -> EquivariantSystem {
        builtin("example2", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn corotating_field_matches_closed_form_derivative() {
        let sys = example2();
        let field = corotating_field(&sys, 10.0, 1.0).unwrap();
        for psi in [0.0, 0.3, 2.0, 4.5] {
            let v = field.eval(&Example2Params::x0(psi));
            let d = Example2Params::dx0(psi);
            for k in 0..4 {
                assert!((v[k] - d[k]).abs() < 1e-13, "{psi} {k}");
            }
        }
    }

    #[test]
    fn corotating_field_reduces_to_f() {
        let sys = example2();
        let field = corotating_field(&sys, 0.0, 1.0).unwrap();
        let x = [0.3, -0.2, 0.5, 0.9];
        assert_eq!(field.eval(&x), sys.f_eval(&x));
        assert!(corotating_field(&sys, 0.0, 0.0).is_err());
        assert!(corotating_field(&sys, 0.0, -1.0).is_err());
    }

    #[test]
    fn yamada_off_state_field() {
        let sys = builtin("yamada", &BTreeMap::new()).unwrap();
        let field = corotating_field(&sys, 1.0, 0.5).unwrap();
        let v = field.eval(&[3.0, 2.0, 0.0, 0.0]);
        assert!((v[0] - 0.04 * (7.0 - 3.0) / 0.5).abs() < 1e-15);
        assert!((v[1] - 0.04 * (5.8 - 2.0) / 0.5).abs() < 1e-15);
        assert_eq!(&v[2..], &[0.0, 0.0]);
    }

    #[test]
    fn example2_orbit_from_analytic_seed() {
        let sys = example2();
        let opts = OrbitOptions {
            n_psi: 64,
            ..OrbitOptions::default()
        };
        let orbit = find_orbit(&sys, &Example2Params::x0(0.0), 10.0, 1.0, &opts).unwrap();
        assert!(orbit.record().newton_residuals.len() <= 3);
        assert!((orbit.beta0() - 1.0).abs() < 1e-10);
        assert!((orbit.alpha0() - 10.0).abs() < 1e-10);
        for (psi, x) in orbit.psi_grid().iter().zip(orbit.x0_values()) {
            let e = Example2Params::x0(*psi);
            for k in 0..4 {
                assert!((x[k] - e[k]).abs() < 1e-9);
            }
        }
        let rep = verify_stability(&orbit, 0.01);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn hand_edited_multipliers_fail() {
        let sys = example2();
        let opts = OrbitOptions {
            n_psi: 16,
            ..OrbitOptions::default()
        };
        let orbit = find_orbit(&sys, &Example2Params::x0(0.0), 10.0, 1.0, &opts).unwrap();
        let edited = orbit.with_multipliers(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.05, 0.0),
            Complex64::new(0.3, 0.0),
        ]);
        assert!(!verify_stability(&edited, 0.01).pass);
    }

    #[test]
    fn wrap_and_rotation_helpers() {
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        let sys = example2();
        let x = [0.1, 0.2, 0.8, -0.3];
        let y = sys.generator().rotate(0.7, &x);
        assert!((best_rotation(&sys, &x, &y) - 0.7).abs() < 1e-9);
    }
}
