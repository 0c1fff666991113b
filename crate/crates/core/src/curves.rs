//! Locking curves `G₁`/`G₂`, singular sets, cone cross-sections and phase
//! equilibria.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointPair;
use crate::averaging::{max_g1_norm, ForcingAverages, PhiGrid, DEGENERACY_TOL};
use crate::error::{Error, Result};
use crate::orbit::PeriodicOrbit;
use crate::system::EquivariantSystem;
use crate::trig::{uniform_grid, TrigInterpolant};

pub const CURVE_SCHEMA_VERSION: u32 = 1;

/// Default `|G″|` threshold for non-degenerate critical points.
pub const SECOND_DERIVATIVE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub n_psi: usize,
    pub n_theta: usize,
    pub phi_grid: PhiGrid,
    pub second_deriv_threshold: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            n_psi: 512,
            n_theta: 512,
            phi_grid: PhiGrid::default(),
            second_deriv_threshold: SECOND_DERIVATIVE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    pub schema_version: u32,
    pub kind: String,
    pub order: u8,
    pub psi_grid: Vec<f64>,
    pub g_values: Vec<f64>,
    pub g_plus: f64,
    pub g_minus: f64,
    pub singular_points: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub second_derivatives: Vec<f64>,
    pub nondegenerate: bool,
}

/// Sampled locking curve with its trigonometric interpolant.
#[derive(Debug, Clone)]
pub struct LockingCurve {
    record: CurveRecord,
    interp: TrigInterpolant,
}

impl LockingCurve {
    /// Builds a curve from samples on a uniform grid and computes its
    /// singular data.
    pub fn from_samples(order: u8, g_values: Vec<f64>, threshold: f64) -> Result<Self> {
        if g_values.len() < 8 {
            return Err(Error::InvalidArgument("curve needs at least 8 samples".into()));
        }
        if g_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField {
                context: "in the locking curve samples".into(),
            });
        }
        let interp = TrigInterpolant::scalar(&g_values)?;
        let psi_grid = uniform_grid(g_values.len());
        let mut curve = Self {
            record: CurveRecord {
                schema_version: CURVE_SCHEMA_VERSION,
                kind: "locking_curve".into(),
                order,
                psi_grid,
                g_values,
                g_plus: f64::NAN,
                g_minus: f64::NAN,
                singular_points: Vec::new(),
                singular_values: Vec::new(),
                second_derivatives: Vec::new(),
                nondegenerate: false,
            },
            interp,
        };
        curve.refresh_singular(threshold)?;
        Ok(curve)
    }

    pub fn from_record(record: CurveRecord) -> Result<Self> {
        if record.schema_version != CURVE_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "curve schema version {} (expected {CURVE_SCHEMA_VERSION})",
                record.schema_version
            )));
        }
        if record.kind != "locking_curve" {
            return Err(Error::Schema(format!("expected a locking_curve record, got `{}`", record.kind)));
        }
        if record.psi_grid.len() != record.g_values.len() || record.g_values.len() < 8 {
            return Err(Error::Schema("inconsistent curve array shapes".into()));
        }
        if record.order != 1 && record.order != 2 {
            return Err(Error::Schema(format!("curve order must be 1 or 2, got {}", record.order)));
        }
        let interp = TrigInterpolant::scalar(&record.g_values)?;
        Ok(Self { record, interp })
    }

    fn refresh_singular(&mut self, threshold: f64) -> Result<()> {
        let (points, values, second) = critical_points(self)?;
        let (mut gp, mut gm) = self
            .record
            .g_values
            .iter()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), &v| (h.max(v), l.min(v)));
        for &v in &values {
            gp = gp.max(v);
            gm = gm.min(v);
        }
        self.record.g_plus = gp;
        self.record.g_minus = gm;
        self.record.nondegenerate =
            !points.is_empty() && second.iter().all(|d| d.abs() > threshold);
        self.record.singular_points = points;
        self.record.singular_values = values;
        self.record.second_derivatives = second;
        Ok(())
    }

    pub fn record(&self) -> &CurveRecord {
        &self.record
    }

    pub fn into_record(self) -> CurveRecord {
        self.record
    }

    pub fn order(&self) -> u8 {
        self.record.order
    }

    pub fn psi_grid(&self) -> &[f64] {
        &self.record.psi_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.record.g_values
    }

    pub fn g_plus(&self) -> f64 {
        self.record.g_plus
    }

    pub fn g_minus(&self) -> f64 {
        self.record.g_minus
    }

    pub fn singular_points(&self) -> &[f64] {
        &self.record.singular_points
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.record.singular_values
    }

    pub fn nondegenerate(&self) -> bool {
        self.record.nondegenerate
    }

    pub fn eval(&self, psi: f64) -> f64 {
        self.interp.eval(psi)[0]
    }

    pub fn derivative(&self, psi: f64, order: u32) -> f64 {
        self.interp.eval_derivative(psi, order)[0]
    }

    /// Complex Fourier coefficient of `e^{ikψ}`, `0 ≤ k ≤ N/2`.
    pub fn coefficient(&self, k: usize) -> num_complex::Complex64 {
        self.interp.coefficient(k, 0)
    }

    /// Coefficients of `G_c cos ψ + G_s sin ψ` in the first harmonic.
    pub fn first_harmonic(&self) -> (f64, f64) {
        let c = self.coefficient(1);
        (2.0 * c.re, -2.0 * c.im)
    }
}

/// Reduces an angle to `[0, 2π)`, folding values just below 2π onto 0.
fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if 2.0 * PI - r < 1e-12 {
        0.0
    } else {
        r
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `G(ψ) = (1/2π) ∫ p₁ᵀ(ψ+θ) g_m(x₀(ψ+θ), θ) dθ` on uniform ψ and θ grids.
pub fn g_curve(
    orbit: &PeriodicOrbit,
    pair: &AdjointPair,
    sys: &EquivariantSystem,
    order: u8,
    opts: &CurveOptions,
) -> Result<LockingCurve> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidArgument(format!("order must be 1 or 2, got {order}")));
    }
    if opts.n_psi < 8 || opts.n_theta < 8 {
        return Err(Error::InvalidArgument("n_psi and n_theta must be at least 8".into()));
    }
    if pair.psi_grid().len() != orbit.n_psi() {
        return Err(Error::GridMismatch(format!(
            "adjoint grid has {} nodes, orbit grid {}",
            pair.psi_grid().len(),
            orbit.n_psi()
        )));
    }
    if order == 2 {
        let max_g1 = max_g1_norm(sys, 50, 0)?;
        if !(max_g1 < DEGENERACY_TOL) {
            return Err(Error::WrongBranch { max_g1 });
        }
    }
    let averages = ForcingAverages::new(sys, opts.phi_grid);
    let (np, nt) = (opts.n_psi, opts.n_theta);
    let lcm = np / gcd(np, nt) * nt;
    let thetas = uniform_grid(nt);
    let values: Vec<f64> = if lcm <= 1 << 16 {
        // Every ψ + θ lands on the common refinement of both grids.
        let nodes = uniform_grid(lcm);
        let x0s: Vec<Vec<f64>> = nodes.par_iter().map(|&s| orbit.x0(s)).collect();
        let p1s: Vec<Vec<f64>> = nodes.par_iter().map(|&s| pair.p1(s)).collect();
        let (sp, st) = (lcm / np, lcm / nt);
        (0..np)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut acc = 0.0;
                for (k, &theta) in thetas.iter().enumerate() {
                    let j = (i * sp + k * st) % lcm;
                    let gm = averages.g_order(order, &x0s[j], theta)?;
                    acc += p1s[j].iter().zip(&gm).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(acc / nt as f64)
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        let psis = uniform_grid(np);
        psis.par_iter()
            .map(|&psi| -> Result<f64> {
                let mut acc = 0.0;
                for &theta in &thetas {
                    let s = psi + theta;
                    let gm = averages.g_order(order, &orbit.x0(s), theta)?;
                    acc += pair.p1(s).iter().zip(&gm).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(acc / nt as f64)
            })
            .collect::<Result<Vec<f64>>>()?
    };
    LockingCurve::from_samples(order, values, opts.second_deriv_threshold)
}

/// Critical points of the curve: sign changes of `G′` on a 4× refined grid,
/// polished by safeguarded Newton on `G′`.
fn critical_points(curve: &LockingCurve) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = curve.record.g_values.len();
    let amplitude = curve
        .record
        .g_values
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let m = 4 * n;
    let h = 2.0 * PI / m as f64;
    let d1: Vec<f64> = (0..m).map(|k| curve.derivative(k as f64 * h, 1)).collect();
    let scale = d1.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut points = Vec::new();
    if scale <= 1e-13 * amplitude.max(1.0) {
        // Constant curve: no isolated critical points.
        return Ok((points, Vec::new(), Vec::new()));
    }
    for k in 0..m {
        let (a, b) = (d1[k], d1[(k + 1) % m]);
        if a == 0.0 || (a > 0.0) != (b > 0.0) && b != 0.0 {
            let lo = k as f64 * h;
            let root = polish(|p| curve.derivative(p, 1), |p| curve.derivative(p, 2), lo, lo + h, scale)?;
            points.push(wrap_angle(root));
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if points.len() > 1 && (points[0] + 2.0 * PI - points[points.len() - 1]).abs() < 1e-9 {
        points.pop();
    }
    let values = points.iter().map(|&p| curve.eval(p)).collect();
    let second = points.iter().map(|&p| curve.derivative(p, 2)).collect();
    Ok((points, values, second))
}

/// Root of `h` in a bracket `[a, b]` (sign change or endpoint zero) by Newton
/// steps that fall back to bisection when they leave the bracket.
fn polish(
    h: impl Fn(f64) -> f64,
    dh: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    scale: f64,
) -> Result<f64> {
    let mut ha = h(a);
    if ha == 0.0 {
        return Ok(a);
    }
    let hb = h(b);
    if hb == 0.0 {
        return Ok(b);
    }
    if (ha > 0.0) == (hb > 0.0) {
        // The scan saw a sign change that re-evaluation at the endpoints
        // (e.g. at 2π instead of 0) lost to rounding.
        let (x, hx) = if ha.abs() < hb.abs() { (a, ha) } else { (b, hb) };
        if hx.abs() <= 1e-10 * scale.max(1.0) {
            return Ok(x);
        }
        return Err(Error::CriticalPointFailure { psi: a });
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let hx = h(x);
        if hx.abs() <= 1e-15 * scale.max(1.0) || (b - a) < 1e-15 {
            return Ok(x);
        }
        if (hx > 0.0) == (ha > 0.0) {
            a = x;
            ha = hx;
        } else {
            b = x;
        }
        let d = dh(x);
        let newton = x - hx / d;
        x = if d != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    if (b - a) < 1e-10 {
        Ok(x)
    } else {
        Err(Error::CriticalPointFailure { psi: x })
    }
}

/// Singular values of the curve and whether all critical points are
/// non-degenerate at `threshold`.
pub fn singular_set(curve: &LockingCurve, second_deriv_threshold: f64) -> Result<(Vec<f64>, bool)> {
    let (points, values, second) = critical_points(curve)?;
    let nondegenerate = !points.is_empty() && second.iter().all(|d: &f64| d.abs() > second_deriv_threshold);
    Ok((values, nondegenerate))
}

/// `Δ = (β−β₀)/γ` for order 1, `α(β−β₀)/γ²` for order 2.
pub fn detuning(order: u8, alpha: f64, beta: f64, beta0: f64, gamma: f64) -> f64 {
    match order {
        1 => (beta - beta0) / gamma,
        _ => alpha * (beta - beta0) / (gamma * gamma),
    }
}

/// Scale `γ` (order 1) or `γ²/α` (order 2) of the curve in `β − β₀`.
pub fn detuning_scale(order: u8, alpha: f64, gamma: f64) -> f64 {
    match order {
        1 => gamma,
        _ => gamma * gamma / alpha,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedBand {
    pub singular_value: f64,
    /// `(β − β₀, γ)` points of the lower band edge.
    pub lower: Vec<[f64; 2]>,
    pub upper: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockingCone {
    pub schema_version: u32,
    pub kind: String,
    pub order: u8,
    pub alpha: f64,
    pub epsilon: f64,
    /// Effective γ range after intersecting with `[c₁/α, c₂√α]` for order 2.
    pub gamma_range: [f64; 2],
    pub g_plus: f64,
    pub g_minus: f64,
    /// Left boundary `(β − β₀, γ)` polyline, `G⁻ + ε` branch.
    pub lower: Vec<[f64; 2]>,
    /// Right boundary, `G⁺ − ε` branch.
    pub upper: Vec<[f64; 2]>,
    pub excluded_bands: Vec<ExcludedBand>,
    pub empty: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeOptions {
    pub resolution: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ConeOptions {
    fn default() -> Self {
        Self {
            resolution: 200,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

/// Classification of a `(β, γ)` point against the predicted cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConePrediction {
    Locked,
    Unlocked,
    /// Within `ε` (in Δ units) of a singular value or of the cone edge.
    Indeterminate,
}

/// Predicted verdict at detuning `delta` with margin `epsilon`.
pub fn predict(curve: &LockingCurve, delta: f64, epsilon: f64) -> ConePrediction {
    let (gm, gp) = (curve.g_minus(), curve.g_plus());
    if delta > gm + epsilon && delta < gp - epsilon {
        if curve
            .singular_values()
            .iter()
            .any(|&s| s != gm && s != gp && (delta - s).abs() < epsilon)
        {
            ConePrediction::Indeterminate
        } else {
            ConePrediction::Locked
        }
    } else if delta < gm - epsilon || delta > gp + epsilon {
        ConePrediction::Unlocked
    } else {
        ConePrediction::Indeterminate
    }
}

/// Polylines of the admissible `(β − β₀, γ)` set at fixed α.
pub fn cone_section(
    curve: &LockingCurve,
    alpha: f64,
    epsilon: f64,
    gamma_range: (f64, f64),
    opts: &ConeOptions,
) -> Result<LockingCone> {
    let order = curve.order();
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    if !(gamma_range.0 >= 0.0) || !(gamma_range.1 >= gamma_range.0) {
        return Err(Error::InvalidArgument("gamma range must satisfy 0 <= lo <= hi".into()));
    }
    if opts.resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    let (gp, gm) = (curve.g_plus(), curve.g_minus());
    let mut range = gamma_range;
    let mut warning = None;
    if order == 2 {
        range.0 = range.0.max(opts.c1 / alpha);
        range.1 = range.1.min(opts.c2 * alpha.sqrt());
    }
    let mut cone = LockingCone {
        schema_version: CURVE_SCHEMA_VERSION,
        kind: "locking_cone".into(),
        order,
        alpha,
        epsilon,
        gamma_range: [range.0, range.1],
        g_plus: gp,
        g_minus: gm,
        lower: Vec::new(),
        upper: Vec::new(),
        excluded_bands: Vec::new(),
        empty: false,
        warning: None,
    };
    if epsilon >= 0.5 * (gp - gm) {
        warning = Some(format!(
            "epsilon {epsilon} >= (G+ - G-)/2 = {:e}: the cone is empty",
            0.5 * (gp - gm)
        ));
    } else if range.0 > range.1 {
        warning = Some(format!(
            "gamma range is empty after intersecting with [c1/alpha, c2*sqrt(alpha)] = [{}, {}]",
            opts.c1 / alpha,
            opts.c2 * alpha.sqrt()
        ));
    }
    if let Some(w) = warning {
        cone.empty = true;
        cone.warning = Some(w);
        return Ok(cone);
    }
    let gammas: Vec<f64> = (0..opts.resolution)
        .map(|k| range.0 + (range.1 - range.0) * k as f64 / (opts.resolution - 1) as f64)
        .collect();
    let line = |level: f64| -> Vec<[f64; 2]> {
        gammas
            .iter()
            .map(|&g| [detuning_scale(order, alpha, g) * level, g])
            .collect()
    };
    cone.lower = line(gm + epsilon);
    cone.upper = line(gp - epsilon);
    for &s in curve.singular_values() {
        if s == gp || s == gm {
            continue;
        }
        cone.excluded_bands.push(ExcludedBand {
            singular_value: s,
            lower: line(s - epsilon),
            upper: line(s + epsilon),
        });
    }
    Ok(cone)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEquilibria {
    pub delta: f64,
    pub roots: Vec<f64>,
    pub stable: Vec<bool>,
    pub slopes: Vec<f64>,
}

impl PhaseEquilibria {
    pub fn count(&self) -> usize {
        self.roots.len()
    }
}

/// All solutions of `G(ϑ) = Δ` on `[0, 2π)`, stable iff `G′(ϑ) < 0`.
pub fn equilibria(curve: &LockingCurve, delta: f64, epsilon: f64, root_tol: f64) -> Result<PhaseEquilibria> {
    let (gm, gp) = (curve.g_minus(), curve.g_plus());
    if !(delta > gm && delta < gp) {
        return Err(Error::NoLockingDetuning {
            delta,
            lower: gm,
            upper: gp,
        });
    }
    if let Some(&s) = curve
        .singular_values()
        .iter()
        .find(|&&s| (delta - s).abs() < epsilon)
    {
        return Err(Error::NearSingular {
            delta,
            singular: s,
            epsilon,
        });
    }
    let m = 8 * curve.values().len();
    let h = 2.0 * PI / m as f64;
    let vals: Vec<f64> = (0..m).map(|k| curve.eval(k as f64 * h) - delta).collect();
    let scale = gp - gm;
    let mut roots = Vec::new();
    for k in 0..m {
        let (a, b) = (vals[k], vals[(k + 1) % m]);
        if a == 0.0 || ((a > 0.0) != (b > 0.0) && b != 0.0) {
            let lo = k as f64 * h;
            let r = polish(|p| curve.eval(p) - delta, |p| curve.derivative(p, 1), lo, lo + h, scale)
                .map_err(|_| Error::CriticalPointFailure { psi: lo })?;
            if (curve.eval(r) - delta).abs() > root_tol {
                return Err(Error::CriticalPointFailure { psi: r });
            }
            roots.push(wrap_angle(r));
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let slopes: Vec<f64> = roots.iter().map(|&r| curve.derivative(r, 1)).collect();
    let stable = slopes.iter().map(|&d| d < 0.0).collect();
    Ok(PhaseEquilibria {
        delta,
        roots,
        stable,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_cos(n: usize) -> LockingCurve {
        let v = uniform_grid(n).iter().map(|p| 0.5 * p.cos()).collect();
        LockingCurve::from_samples(2, v, SECOND_DERIVATIVE_THRESHOLD).unwrap()
    }

    #[test]
    fn half_cosine_singular_set() {
        let c = half_cos(64);
        let pts = c.singular_points();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].abs() < 1e-12);
        assert!((pts[1] - PI).abs() < 1e-12);
        let (s, nondeg) = singular_set(&c, 1e-6).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-14 && (s[1] + 0.5).abs() < 1e-14);
        assert!(nondeg);
        for d in &c.record().second_derivatives {
            assert!((d.abs() - 0.5).abs() < 1e-12);
        }
        assert_eq!(c.g_plus(), 0.5);
        assert_eq!(c.g_minus(), -0.5);
    }

    #[test]
    fn half_cosine_equilibria() {
        let c = half_cos(64);
        let e = equilibria(&c, 0.0, 0.05, 1e-12).unwrap();
        assert_eq!(e.count(), 2);
        assert!((e.roots[0] - PI / 2.0).abs() < 1e-12);
        assert!((e.roots[1] - 3.0 * PI / 2.0).abs() < 1e-12);
        assert_eq!(e.stable, vec![true, false]);
        assert!((e.slopes[0] + 0.5).abs() < 1e-12);
        assert!(matches!(equilibria(&c, 0.6, 0.05, 1e-12), Err(Error::NoLockingDetuning { .. })));
        assert!(matches!(equilibria(&c, 0.47, 0.05, 1e-12), Err(Error::NearSingular { .. })));
    }

    #[test]
    fn symmetric_curve_with_epsilon_at_max_is_empty() {
        let c = half_cos(64);
        let cone = cone_section(&c, 100.0, 0.5, (0.1, 1.0), &ConeOptions::default()).unwrap();
        assert!(cone.empty);
        assert!(cone.warning.is_some());
    }

    #[test]
    fn parabolic_cone() {
        let c = half_cos(64);
        let cone = cone_section(&c, 100.0, 0.05, (0.1, 5.0), &ConeOptions::default()).unwrap();
        assert!(!cone.empty);
        for (lo, hi) in cone.lower.iter().zip(&cone.upper) {
            let g = hi[1];
            assert!((hi[0] - g * g / 100.0 * 0.45).abs() < 1e-15);
            assert!((lo[0] + g * g / 100.0 * 0.45).abs() < 1e-15);
        }
        assert_eq!(cone.gamma_range, [0.1, 5.0]);
        let narrow = cone_section(&c, 100.0, 0.05, (0.001, 50.0), &ConeOptions::default()).unwrap();
        assert_eq!(narrow.gamma_range, [0.01, 10.0]);
    }

    #[test]
    fn predictions() {
        let c = half_cos(64);
        assert_eq!(predict(&c, 0.0, 0.05), ConePrediction::Locked);
        assert_eq!(predict(&c, 0.7, 0.05), ConePrediction::Unlocked);
        assert_eq!(predict(&c, 0.48, 0.05), ConePrediction::Indeterminate);
    }

    #[test]
    fn first_harmonic_coefficients() {
        let v: Vec<f64> = uniform_grid(32).iter().map(|p| 1.5 * p.cos() - 2.0 * p.sin()).collect();
        let c = LockingCurve::from_samples(1, v, 1e-6).unwrap();
        let (gc, gs) = c.first_harmonic();
        assert!((gc - 1.5).abs() < 1e-14 && (gs + 2.0).abs() < 1e-14);
        assert!((c.g_plus() - 2.5).abs() < 1e-12);
    }
}
