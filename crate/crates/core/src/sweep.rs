//! Lock/unlock maps over rectangular `(β, γ)` grids at fixed α.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{detuning, LockingCurve};
use crate::error::{Error, Result};
use crate::orbit::PeriodicOrbit;
use crate::system::EquivariantSystem;
use crate::verify::{
    diagnose_lock, sample_spacing, simulate_forced_with_spacing, DiagnoseOptions, LockParameters,
};

pub const LOCK_MAP_SCHEMA_VERSION: u32 = 1;

/// Norm of the initial-condition jitter around `x₀(0)`.
pub const JITTER: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub alpha: f64,
    /// Absolute modulation frequencies `[β_lo, β_hi]`.
    pub beta_range: [f64; 2],
    pub beta_count: usize,
    pub gamma_range: [f64; 2],
    pub gamma_count: usize,
    /// Simulated time; `None` gives [`crate::verify::DEFAULT_PERIODS`]
    /// modulation periods per cell.
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub diagnose: DiagnoseOptions,
    /// Margin for flagging cells near interior singular values.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Thread count; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_epsilon() -> f64 {
    0.05
}

impl SweepSpec {
    pub fn new(alpha: f64, beta_range: [f64; 2], beta_count: usize, gamma_range: [f64; 2], gamma_count: usize) -> Self {
        Self {
            alpha,
            beta_range,
            beta_count,
            gamma_range,
            gamma_count,
            t_final: None,
            tol: default_tol(),
            seed: 0,
            diagnose: DiagnoseOptions::default(),
            epsilon: default_epsilon(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: String| Error::InvalidParameter { name: name.into(), reason };
        if self.beta_count == 0 || self.gamma_count == 0 {
            return Err(bad("count", "grid counts must be at least 1".into()));
        }
        for (name, r, count) in [
            ("beta_range", self.beta_range, self.beta_count),
            ("gamma_range", self.gamma_range, self.gamma_count),
        ] {
            if !r[0].is_finite() || !r[1].is_finite() || r[1] < r[0] {
                return Err(bad(name, format!("{r:?} is not an ordered finite interval")));
            }
            if count > 1 && r[1] == r[0] {
                return Err(bad(name, format!("degenerate interval with {count} points")));
            }
        }
        if self.gamma_range[0] < 0.0 {
            return Err(bad("gamma_range", "gamma must be non-negative".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(bad("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(bad("tol", format!("must be positive, got {}", self.tol)));
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0) {
                return Err(bad("t_final", format!("must be positive, got {t}")));
            }
        }
        if self.workers == Some(0) {
            return Err(bad("workers", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        axis(self.beta_range, self.beta_count)
    }

    pub fn gammas(&self) -> Vec<f64> {
        axis(self.gamma_range, self.gamma_count)
    }
}

fn axis(r: [f64; 2], count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![r[0]];
    }
    (0..count)
        .map(|k| r[0] + (r[1] - r[0]) * k as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Locked,
    Unlocked,
    Diverged,
    NearSingular,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Locked => "locked",
            Verdict::Unlocked => "unlocked",
            Verdict::Diverged => "diverged",
            Verdict::NearSingular => "near_singular",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub beta: f64,
    pub gamma: f64,
    pub verdict: Verdict,
    /// Simulated lock verdict, also kept for near-singular cells.
    pub locked: bool,
    pub drift: Option<f64>,
    pub residual: Option<f64>,
    pub sigma: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockMap {
    pub schema_version: u32,
    pub kind: String,
    pub beta0: f64,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Row-major: `cells[i * betas.len() + j]` is `(betas[j], gammas[i])`.
    pub cells: Vec<Cell>,
    pub spec: SweepSpec,
}

impl LockMap {
    pub fn cell(&self, gamma_index: usize, beta_index: usize) -> &Cell {
        &self.cells[gamma_index * self.betas.len() + beta_index]
    }

    pub fn verdicts(&self) -> Vec<Vec<Verdict>> {
        self.cells
            .chunks(self.betas.len())
            .map(|row| row.iter().map(|c| c.verdict).collect())
            .collect()
    }
}

/// Initial state `x₀(0)` plus a seeded offset of norm [`JITTER`].
pub fn jittered_start(orbit: &PeriodicOrbit, seed: u64, cell: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(cell as u64));
    let n = orbit.dim();
    let dir: Vec<f64> = loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            break v.into_iter().map(|x| x / norm).collect();
        }
    };
    orbit
        .x0(0.0)
        .iter()
        .zip(&dir)
        .map(|(x, d)| x + JITTER * d)
        .collect()
}

fn run_cell(
    sys: &EquivariantSystem,
    orbit: &PeriodicOrbit,
    spec: &SweepSpec,
    curve: Option<&LockingCurve>,
    index: usize,
    beta: f64,
    gamma: f64,
) -> Cell {
    let params = LockParameters {
        alpha: spec.alpha,
        beta,
        gamma,
    };
    let near_singular = curve.is_some_and(|c| {
        gamma > 0.0 && {
            let delta = detuning(c.order(), spec.alpha, beta, orbit.beta0(), gamma);
            let (gm, gp) = (c.g_minus(), c.g_plus());
            c.singular_values()
                .iter()
                .any(|&s| s != gm && s != gp && (delta - s).abs() < spec.epsilon)
        }
    });
    let outcome = (|| -> Result<_> {
        if !(beta > 0.0) {
            return Err(Error::InvalidFrequency(format!("beta must be positive, got {beta}")));
        }
        let t_final = spec.t_final.unwrap_or(crate::verify::DEFAULT_PERIODS * 2.0 * PI / beta);
        let x_init = jittered_start(orbit, spec.seed, index);
        let dt = sample_spacing(beta.max(orbit.beta0()));
        let traj = simulate_forced_with_spacing(sys, spec.alpha, beta, gamma, &x_init, t_final, spec.tol, dt)?;
        diagnose_lock(orbit, sys, &traj, params, &spec.diagnose)
    })();
    match outcome {
        Ok(d) => Cell {
            beta,
            gamma,
            verdict: if d.diverged {
                Verdict::Diverged
            } else if near_singular {
                Verdict::NearSingular
            } else if d.locked {
                Verdict::Locked
            } else {
                Verdict::Unlocked
            },
            locked: d.locked,
            drift: Some(d.drift_rate),
            residual: Some(d.residual),
            sigma: Some(d.sigma),
            error: None,
        },
        Err(e) => Cell {
            beta,
            gamma,
            verdict: Verdict::Diverged,
            locked: false,
            drift: None,
            residual: None,
            sigma: None,
            error: Some(e.to_string()),
        },
    }
}

/// Simulates every cell of the grid. Cells are independent; failures are
/// recorded as diverged and never abort the sweep.
pub fn run_sweep(
    sys: &EquivariantSystem,
    orbit: &PeriodicOrbit,
    spec: &SweepSpec,
    curve: Option<&LockingCurve>,
) -> Result<LockMap> {
    spec.validate()?;
    let betas = spec.betas();
    let gammas = spec.gammas();
    let points: Vec<(usize, f64, f64)> = gammas
        .iter()
        .flat_map(|&g| betas.iter().map(move |&b| (b, g)))
        .enumerate()
        .map(|(k, (b, g))| (k, b, g))
        .collect();
    let work = || -> Vec<Cell> {
        points
            .par_iter()
            .map(|&(k, b, g)| run_cell(sys, orbit, spec, curve, k, b, g))
            .collect()
    };
    let cells = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(LockMap {
        schema_version: LOCK_MAP_SCHEMA_VERSION,
        kind: "lock_map".into(),
        beta0: orbit.beta0(),
        betas,
        gammas,
        cells,
        spec: spec.clone(),
    })
}

/// Edges of the locked interval around `β₀` in one γ row, as offsets
/// `β − β₀` at midpoints between the last locked and first unlocked cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub gamma: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

pub fn boundary_points(map: &LockMap) -> Vec<BoundaryPoint> {
    let nb = map.betas.len();
    let b0 = map.beta0;
    let center = (0..nb)
        .min_by(|&a, &b| {
            (map.betas[a] - b0)
                .abs()
                .partial_cmp(&(map.betas[b] - b0).abs())
                .unwrap()
        })
        .unwrap_or(0);
    map.gammas
        .iter()
        .enumerate()
        .map(|(i, &gamma)| {
            let locked = |j: usize| map.cell(i, j).locked;
            if nb == 0 || !locked(center) {
                return BoundaryPoint { gamma, lower: None, upper: None };
            }
            let mut hi = center;
            while hi + 1 < nb && locked(hi + 1) {
                hi += 1;
            }
            let mut lo = center;
            while lo > 0 && locked(lo - 1) {
                lo -= 1;
            }
            let upper = (hi + 1 < nb).then(|| 0.5 * (map.betas[hi] + map.betas[hi + 1]) - b0);
            let lower = (lo > 0).then(|| 0.5 * (map.betas[lo] + map.betas[lo - 1]) - b0);
            BoundaryPoint { gamma, lower, upper }
        })
        .collect()
}

/// Least-squares `c` in `β − β₀ = c·γ^p` over the resolved boundary points
/// of one side; `None` without data.
pub fn fit_power(points: &[BoundaryPoint], power: i32, upper: bool) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for p in points {
        let b = if upper { p.upper } else { p.lower };
        if let Some(b) = b {
            let x = p.gamma.powi(power);
            num += x * b;
            den += x * x;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub power: i32,
    pub upper_coefficient: Option<f64>,
    pub lower_coefficient: Option<f64>,
    pub points: Vec<BoundaryPoint>,
}

/// Boundary points with their fit for order 1 (linear) or 2 (quadratic).
pub fn summarize(map: &LockMap, order: u8) -> BoundarySummary {
    let points = boundary_points(map);
    let power = if order == 2 { 2 } else { 1 };
    BoundarySummary {
        power,
        upper_coefficient: fit_power(&points, power, true),
        lower_coefficient: fit_power(&points, power, false),
        points,
    }
}

/// Count of nesting violations: a locked cell with an unlocked cell closer
/// to `β₀` on the same side in the same row.
pub fn nesting_violations(map: &LockMap) -> usize {
    let nb = map.betas.len();
    let mut count = 0;
    for i in 0..map.gammas.len() {
        for j in 0..nb {
            if !map.cell(i, j).locked {
                continue;
            }
            let dj = map.betas[j] - map.beta0;
            let inner_unlocked = (0..nb).any(|k| {
                let dk = map.betas[k] - map.beta0;
                dk * dj >= 0.0 && dk.abs() < dj.abs() && !map.cell(i, k).locked
            });
            if inner_unlocked {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(beta0: f64, betas: Vec<f64>, gammas: Vec<f64>, locked: &[&[bool]]) -> LockMap {
        let mut cells = Vec::new();
        for (i, &g) in gammas.iter().enumerate() {
            for (j, &b) in betas.iter().enumerate() {
                let l = locked[i][j];
                cells.push(Cell {
                    beta: b,
                    gamma: g,
                    verdict: if l { Verdict::Locked } else { Verdict::Unlocked },
                    locked: l,
                    drift: Some(0.0),
                    residual: Some(0.0),
                    sigma: Some(0.0),
                    error: None,
                });
            }
        }
        LockMap {
            schema_version: 1,
            kind: "lock_map".into(),
            beta0,
            spec: SweepSpec::new(1.0, [betas[0], betas[betas.len() - 1]], betas.len(), [gammas[0], gammas[gammas.len() - 1]], gammas.len()),
            betas,
            gammas,
            cells,
        }
    }

    #[test]
    fn wedge_boundary_fit() {
        // Exact wedge |β − β₀| < 2γ sampled on a fine grid.
        let betas: Vec<f64> = (0..201).map(|k| -1.0 + 0.01 * k as f64).collect();
        let gammas: Vec<f64> = (1..=5).map(|k| 0.08 * k as f64).collect();
        let rows: Vec<Vec<bool>> = gammas
            .iter()
            .map(|g| betas.iter().map(|b| b.abs() < 2.0 * g).collect())
            .collect();
        let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
        let map = map_from(0.0, betas, gammas, &refs);
        let s = summarize(&map, 1);
        assert!((s.upper_coefficient.unwrap() - 2.0).abs() < 0.02);
        assert!((s.lower_coefficient.unwrap() + 2.0).abs() < 0.02);
        assert_eq!(nesting_violations(&map), 0);
    }

    #[test]
    fn holes_count_as_violations() {
        let map = map_from(0.0, vec![-1.0, 0.0, 1.0, 2.0], vec![0.5], &[&[true, true, false, true]]);
        assert_eq!(nesting_violations(&map), 1);
        let b = boundary_points(&map);
        assert_eq!(b[0].upper, Some(0.5));
        assert_eq!(b[0].lower, None);
    }

    #[test]
    fn spec_validation() {
        let mut s = SweepSpec::new(50.0, [0.1, 0.2], 3, [0.0, 0.01], 2);
        assert!(s.validate().is_ok());
        s.beta_count = 0;
        assert!(s.validate().is_err());
        let s = SweepSpec::new(50.0, [0.1, 0.1], 3, [0.0, 0.01], 2);
        assert!(s.validate().is_err());
        let s = SweepSpec::new(50.0, [0.1, 0.1], 1, [0.0, 0.0], 1);
        assert!(s.validate().is_ok());
        assert_eq!(s.betas(), vec![0.1]);
    }
}
