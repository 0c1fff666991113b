use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use modlock::adjoint::{biorthonormality_report, solve_adjoint, AdjointOptions, AdjointPair};
use modlock::averaging::{ForcingAverages, PhiGrid};
use modlock::curves::{cone_section, g_curve, ConeOptions, CurveOptions, LockingCurve};
use modlock::io::{fmt_f64, indexed_columns, read_json, write_json, write_numeric_table, write_table};
use modlock::orbit::{
    default_anchor, default_seed, find_orbit, verify_stability, OrbitOptions, PeriodicOrbit, SeedOptions,
};
use modlock::sweep::{nesting_violations, run_sweep, summarize, BoundarySummary, SweepSpec};
use modlock::system::{EquivariantSystem, ParamValue};
use modlock::verify::{
    diagnose_lock, phase_series, sample_spacing, simulate_forced_with_spacing, DiagnoseOptions, LockParameters,
    TorusProjector, DEFAULT_PERIODS,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{parse_params, resolve_system, RunConfig};
use crate::{AdjointOpts, ConeOpts, GcurveOpts, GlobalArgs, OrbitOpts, Outcome, SweepOpts, VerifyOpts};

/// Simulation tolerance when `--tol-rel` is not given.
const SIM_TOL: f64 = 1e-9;

pub struct Context {
    global: GlobalArgs,
    config: RunConfig,
    params: BTreeMap<String, ParamValue>,
    out: PathBuf,
}

impl Context {
    pub fn new(global: GlobalArgs) -> Result<Self> {
        let config = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let params = parse_params(&global.params)?;
        let out = global
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
        Ok(Self {
            global,
            config,
            params,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn tol_rel(&self) -> Option<f64> {
        self.global.tol_rel.or(self.config.tol_rel)
    }

    fn tol_abs(&self) -> Option<f64> {
        self.global.tol_abs.or(self.config.tol_abs)
    }

    fn seed(&self) -> u64 {
        self.global.seed.or(self.config.seed).unwrap_or(0)
    }

    fn workers(&self) -> Option<usize> {
        self.global.workers.or(self.config.workers)
    }

    /// Flags layered over the config's command options. A flag counts as
    /// given when it is not `None` (or `false` for switches).
    fn merged<T: Serialize + DeserializeOwned + Default>(&self, command: &str, flags: &T) -> Result<T> {
        let base: T = self.config.options(command)?;
        let mut value = serde_json::to_value(base)?;
        let (Some(obj), serde_json::Value::Object(flags)) = (value.as_object_mut(), serde_json::to_value(flags)?)
        else {
            unreachable!("option structs serialize to objects")
        };
        for (k, v) in flags {
            if !(v.is_null() || v == serde_json::Value::Bool(false)) {
                obj.insert(k, v);
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    fn system(&self, fallback: Option<&PeriodicOrbit>) -> Result<EquivariantSystem> {
        resolve_system(
            self.global.system.as_deref(),
            self.config.system.as_ref(),
            fallback.and_then(|o| o.system()),
            &self.params,
        )
    }

    fn load_orbit(&self, path: Option<&Path>) -> Result<PeriodicOrbit> {
        let p = path.map(Path::to_path_buf).unwrap_or_else(|| self.path("orbit.json"));
        let record = read_json(&p).with_context(|| format!("cannot load orbit {}", p.display()))?;
        Ok(PeriodicOrbit::from_record(record)?)
    }

    fn load_curve(&self, path: &Path) -> Result<LockingCurve> {
        let record = read_json(path).with_context(|| format!("cannot load curve {}", path.display()))?;
        Ok(LockingCurve::from_record(record)?)
    }
}

fn psi_table(path: &Path, prefix: &str, grid: &[f64], values: &[Vec<f64>]) -> Result<()> {
    let n = values.first().map_or(0, Vec::len);
    let mut header = vec!["psi".to_string()];
    header.extend(indexed_columns(prefix, n));
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .zip(values)
        .map(|(&p, v)| std::iter::once(p).chain(v.iter().copied()).collect())
        .collect();
    write_numeric_table(path, &header, &rows)?;
    Ok(())
}

fn require(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| anyhow!("missing option --{name}"))
}

pub fn orbit(ctx: &Context, flags: OrbitOpts) -> Result<Outcome> {
    let o = ctx.merged("orbit", &flags)?;
    let sys = ctx.system(None)?;
    let defaults = OrbitOptions::default();
    let opts = OrbitOptions {
        n_psi: o.n_psi.unwrap_or(defaults.n_psi),
        newton_tol: o.newton_tol.unwrap_or(defaults.newton_tol),
        rel_tol: ctx.tol_rel().unwrap_or(defaults.rel_tol),
        abs_tol: ctx.tol_abs().unwrap_or(defaults.abs_tol),
        anchor: default_anchor(&sys),
        ..defaults
    };
    let seed = default_seed(&sys, &SeedOptions::default()).context("seeding failed")?;
    let orbit = find_orbit(&sys, &seed.state, seed.alpha0, seed.beta0, &opts).context("orbit solver failed")?;
    let report = verify_stability(&orbit, o.margin.unwrap_or(0.01));
    write_json(&ctx.path("orbit.json"), orbit.record())?;
    write_json(&ctx.path("stability.json"), &report)?;
    psi_table(&ctx.path("x0.csv"), "x", orbit.psi_grid(), orbit.x0_values())?;
    println!("alpha0 = {}", fmt_f64(orbit.alpha0()));
    println!("beta0 = {}", fmt_f64(orbit.beta0()));
    println!(
        "stability: {} (trivial multipliers {}, max nontrivial modulus {})",
        if report.pass { "pass" } else { "fail" },
        report.trivial_count,
        fmt_f64(report.max_nontrivial_modulus)
    );
    Ok(if report.pass { Outcome::Ok } else { Outcome::PredicateFailed })
}

#[derive(Serialize)]
struct AdjointSummary {
    biorthonormality_residual: f64,
    normalization_residual: f64,
    periodicity_error: f64,
}

pub fn adjoint(ctx: &Context, flags: AdjointOpts) -> Result<Outcome> {
    let o = ctx.merged("adjoint", &flags)?;
    let orbit = ctx.load_orbit(o.orbit.as_deref())?;
    let sys = ctx.system(Some(&orbit))?;
    let defaults = AdjointOptions::default();
    let opts = AdjointOptions {
        rel_tol: ctx.tol_rel().unwrap_or(defaults.rel_tol),
        abs_tol: ctx.tol_abs().unwrap_or(defaults.abs_tol),
        ..defaults
    };
    let pair = solve_adjoint(&orbit, &sys, &opts).context("adjoint solver failed")?;
    let summary = AdjointSummary {
        biorthonormality_residual: biorthonormality_report(&pair, &orbit)?,
        normalization_residual: pair.record().normalization_residual,
        periodicity_error: pair.record().periodicity_error,
    };
    write_json(&ctx.path("adjoint.json"), pair.record())?;
    write_json(&ctx.path("adjoint_report.json"), &summary)?;
    psi_table(&ctx.path("p1.csv"), "p1", pair.psi_grid(), pair.p1_values())?;
    psi_table(&ctx.path("p2.csv"), "p2", pair.psi_grid(), pair.p2_values())?;
    println!("biorthonormality residual = {}", fmt_f64(summary.biorthonormality_residual));
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct SingularReport<'a> {
    schema_version: u32,
    kind: &'static str,
    order: u8,
    g_plus: f64,
    g_minus: f64,
    singular_points: &'a [f64],
    singular_values: &'a [f64],
    second_derivatives: &'a [f64],
    nondegenerate: bool,
}

#[derive(Serialize)]
struct DegeneracyReport {
    schema_version: u32,
    kind: &'static str,
    degenerate: bool,
    max_g1_norm: f64,
    tol: f64,
}

pub fn gcurve(ctx: &Context, flags: GcurveOpts) -> Result<Outcome> {
    let o = ctx.merged("gcurve", &flags)?;
    let orbit = ctx.load_orbit(o.orbit.as_deref())?;
    let sys = ctx.system(Some(&orbit))?;
    let adj_path = o.adjoint.clone().unwrap_or_else(|| ctx.path("adjoint.json"));
    let record = read_json(&adj_path).with_context(|| format!("cannot load adjoint {}", adj_path.display()))?;
    let pair = AdjointPair::from_record(record)?;
    let order = match o.order {
        Some(k) => k,
        None => ForcingAverages::new(&sys, PhiGrid::default()).order(),
    };
    let defaults = CurveOptions::default();
    let opts = CurveOptions {
        n_psi: orbit.n_psi(),
        n_theta: o.n_theta.unwrap_or(defaults.n_theta),
        phi_grid: match o.n_phi {
            Some(n) => PhiGrid::new(n)?,
            None => defaults.phi_grid,
        },
        ..defaults
    };
    let curve = match g_curve(&orbit, &pair, &sys, order, &opts) {
        Ok(c) => c,
        Err(modlock::Error::WrongBranch { max_g1 }) => {
            let report = DegeneracyReport {
                schema_version: 1,
                kind: "degeneracy",
                degenerate: false,
                max_g1_norm: max_g1,
                tol: modlock::averaging::DEGENERACY_TOL,
            };
            write_json(&ctx.path("degeneracy.json"), &report)?;
            eprintln!(
                "order 2 needs a degenerate forcing, but max |g1| = {}",
                fmt_f64(max_g1)
            );
            return Ok(Outcome::PredicateFailed);
        }
        Err(e) => return Err(anyhow::Error::from(e).context("locking curve failed")),
    };
    let rec = curve.record();
    write_json(&ctx.path("gcurve.json"), rec)?;
    write_json(
        &ctx.path("singular.json"),
        &SingularReport {
            schema_version: 1,
            kind: "singular_set",
            order,
            g_plus: rec.g_plus,
            g_minus: rec.g_minus,
            singular_points: &rec.singular_points,
            singular_values: &rec.singular_values,
            second_derivatives: &rec.second_derivatives,
            nondegenerate: rec.nondegenerate,
        },
    )?;
    let rows: Vec<Vec<f64>> = rec.psi_grid.iter().zip(&rec.g_values).map(|(&p, &g)| vec![p, g]).collect();
    write_numeric_table(&ctx.path("gcurve.csv"), &["psi".into(), "G".into()], &rows)?;
    println!("G+ = {}, G- = {}", fmt_f64(rec.g_plus), fmt_f64(rec.g_minus));
    let s: Vec<String> = rec.singular_values.iter().map(|&v| fmt_f64(v)).collect();
    println!("singular values = [{}]", s.join(", "));
    Ok(Outcome::Ok)
}

pub fn cone(ctx: &Context, flags: ConeOpts) -> Result<Outcome> {
    let o = ctx.merged("cone", &flags)?;
    let curve_path = o.curve.clone().unwrap_or_else(|| ctx.path("gcurve.json"));
    let curve = ctx.load_curve(&curve_path)?;
    let defaults = ConeOptions::default();
    let opts = ConeOptions {
        resolution: o.resolution.unwrap_or(defaults.resolution),
        c1: o.c1.unwrap_or(defaults.c1),
        c2: o.c2.unwrap_or(defaults.c2),
    };
    let alpha = require(o.alpha, "alpha")?;
    let range = (o.gamma_min.unwrap_or(0.0), o.gamma_max.unwrap_or(0.1));
    let cone = cone_section(&curve, alpha, o.epsilon.unwrap_or(0.05), range, &opts)?;
    write_json(&ctx.path("cone.json"), &cone)?;
    let mut rows: Vec<[String; 3]> = Vec::new();
    let mut push = |name: &str, pts: &[[f64; 2]]| {
        rows.extend(pts.iter().map(|p| [name.to_string(), fmt_f64(p[0]), fmt_f64(p[1])]));
    };
    push("lower", &cone.lower);
    push("upper", &cone.upper);
    for (k, band) in cone.excluded_bands.iter().enumerate() {
        push(&format!("band{k}_lower"), &band.lower);
        push(&format!("band{k}_upper"), &band.upper);
    }
    write_table(
        &ctx.path("cone.csv"),
        &["branch".into(), "beta_offset".into(), "gamma".into()],
        rows,
    )?;
    if let Some(w) = &cone.warning {
        eprintln!("warning: {w}");
    }
    println!("cone: {} boundary points, empty = {}", cone.lower.len() + cone.upper.len(), cone.empty);
    Ok(Outcome::Ok)
}

fn diagnose_options(drift_tol: Option<f64>, residual_tol: Option<f64>, phase_tol: Option<f64>) -> DiagnoseOptions {
    let d = DiagnoseOptions::default();
    DiagnoseOptions {
        drift_tol: drift_tol.or(d.drift_tol),
        residual_tol: residual_tol.or(d.residual_tol),
        phase_tol: phase_tol.unwrap_or(d.phase_tol),
        ..d
    }
}

pub fn verify(ctx: &Context, flags: VerifyOpts) -> Result<Outcome> {
    let o = ctx.merged("verify", &flags)?;
    let orbit = ctx.load_orbit(o.orbit.as_deref())?;
    let sys = ctx.system(Some(&orbit))?;
    let params = LockParameters {
        alpha: require(o.alpha, "alpha")?,
        beta: require(o.beta, "beta")?,
        gamma: require(o.gamma, "gamma")?,
    };
    if !(params.beta > 0.0) {
        bail!("beta must be positive");
    }
    let t_final = o.t_final.unwrap_or(DEFAULT_PERIODS * 2.0 * PI / params.beta);
    let dt = sample_spacing(params.beta.max(orbit.beta0()));
    let tol = ctx.tol_rel().unwrap_or(SIM_TOL);
    let traj = simulate_forced_with_spacing(
        &sys,
        params.alpha,
        params.beta,
        params.gamma,
        &orbit.x0(0.0),
        t_final,
        tol,
        dt,
    )
    .context("simulation failed")?;
    let opts = diagnose_options(o.drift_tol, o.residual_tol, o.phase_tol);
    let diag = diagnose_lock(&orbit, &sys, &traj, params, &opts)?;
    write_json(&ctx.path("diagnosis.json"), &diag)?;
    if o.series {
        let proj = TorusProjector::new(&orbit, sys.generator())?;
        let series = phase_series(&proj, &traj, params.beta, 0.0);
        let rows: Vec<Vec<f64>> = series.iter().map(|p| vec![p.t, p.phase_offset, p.distance]).collect();
        write_numeric_table(
            &ctx.path("phase.csv"),
            &["t".into(), "phase_offset".into(), "distance".into()],
            &rows,
        )?;
    }
    println!(
        "{}: drift = {}, sigma = {}, residual = {}",
        if diag.locked { "locked" } else { "unlocked" },
        fmt_f64(diag.drift_rate),
        fmt_f64(diag.sigma),
        fmt_f64(diag.residual)
    );
    Ok(if diag.locked { Outcome::Ok } else { Outcome::Unlocked })
}

#[derive(Serialize)]
struct SweepSummary {
    schema_version: u32,
    kind: &'static str,
    order: u8,
    beta0: f64,
    nesting_violations: usize,
    #[serde(flatten)]
    boundary: BoundarySummary,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn sweep(ctx: &Context, flags: SweepOpts) -> Result<Outcome> {
    let o = ctx.merged("sweep", &flags)?;
    let orbit = ctx.load_orbit(o.orbit.as_deref())?;
    let sys = ctx.system(Some(&orbit))?;
    let curve = o.curve.as_deref().map(|p| ctx.load_curve(p)).transpose()?;
    let mut spec = SweepSpec::new(
        require(o.alpha, "alpha")?,
        [require(o.beta_min, "beta-min")?, require(o.beta_max, "beta-max")?],
        o.beta_count.unwrap_or(21),
        [require(o.gamma_min, "gamma-min")?, require(o.gamma_max, "gamma-max")?],
        o.gamma_count.unwrap_or(21),
    );
    spec.t_final = o.t_final;
    spec.tol = ctx.tol_rel().unwrap_or(SIM_TOL);
    spec.seed = ctx.seed();
    spec.workers = ctx.workers();
    spec.diagnose = diagnose_options(o.drift_tol, o.residual_tol, None);
    if let Some(e) = o.epsilon {
        spec.epsilon = e;
    }
    let map = run_sweep(&sys, &orbit, &spec, curve.as_ref())?;
    let order = o.order.or(curve.as_ref().map(|c| c.order())).unwrap_or(1);
    let summary = SweepSummary {
        schema_version: 1,
        kind: "boundary_summary",
        order,
        beta0: map.beta0,
        nesting_violations: nesting_violations(&map),
        boundary: summarize(&map, order),
    };
    write_json(&ctx.path("lockmap.json"), &map)?;
    write_json(&ctx.path("boundary.json"), &summary)?;
    let header: Vec<String> = ["beta", "gamma", "verdict", "locked", "drift", "residual", "sigma", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = map.cells.iter().map(|c| {
        vec![
            fmt_f64(c.beta),
            fmt_f64(c.gamma),
            c.verdict.as_str().to_string(),
            c.locked.to_string(),
            opt_cell(c.drift),
            opt_cell(c.residual),
            opt_cell(c.sigma),
            c.error.clone().unwrap_or_default(),
        ]
    });
    write_table(&ctx.path("lockmap.csv"), &header, rows)?;
    let locked = map.cells.iter().filter(|c| c.locked).count();
    println!("{locked} of {} cells locked", map.cells.len());
    println!(
        "boundary fit (power {}): upper {}, lower {}",
        summary.boundary.power,
        summary.boundary.upper_coefficient.map_or("none".into(), fmt_f64),
        summary.boundary.lower_coefficient.map_or("none".into(), fmt_f64)
    );
    Ok(Outcome::Ok)
}
