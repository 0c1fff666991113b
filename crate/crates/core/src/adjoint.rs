//! Periodic solutions `p₁, p₂` of the adjoint variational equation,
//! normalized by `pⱼᵀ q_k = δ_jk`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::Integrator;
use crate::orbit::{corotating_field, PeriodicOrbit};
use crate::system::EquivariantSystem;
use crate::trig::TrigInterpolant;

pub const ADJOINT_SCHEMA_VERSION: u32 = 1;

/// How the multiplier-1 left eigenspace of the monodromy is extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenspaceMethod {
    /// Right singular vectors of `Mᵀ − I` for the two smallest singular values.
    #[default]
    Svd,
    /// Block inverse iteration on `Mᵀ − σI` with `σ` close to 1.
    InverseIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointOptions {
    pub method: EigenspaceMethod,
    /// Singular values of `Mᵀ − I` below this (relative to `max(1, ‖M‖)`)
    /// count towards the eigenspace.
    pub cluster_tol: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            method: EigenspaceMethod::Svd,
            cluster_tol: 1e-6,
            rel_tol: 1e-11,
            abs_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointRecord {
    pub schema_version: u32,
    pub kind: String,
    pub psi_grid: Vec<f64>,
    pub p1_values: Vec<Vec<f64>>,
    pub p2_values: Vec<Vec<f64>>,
    pub normalization_residual: f64,
    /// `max |p(0) − p(2π)|` of the propagated solutions.
    pub periodicity_error: f64,
    pub method: EigenspaceMethod,
}

/// Normalized adjoint pair on the orbit's grid.
#[derive(Debug, Clone)]
pub struct AdjointPair {
    record: AdjointRecord,
    p1: TrigInterpolant,
    p2: TrigInterpolant,
}

impl AdjointPair {
    pub fn from_record(record: AdjointRecord) -> Result<Self> {
        if record.schema_version != ADJOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "adjoint schema version {} (expected {ADJOINT_SCHEMA_VERSION})",
                record.schema_version
            )));
        }
        if record.kind != "adjoint_pair" {
            return Err(Error::Schema(format!("expected an adjoint_pair record, got `{}`", record.kind)));
        }
        let m = record.psi_grid.len();
        if m < 8 || record.p1_values.len() != m || record.p2_values.len() != m {
            return Err(Error::Schema("inconsistent adjoint array shapes".into()));
        }
        let p1 = TrigInterpolant::new(&record.p1_values)?;
        let p2 = TrigInterpolant::new(&record.p2_values)?;
        if p1.dim() != p2.dim() {
            return Err(Error::Schema("p1 and p2 have different dimensions".into()));
        }
        Ok(Self { record, p1, p2 })
    }

    pub fn record(&self) -> &AdjointRecord {
        &self.record
    }

    pub fn into_record(self) -> AdjointRecord {
        self.record
    }

    pub fn psi_grid(&self) -> &[f64] {
        &self.record.psi_grid
    }

    pub fn p1_values(&self) -> &[Vec<f64>] {
        &self.record.p1_values
    }

    pub fn p2_values(&self) -> &[Vec<f64>] {
        &self.record.p2_values
    }

    pub fn normalization_residual(&self) -> f64 {
        self.record.normalization_residual
    }

    pub fn p1(&self, psi: f64) -> Vec<f64> {
        self.p1.eval(psi)
    }

    pub fn p1_into(&self, psi: f64, out: &mut [f64]) {
        self.p1.eval_into(psi, out)
    }

    pub fn p2(&self, psi: f64) -> Vec<f64> {
        self.p2.eval(psi)
    }

    /// Scales `p₁` by `factor`, for constructing test records.
    pub fn with_scaled_p1(&self, factor: f64) -> Result<Self> {
        let mut rec = self.record.clone();
        for v in &mut rec.p1_values {
            v.iter_mut().for_each(|c| *c *= factor);
        }
        Self::from_record(rec)
    }
}

/// Orthonormal basis (columns) of the left multiplier-1 eigenspace.
pub fn left_unit_eigenspace(
    monodromy: &DMatrix<f64>,
    method: EigenspaceMethod,
    cluster_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = monodromy.nrows();
    let mt_minus = monodromy.transpose() - DMatrix::identity(n, n);
    let scale = monodromy.norm().max(1.0);
    let svd = mt_minus.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[a]
            .partial_cmp(&svd.singular_values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let found = order
        .iter()
        .filter(|&&i| svd.singular_values[i] < cluster_tol * scale)
        .count();
    if found != 2 {
        return Err(Error::DefectiveMultiplier { found });
    }
    match method {
        EigenspaceMethod::Svd => {
            let mut basis = DMatrix::zeros(n, 2);
            for (col, &i) in order.iter().take(2).enumerate() {
                for r in 0..n {
                    basis[(r, col)] = v_t[(i, r)];
                }
            }
            Ok(basis)
        }
        EigenspaceMethod::InverseIteration => {
            let sigma = 1.0 + 1e-4;
            let shifted = monodromy.transpose() - DMatrix::identity(n, n) * sigma;
            let lu = shifted.lu();
            let mut x = DMatrix::from_fn(n, 2, |r, c| {
                // A deterministic start with components in every direction.
                1.0 + 0.37 * r as f64 + if c == 1 { (r as f64 * 1.3).sin() } else { 0.0 }
            });
            x = x.qr().q();
            for _ in 0..50 {
                let y = lu.solve(&x).ok_or(Error::DefectiveMultiplier { found })?;
                let next = y.qr().q();
                let change = (&next * next.transpose() - &x * x.transpose()).amax();
                x = next;
                if change < 1e-15 {
                    break;
                }
            }
            Ok(x)
        }
    }
}

/// Basis of the left eigenspace combined so that `pⱼ(0)ᵀ q_k(0) = δ_jk`.
pub fn normalized_initial(
    basis: &DMatrix<f64>,
    q1: &[f64],
    q2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q1.len();
    let q = DMatrix::from_fn(n, 2, |r, c| if c == 0 { q1[r] } else { q2[r] });
    let ptq = basis.transpose() * &q;
    let sv = ptq.clone().svd(false, false).singular_values;
    let (hi, lo) = (sv.max(), sv.min());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::NormalizationFailure { condition });
    }
    let inv = ptq
        .try_inverse()
        .ok_or(Error::NormalizationFailure { condition })?;
    // p_j = P c_j with (P C)ᵀ Q = I, so C = (PᵀQ)^{-T}.
    let c = inv.transpose();
    let p = basis * c;
    Ok((p.column(0).iter().copied().collect(), p.column(1).iter().copied().collect()))
}

/// Solves the adjoint equation `dz/dψ = −(f′(x₀)ᵀ − α₀Aᵀ) z / β₀` for the
/// normalized periodic pair, propagating backward in ψ where the adjoint
/// flow contracts transversally.
pub fn solve_adjoint(
    orbit: &PeriodicOrbit,
    sys: &EquivariantSystem,
    opts: &AdjointOptions,
) -> Result<AdjointPair> {
    let n = orbit.dim();
    if sys.dim() != n {
        return Err(Error::GridMismatch(format!(
            "system dimension {} differs from the orbit dimension {n}",
            sys.dim()
        )));
    }
    let monodromy = orbit.monodromy();
    let basis = left_unit_eigenspace(&monodromy, opts.method, opts.cluster_tol)?;
    let (p1_0, p2_0) = normalized_initial(&basis, &orbit.q1_values()[0], &orbit.q2_values()[0])?;

    let field = corotating_field(sys, orbit.alpha0(), orbit.beta0())?;
    let interp = orbit.interpolant();
    let zfield = |psi: f64, z: &[f64], dz: &mut [f64]| {
        let x = interp.eval(psi);
        let j = field.jacobian(&x);
        for pair in 0..2 {
            let zz = &z[pair * n..(pair + 1) * n];
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += j[(c, r)] * zz[c];
                }
                dz[pair * n + r] = -acc;
            }
        }
    };
    let mut z0 = p1_0.clone();
    z0.extend_from_slice(&p2_0);
    let grid = orbit.psi_grid();
    let m = grid.len();
    let descending: Vec<f64> = grid.iter().rev().copied().collect();
    let integ = Integrator::new(opts.rel_tol, opts.abs_tol);
    let traj = integ.integrate_sampled(zfield, &z0, (2.0 * PI, 0.0), &descending)?;
    let mut p1_values = vec![Vec::new(); m];
    let mut p2_values = vec![Vec::new(); m];
    for k in 0..m {
        let z = traj.state(k);
        let node = m - 1 - k;
        p1_values[node] = z[..n].to_vec();
        p2_values[node] = z[n..].to_vec();
    }
    let periodicity_error = p1_values[0]
        .iter()
        .chain(&p2_values[0])
        .zip(p1_0.iter().chain(&p2_0))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut record = AdjointRecord {
        schema_version: ADJOINT_SCHEMA_VERSION,
        kind: "adjoint_pair".into(),
        psi_grid: grid.to_vec(),
        p1_values,
        p2_values,
        normalization_residual: 0.0,
        periodicity_error,
        method: opts.method,
    };
    record.normalization_residual = residual_of(&record, orbit)?;
    AdjointPair::from_record(record)
}

fn residual_of(record: &AdjointRecord, orbit: &PeriodicOrbit) -> Result<f64> {
    if record.psi_grid.len() != orbit.n_psi()
        || record
            .psi_grid
            .iter()
            .zip(orbit.psi_grid())
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::GridMismatch(format!(
            "adjoint grid has {} nodes, orbit grid {}",
            record.psi_grid.len(),
            orbit.n_psi()
        )));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut worst = 0.0f64;
    for k in 0..orbit.n_psi() {
        let (q1, q2) = (&orbit.q1_values()[k], &orbit.q2_values()[k]);
        let (p1, p2) = (&record.p1_values[k], &record.p2_values[k]);
        if p1.len() != q1.len() || p2.len() != q1.len() {
            return Err(Error::GridMismatch("vector length mismatch".into()));
        }
        worst = worst
            .max((dot(p1, q1) - 1.0).abs())
            .max(dot(p1, q2).abs())
            .max(dot(p2, q1).abs())
            .max((dot(p2, q2) - 1.0).abs());
    }
    Ok(worst)
}

/// `max_{ψ, j, k} |pⱼᵀ(ψ) q_k(ψ) − δ_jk|`.
pub fn biorthonormality_report(pair: &AdjointPair, orbit: &PeriodicOrbit) -> Result<f64> {
    residual_of(&pair.record, orbit)
}
