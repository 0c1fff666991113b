//! S¹-equivariant systems `x' = f(x) + γ g(x, βt, αt)` with rotation
//! generator `A`, symmetry diagnostics and the two built-in models.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type StateJacobian = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;
pub type ForcingFn = Arc<dyn Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync>;
pub type ForcingJacobian = Arc<dyn Fn(&[f64], f64, f64, &mut DMatrix<f64>) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
struct RotationPlane {
    i: usize,
    j: usize,
    /// `A[j, i] = rate`, `A[i, j] = -rate`.
    rate: f64,
}

/// Skew-symmetric generator of the S¹ action `x ↦ e^{Aξ} x`.
#[derive(Debug, Clone)]
pub struct Generator {
    matrix: DMatrix<f64>,
    planes: Option<Vec<RotationPlane>>,
}

impl Generator {
    /// Requires `Aᵀ = -A` exactly and `‖e^{2πA} - I‖ < 1e-10`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() || n == 0 {
            return Err(Error::InvalidArgument("generator must be square".into()));
        }
        if matrix != -matrix.transpose() {
            return Err(Error::InvalidArgument(
                "generator must be exactly skew-symmetric".into(),
            ));
        }
        if matrix.amax() == 0.0 {
            return Err(Error::InvalidArgument("generator must be non-zero".into()));
        }
        let planes = detect_planes(&matrix);
        let g = Self { matrix, planes };
        let full_turn = g.exp(2.0 * PI);
        let dev = (full_turn - DMatrix::identity(n, n)).amax();
        if dev >= 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "e^(2πA) differs from the identity by {dev:e}"
            )));
        }
        Ok(g)
    }

    /// The generator of the built-in models: one rotation in the (x₃, x₄) plane.
    pub fn single_plane(n: usize, i: usize, j: usize) -> Self {
        let mut m = DMatrix::zeros(n, n);
        m[(i, j)] = -1.0;
        m[(j, i)] = 1.0;
        Self::new(m).expect("unit rotation block is a valid generator")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `e^{Aξ}`: closed-form rotations when `A` is made of disjoint planar
    /// blocks, scaling-and-squaring otherwise.
    pub fn exp(&self, xi: f64) -> DMatrix<f64> {
        let n = self.dim();
        match &self.planes {
            Some(planes) => {
                let mut m = DMatrix::identity(n, n);
                for p in planes {
                    let (s, c) = (p.rate * xi).sin_cos();
                    m[(p.i, p.i)] = c;
                    m[(p.j, p.j)] = c;
                    m[(p.i, p.j)] = -s;
                    m[(p.j, p.i)] = s;
                }
                m
            }
            None => (&self.matrix * xi).exp(),
        }
    }

    /// `out = e^{Aξ} x`.
    pub fn rotate_into(&self, xi: f64, x: &[f64], out: &mut [f64]) {
        match &self.planes {
            Some(planes) => {
                out.copy_from_slice(x);
                for p in planes {
                    let (s, c) = (p.rate * xi).sin_cos();
                    out[p.i] = c * x[p.i] - s * x[p.j];
                    out[p.j] = s * x[p.i] + c * x[p.j];
                }
            }
            None => {
                let m = self.exp(xi);
                for r in 0..x.len() {
                    out[r] = (0..x.len()).map(|c| m[(r, c)] * x[c]).sum();
                }
            }
        }
    }

    pub fn rotate(&self, xi: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.rotate_into(xi, x, &mut out);
        out
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for r in 0..n {
            out[r] = (0..n).map(|c| self.matrix[(r, c)] * x[c]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// First rotation plane `(i, j, rate)` when `A` is block structured.
    pub fn first_plane(&self) -> Option<(usize, usize, f64)> {
        self.planes
            .as_ref()
            .and_then(|p| p.first())
            .map(|p| (p.i, p.j, p.rate))
    }
}

fn detect_planes(m: &DMatrix<f64>) -> Option<Vec<RotationPlane>> {
    let n = m.nrows();
    let mut used = vec![false; n];
    let mut planes = Vec::new();
    for i in 0..n {
        let nz: Vec<usize> = (0..n).filter(|&c| m[(i, c)] != 0.0).collect();
        match nz.as_slice() {
            [] => {}
            [j] => {
                let j = *j;
                if i < j {
                    if used[i] || used[j] {
                        return None;
                    }
                    let other: Vec<usize> = (0..n).filter(|&c| m[(j, c)] != 0.0).collect();
                    if other != [i] {
                        return None;
                    }
                    used[i] = true;
                    used[j] = true;
                    planes.push(RotationPlane {
                        i,
                        j,
                        rate: m[(j, i)],
                    });
                } else if !used[i] {
                    return None;
                }
            }
            _ => return None,
        }
    }
    Some(planes)
}

/// Trigonometric polynomial `c₀ + Σ_k (a_k cos kψ + b_k sin kψ)`,
/// `cos[k-1] = a_k`, `sin[k-1] = b_k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn sin1() -> Self {
        Self {
            sin: vec![1.0],
            ..Self::default()
        }
    }

    /// `0.5 cos ψ + sin 2ψ`.
    pub fn two_harmonic() -> Self {
        Self {
            constant: 0.0,
            cos: vec![0.5],
            sin: vec![0.0, 1.0],
        }
    }

    pub fn eval(&self, psi: f64) -> f64 {
        let mut v = self.constant;
        for (k, a) in self.cos.iter().enumerate() {
            v += a * ((k + 1) as f64 * psi).cos();
        }
        for (k, b) in self.sin.iter().enumerate() {
            v += b * ((k + 1) as f64 * psi).sin();
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }

    pub fn max_harmonic(&self) -> usize {
        let last = |v: &[f64]| v.iter().rposition(|&c| c != 0.0).map_or(0, |p| p + 1);
        last(&self.cos).max(last(&self.sin))
    }

    /// Parses presets (`sin`, `cos`, `zero`, `two_harmonic`) or sums of terms
    /// like `0.5cos(psi) + sin(2psi) - 0.1`, `0.5cos1+sin2`.
    pub fn parse(text: &str) -> Result<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |why: &str| Error::InvalidParameter {
            name: "trigonometric polynomial".into(),
            reason: format!("`{text}`: {why}"),
        };
        match s.as_str() {
            "zero" | "0" => return Ok(Self::zero()),
            "sin" => return Ok(Self::sin1()),
            "cos" => {
                return Ok(Self {
                    cos: vec![1.0],
                    ..Self::default()
                })
            }
            "two_harmonic" => return Ok(Self::two_harmonic()),
            _ => {}
        }
        if s.is_empty() {
            return Err(bad("empty"));
        }
        let mut poly = Self::zero();
        let bytes: Vec<char> = s.chars().collect();
        let mut pos = 0;
        while pos < bytes.len() {
            let mut sign = 1.0;
            if bytes[pos] == '+' || bytes[pos] == '-' {
                if bytes[pos] == '-' {
                    sign = -1.0;
                }
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == '.' || bytes[pos] == 'e' && pos + 1 < bytes.len() && (bytes[pos + 1].is_ascii_digit() || bytes[pos + 1] == '-')) {
                if bytes[pos] == 'e' {
                    pos += 1;
                }
                pos += 1;
            }
            let coef_text: String = bytes[start..pos].iter().collect();
            let coef = if coef_text.is_empty() {
                1.0
            } else {
                coef_text.parse::<f64>().map_err(|_| bad("bad coefficient"))?
            };
            if pos < bytes.len() && bytes[pos] == '*' {
                pos += 1;
            }
            let rest: String = bytes[pos..].iter().collect();
            let kind = if rest.starts_with("cos") {
                Some(true)
            } else if rest.starts_with("sin") {
                Some(false)
            } else {
                None
            };
            match kind {
                None => {
                    if coef_text.is_empty() {
                        return Err(bad("expected a number, cos or sin"));
                    }
                    poly.constant += sign * coef;
                }
                Some(is_cos) => {
                    pos += 3;
                    let mut harmonic = 1usize;
                    let read_int = |pos: &mut usize| -> Option<usize> {
                        let st = *pos;
                        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                            *pos += 1;
                        }
                        let t: String = bytes[st..*pos].iter().collect();
                        t.parse().ok()
                    };
                    if pos < bytes.len() && bytes[pos] == '(' {
                        pos += 1;
                        if let Some(k) = read_int(&mut pos) {
                            harmonic = k;
                        }
                        if pos < bytes.len() && bytes[pos] == '*' {
                            pos += 1;
                        }
                        let tail: String = bytes[pos..].iter().collect();
                        if let Some(t) = tail.strip_prefix("psi)") {
                            pos = bytes.len() - t.chars().count();
                        } else if tail.starts_with(')') {
                            pos += 1;
                        } else {
                            return Err(bad("unbalanced parenthesis"));
                        }
                    } else if let Some(k) = read_int(&mut pos) {
                        harmonic = k;
                    }
                    if harmonic == 0 {
                        poly.constant += sign * coef * if is_cos { 1.0 } else { 0.0 };
                    } else {
                        let v = if is_cos { &mut poly.cos } else { &mut poly.sin };
                        if v.len() < harmonic {
                            v.resize(harmonic, 0.0);
                        }
                        v[harmonic - 1] += sign * coef;
                    }
                }
            }
            if pos < bytes.len() && bytes[pos] != '+' && bytes[pos] != '-' {
                return Err(bad("unexpected character"));
            }
        }
        Ok(poly)
    }
}

impl fmt::Display for TrigPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        if self.constant != 0.0 {
            terms.push(format!("{}", self.constant));
        }
        for (k, a) in self.cos.iter().enumerate() {
            if *a != 0.0 {
                terms.push(format!("{a}cos{}", k + 1));
            }
        }
        for (k, b) in self.sin.iter().enumerate() {
            if *b != 0.0 {
                terms.push(format!("{b}sin{}", k + 1));
            }
        }
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join("+").replace("+-", "-"))
        }
    }
}

/// A parameter value in a system descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
    Poly(TrigPoly),
}

impl ParamValue {
    fn as_number(&self, name: &str) -> Result<f64> {
        match self {
            ParamValue::Number(v) if v.is_finite() => Ok(*v),
            ParamValue::Text(t) => t.parse::<f64>().map_err(|_| Error::InvalidParameter {
                name: name.into(),
                reason: format!("expected a number, got `{t}`"),
            }),
            _ => Err(Error::InvalidParameter {
                name: name.into(),
                reason: "expected a finite number".into(),
            }),
        }
    }

    fn as_poly(&self, name: &str) -> Result<TrigPoly> {
        match self {
            ParamValue::Poly(p) => Ok(p.clone()),
            ParamValue::Text(t) => TrigPoly::parse(t).map_err(|e| match e {
                Error::InvalidParameter { reason, .. } => Error::InvalidParameter {
                    name: name.into(),
                    reason,
                },
                other => other,
            }),
            ParamValue::Number(v) => Ok(TrigPoly {
                constant: *v,
                ..TrigPoly::default()
            }),
        }
    }
}

/// JSON form `{"name": "yamada", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl SystemDescriptor {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn build(&self) -> Result<EquivariantSystem> {
        builtin(&self.name, &self.params)
    }
}

/// The tuple `(n, A, f, g)` with evaluators.
#[derive(Clone)]
pub struct EquivariantSystem {
    name: String,
    generator: Generator,
    f: StateFn,
    f_jac: Option<StateJacobian>,
    g: ForcingFn,
    g_xjac: Option<ForcingJacobian>,
    params: BTreeMap<String, f64>,
    initial_state: Option<Vec<f64>>,
    descriptor: Option<SystemDescriptor>,
    fast_phase: bool,
}

impl fmt::Debug for EquivariantSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquivariantSystem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("params", &self.params)
            .field("analytic_f_jac", &self.f_jac.is_some())
            .field("analytic_g_xjac", &self.g_xjac.is_some())
            .finish()
    }
}

/// Registers a new system from its evaluator record.
pub struct SystemBuilder {
    name: String,
    generator: Generator,
    f: Option<StateFn>,
    f_jac: Option<StateJacobian>,
    g: Option<ForcingFn>,
    g_xjac: Option<ForcingJacobian>,
    params: BTreeMap<String, f64>,
    initial_state: Option<Vec<f64>>,
}

impl SystemBuilder {
    /// Starting point for transient integration when seeding orbit searches.
    pub fn initial_state(mut self, x: Vec<f64>) -> Self {
        self.initial_state = Some(x);
        self
    }

    pub fn f(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.f = Some(Arc::new(f));
        self
    }

    pub fn f_jac(mut self, j: impl Fn(&[f64], &mut DMatrix<f64>) + Send + Sync + 'static) -> Self {
        self.f_jac = Some(Arc::new(j));
        self
    }

    pub fn g(mut self, g: impl Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }

    pub fn g_xjac(
        mut self,
        j: impl Fn(&[f64], f64, f64, &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.g_xjac = Some(Arc::new(j));
        self
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn build(self) -> Result<EquivariantSystem> {
        let n = self.generator.dim();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "system dimension must be at least 3, got {n}"
            )));
        }
        let f = self
            .f
            .ok_or_else(|| Error::InvalidArgument("missing f evaluator".into()))?;
        if self.initial_state.as_ref().is_some_and(|x| x.len() != n) {
            return Err(Error::InvalidArgument("initial state has the wrong dimension".into()));
        }
        let g: ForcingFn = self.g.unwrap_or_else(|| Arc::new(|_: &[f64], _, _, out: &mut [f64]| out.fill(0.0)));
        let fast_phase = probe_fast_phase(&g, n);
        Ok(EquivariantSystem {
            name: self.name,
            generator: self.generator,
            f,
            f_jac: self.f_jac,
            g,
            g_xjac: self.g_xjac,
            params: self.params,
            initial_state: self.initial_state,
            descriptor: None,
            fast_phase,
        })
    }
}

impl EquivariantSystem {
    pub fn builder(name: &str, generator: Generator) -> SystemBuilder {
        SystemBuilder {
            name: name.into(),
            generator,
            f: None,
            f_jac: None,
            g: None,
            g_xjac: None,
            params: BTreeMap::new(),
            initial_state: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.initial_state.as_deref()
    }

    pub fn descriptor(&self) -> Option<&SystemDescriptor> {
        self.descriptor.as_ref()
    }

    /// Whether `g` was seen to vary with the fast phase φ on a sample set.
    pub fn forcing_depends_on_fast_phase(&self) -> bool {
        self.fast_phase
    }

    pub fn has_analytic_f_jac(&self) -> bool {
        self.f_jac.is_some()
    }

    pub fn f_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    pub fn f_eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.f_into(x, &mut out);
        out
    }

    /// Analytic Jacobian when registered, forward differences otherwise.
    pub fn f_jac_into(&self, x: &[f64], out: &mut DMatrix<f64>) {
        match &self.f_jac {
            Some(j) => j(x, out),
            None => forward_difference(|y, o| (self.f)(y, o), x, out),
        }
    }

    pub fn f_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        self.f_jac_into(x, &mut m);
        m
    }

    /// Finite-difference Jacobian of `f`, regardless of an analytic one.
    pub fn f_jac_fd(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        forward_difference(|y, o| (self.f)(y, o), x, &mut m);
        m
    }

    pub fn g_into(&self, x: &[f64], psi: f64, phi: f64, out: &mut [f64]) {
        (self.g)(x, psi, phi, out)
    }

    pub fn g_eval(&self, x: &[f64], psi: f64, phi: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.g_into(x, psi, phi, &mut out);
        out
    }

    pub fn g_xjac_into(&self, x: &[f64], psi: f64, phi: f64, out: &mut DMatrix<f64>) {
        match &self.g_xjac {
            Some(j) => j(x, psi, phi, out),
            None => forward_difference(|y, o| (self.g)(y, psi, phi, o), x, out),
        }
    }

    pub fn g_xjac(&self, x: &[f64], psi: f64, phi: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        self.g_xjac_into(x, psi, phi, &mut m);
        m
    }

    /// Right-hand side of the forced system at time `t`.
    pub fn forced_into(&self, alpha: f64, beta: f64, gamma: f64, t: f64, x: &[f64], out: &mut [f64]) {
        self.f_into(x, out);
        if gamma != 0.0 {
            let mut gv = vec![0.0; x.len()];
            self.g_into(x, beta * t, alpha * t, &mut gv);
            for (o, g) in out.iter_mut().zip(&gv) {
                *o += gamma * g;
            }
        }
    }
}

/// Evaluates `g` on seeded sample points and 16 values of φ.
fn probe_fast_phase(g: &ForcingFn, n: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut base = vec![0.0; n];
    let mut other = vec![0.0; n];
    for _ in 0..8 {
        let x = sample_ball(&mut rng, n, 4.0);
        let psi = rng.gen_range(0.0..2.0 * PI);
        g(&x, psi, 0.0, &mut base);
        for k in 1..16 {
            g(&x, psi, 2.0 * PI * k as f64 / 16.0, &mut other);
            if base.iter().zip(&other).any(|(a, b)| a != b) {
                return true;
            }
        }
    }
    false
}

/// Forward differences with step `√ε·(1+‖x‖)`.
fn forward_difference(eval: impl Fn(&[f64], &mut [f64]), x: &[f64], out: &mut DMatrix<f64>) {
    let n = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = f64::EPSILON.sqrt() * (1.0 + norm);
    let mut base = vec![0.0; n];
    eval(x, &mut base);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        xp[j] = x[j] + h;
        eval(&xp, &mut fp);
        xp[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (fp[i] - base[i]) / h;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub max_f_violation: f64,
    pub max_g_violation: f64,
    /// Largest deviation from 2π-periodicity of g in ψ or φ.
    pub max_periodicity_violation: f64,
    pub samples_used: usize,
    pub tolerance: f64,
    pub pass: bool,
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Seeded point uniformly distributed in the ball of radius `radius`.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|x| x * x).sum();
        if r2 <= 1.0 && r2 > 0.0 {
            return v.into_iter().map(|x| x * radius).collect();
        }
    }
}

fn ensure_finite(v: &[f64], what: &str, sample: usize, x: &[f64]) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteField {
            context: format!("in {what} at sample {sample} (x = {x:?})"),
        })
    }
}

/// Evaluates `‖f(e^{Aξ}x) − e^{Aξ}f(x)‖` and
/// `‖g(e^{Aξ}x, ψ, φ+ξ) − e^{Aξ}g(x, ψ, φ)‖` at seeded samples with `‖x‖ ≤ 10`.
pub fn check_symmetry(
    sys: &EquivariantSystem,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<SymmetryReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let n = sys.dim();
    let gen = sys.generator();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_f, mut max_g, mut max_p) = (0.0f64, 0.0f64, 0.0f64);
    let mut rx = vec![0.0; n];
    let mut lhs = vec![0.0; n];
    let mut base = vec![0.0; n];
    let mut rot = vec![0.0; n];
    for s in 0..n_samples {
        let x = sample_ball(&mut rng, n, 10.0);
        let psi = rng.gen_range(0.0..2.0 * PI);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let xi = rng.gen_range(0.0..2.0 * PI);
        gen.rotate_into(xi, &x, &mut rx);

        sys.f_into(&rx, &mut lhs);
        sys.f_into(&x, &mut base);
        ensure_finite(&lhs, "f", s, &rx)?;
        ensure_finite(&base, "f", s, &x)?;
        gen.rotate_into(xi, &base, &mut rot);
        max_f = max_f.max(norm_diff(&lhs, &rot));

        sys.g_into(&rx, psi, phi + xi, &mut lhs);
        sys.g_into(&x, psi, phi, &mut base);
        ensure_finite(&lhs, "g", s, &rx)?;
        ensure_finite(&base, "g", s, &x)?;
        gen.rotate_into(xi, &base, &mut rot);
        max_g = max_g.max(norm_diff(&lhs, &rot));

        sys.g_into(&x, psi + 2.0 * PI, phi, &mut lhs);
        max_p = max_p.max(norm_diff(&lhs, &base));
        sys.g_into(&x, psi, phi + 2.0 * PI, &mut lhs);
        max_p = max_p.max(norm_diff(&lhs, &base));
    }
    Ok(SymmetryReport {
        max_f_violation: max_f,
        max_g_violation: max_g,
        max_periodicity_violation: max_p,
        samples_used: n_samples,
        tolerance: tol,
        pass: max_f < tol && max_g < tol && max_p < tol,
    })
}

/// Parameter record of the Yamada laser model with electro-optical forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct YamadaParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub mu: f64,
    pub alpha0: f64,
    /// Electrical forcing of the gain equation.
    pub g_el: TrigPoly,
    /// Optical forcing amplitude of the field equations.
    pub g_op: TrigPoly,
}

impl Default for YamadaParams {
    fn default() -> Self {
        Self {
            a: 7.0,
            b: 5.8,
            c: 1.8,
            mu: 0.04,
            alpha0: 1.0,
            g_el: TrigPoly::sin1(),
            g_op: TrigPoly::zero(),
        }
    }
}

/// Parameter record of the analytically solvable example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example2Params {
    pub beta0: f64,
    pub alpha0: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            alpha0: 10.0,
        }
    }
}

fn check_keys(params: &BTreeMap<String, ParamValue>, allowed: &[&str]) -> Result<()> {
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::InvalidParameter {
                name: key.clone(),
                reason: format!("unknown parameter (allowed: {})", allowed.join(", ")),
            });
        }
    }
    Ok(())
}

fn number(params: &BTreeMap<String, ParamValue>, key: &str, default: f64) -> Result<f64> {
    params.get(key).map_or(Ok(default), |v| v.as_number(key))
}

impl YamadaParams {
    pub fn from_map(params: &BTreeMap<String, ParamValue>) -> Result<Self> {
        check_keys(params, &["a", "b", "c", "mu", "alpha0", "g_el", "g_op"])?;
        let d = Self::default();
        let p = Self {
            a: number(params, "a", d.a)?,
            b: number(params, "b", d.b)?,
            c: number(params, "c", d.c)?,
            mu: number(params, "mu", d.mu)?,
            alpha0: number(params, "alpha0", d.alpha0)?,
            g_el: params.get("g_el").map_or(Ok(d.g_el), |v| v.as_poly("g_el"))?,
            g_op: params.get("g_op").map_or(Ok(d.g_op), |v| v.as_poly("g_op"))?,
        };
        if p.mu <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "mu".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(p)
    }

    pub fn to_map(&self) -> BTreeMap<String, ParamValue> {
        let mut m = BTreeMap::new();
        m.insert("a".into(), ParamValue::Number(self.a));
        m.insert("b".into(), ParamValue::Number(self.b));
        m.insert("c".into(), ParamValue::Number(self.c));
        m.insert("mu".into(), ParamValue::Number(self.mu));
        m.insert("alpha0".into(), ParamValue::Number(self.alpha0));
        m.insert("g_el".into(), ParamValue::Poly(self.g_el.clone()));
        m.insert("g_op".into(), ParamValue::Poly(self.g_op.clone()));
        m
    }
}

impl Example2Params {
    pub fn from_map(params: &BTreeMap<String, ParamValue>) -> Result<Self> {
        check_keys(params, &["beta0", "alpha0"])?;
        let d = Self::default();
        let p = Self {
            beta0: number(params, "beta0", d.beta0)?,
            alpha0: number(params, "alpha0", d.alpha0)?,
        };
        if p.beta0 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "beta0".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(p)
    }

    pub fn to_map(&self) -> BTreeMap<String, ParamValue> {
        let mut m = BTreeMap::new();
        m.insert("beta0".into(), ParamValue::Number(self.beta0));
        m.insert("alpha0".into(), ParamValue::Number(self.alpha0));
        m
    }

    /// Closed-form `x₀(ψ) = (sin ψ, cos ψ, sin(sin ψ − cos ψ), cos(sin ψ − cos ψ))`.
    pub fn x0(psi: f64) -> [f64; 4] {
        let th = psi.sin() - psi.cos();
        [psi.sin(), psi.cos(), th.sin(), th.cos()]
    }

    /// Closed-form `dx₀/dψ`.
    pub fn dx0(psi: f64) -> [f64; 4] {
        let th = psi.sin() - psi.cos();
        let dth = psi.cos() + psi.sin();
        [psi.cos(), -psi.sin(), th.cos() * dth, -th.sin() * dth]
    }
}

/// Looks up a built-in system: `yamada` or `example2`.
pub fn builtin(name: &str, params: &BTreeMap<String, ParamValue>) -> Result<EquivariantSystem> {
    let (mut sys, descriptor) = match name {
        "yamada" => {
            let p = YamadaParams::from_map(params)?;
            (yamada(&p)?, SystemDescriptor { name: name.into(), params: p.to_map() })
        }
        "example2" => {
            let p = Example2Params::from_map(params)?;
            (example2(&p)?, SystemDescriptor { name: name.into(), params: p.to_map() })
        }
        other => return Err(Error::UnknownSystem(other.into())),
    };
    sys.descriptor = Some(descriptor);
    Ok(sys)
}

/// Laser with saturable absorber, `x = (gain, absorption, Re E, Im E)`.
pub fn yamada(p: &YamadaParams) -> Result<EquivariantSystem> {
    let YamadaParams { a, b, c, mu, alpha0, .. } = *p;
    let g_el = p.g_el.clone();
    let g_op = p.g_op.clone();
    let builder = EquivariantSystem::builder("yamada", Generator::single_plane(4, 2, 3))
        .f(move |x, out| {
            let intensity = x[2] * x[2] + x[3] * x[3];
            let net = 0.5 * (x[0] - x[1] - 1.0);
            out[0] = mu * (a - x[0] - x[0] * intensity);
            out[1] = mu * (b - x[1] - c * x[1] * intensity);
            out[2] = net * x[2] - alpha0 * x[3];
            out[3] = net * x[3] + alpha0 * x[2];
        })
        .f_jac(move |x, j| {
            let intensity = x[2] * x[2] + x[3] * x[3];
            let net = 0.5 * (x[0] - x[1] - 1.0);
            j.fill(0.0);
            j[(0, 0)] = mu * (-1.0 - intensity);
            j[(0, 2)] = -2.0 * mu * x[0] * x[2];
            j[(0, 3)] = -2.0 * mu * x[0] * x[3];
            j[(1, 1)] = mu * (-1.0 - c * intensity);
            j[(1, 2)] = -2.0 * mu * c * x[1] * x[2];
            j[(1, 3)] = -2.0 * mu * c * x[1] * x[3];
            j[(2, 0)] = 0.5 * x[2];
            j[(2, 1)] = -0.5 * x[2];
            j[(2, 2)] = net;
            j[(2, 3)] = -alpha0;
            j[(3, 0)] = 0.5 * x[3];
            j[(3, 1)] = -0.5 * x[3];
            j[(3, 2)] = alpha0;
            j[(3, 3)] = net;
        })
        .g(move |_x, psi, phi, out| {
            let op = g_op.eval(psi);
            out[0] = g_el.eval(psi);
            out[1] = 0.0;
            out[2] = phi.cos() * op;
            out[3] = phi.sin() * op;
        })
        .g_xjac(|_x, _psi, _phi, j| j.fill(0.0))
        .param("a", a)
        .param("b", b)
        .param("c", c)
        .param("mu", mu)
        .param("alpha0", alpha0)
        .initial_state(vec![6.0, 5.0, 0.5, 0.0]);
    builder.build()
}

/// The example with a closed-form relative periodic orbit. The rotation
/// term of the field equations carries `-α₀` so that the orbit rotates as
/// `e^{+Aα₀t}` with the generator of the (x₃, x₄) plane.
pub fn example2(p: &Example2Params) -> Result<EquivariantSystem> {
    let Example2Params { beta0, alpha0 } = *p;
    EquivariantSystem::builder("example2", Generator::single_plane(4, 2, 3))
        .f(move |x, out| {
            let r = x[0] * x[0] + x[1] * x[1];
            let rho = x[2] * x[2] + x[3] * x[3];
            let w = beta0 * x[0] + beta0 * x[1] - alpha0;
            out[0] = beta0 * x[1] + x[0] * (rho - r);
            out[1] = -beta0 * x[0] + x[1] * (rho - r);
            out[2] = (1.0 - r) * x[2] + w * x[3];
            out[3] = -w * x[2] + (1.0 - r) * x[3];
        })
        .f_jac(move |x, j| {
            let r = x[0] * x[0] + x[1] * x[1];
            let rho = x[2] * x[2] + x[3] * x[3];
            let w = beta0 * x[0] + beta0 * x[1] - alpha0;
            j[(0, 0)] = rho - r - 2.0 * x[0] * x[0];
            j[(0, 1)] = beta0 - 2.0 * x[0] * x[1];
            j[(0, 2)] = 2.0 * x[0] * x[2];
            j[(0, 3)] = 2.0 * x[0] * x[3];
            j[(1, 0)] = -beta0 - 2.0 * x[0] * x[1];
            j[(1, 1)] = rho - r - 2.0 * x[1] * x[1];
            j[(1, 2)] = 2.0 * x[1] * x[2];
            j[(1, 3)] = 2.0 * x[1] * x[3];
            j[(2, 0)] = -2.0 * x[0] * x[2] + beta0 * x[3];
            j[(2, 1)] = -2.0 * x[1] * x[2] + beta0 * x[3];
            j[(2, 2)] = 1.0 - r;
            j[(2, 3)] = w;
            j[(3, 0)] = -beta0 * x[2] - 2.0 * x[0] * x[3];
            j[(3, 1)] = -beta0 * x[2] - 2.0 * x[1] * x[3];
            j[(3, 2)] = -w;
            j[(3, 3)] = 1.0 - r;
        })
        .g(|x, psi, phi, out| {
            let (s, c) = phi.sin_cos();
            let rho = x[2] * x[2] + x[3] * x[3];
            let sp = psi.sin();
            out[0] = x[2] * c + x[3] * s;
            out[1] = -x[2] * s + x[3] * c;
            out[2] = rho * sp * c;
            out[3] = rho * sp * s;
        })
        .g_xjac(|x, psi, phi, j| {
            let (s, c) = phi.sin_cos();
            let sp = psi.sin();
            j.fill(0.0);
            j[(0, 2)] = c;
            j[(0, 3)] = s;
            j[(1, 2)] = -s;
            j[(1, 3)] = c;
            j[(2, 2)] = 2.0 * x[2] * sp * c;
            j[(2, 3)] = 2.0 * x[3] * sp * c;
            j[(3, 2)] = 2.0 * x[2] * sp * s;
            j[(3, 3)] = 2.0 * x[3] * sp * s;
        })
        .param("beta0", beta0)
        .param("alpha0", alpha0)
        .initial_state(vec![0.3, 0.8, 0.6, 0.6])
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(name: &str) -> EquivariantSystem {
        builtin(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn builtins_pass_symmetry_check() {
        for name in ["yamada", "example2"] {
            let sys = defaults(name);
            for seed in [1, 2, 3] {
                let r = check_symmetry(&sys, 200, 1e-10, seed).unwrap();
                assert!(r.pass, "{name}: {r:?}");
            }
        }
    }

    #[test]
    fn flipped_yamada_field_fails() {
        let p = YamadaParams::default();
        let (a, b, c, mu, alpha0) = (p.a, p.b, p.c, p.mu, p.alpha0);
        let broken = EquivariantSystem::builder("broken", Generator::single_plane(4, 2, 3))
            .f(move |x, out| {
                let intensity = x[2] * x[2] + x[3] * x[3];
                let net = 0.5 * (x[0] - x[1] - 1.0);
                out[0] = mu * (a - x[0] - x[0] * intensity);
                out[1] = mu * (b - x[1] - c * x[1] * intensity);
                out[2] = net * x[2] - alpha0 * x[3];
                out[3] = -(net * x[3] + alpha0 * x[2]);
            })
            .build()
            .unwrap();
        // Hand evaluation at x = (3, 0, 1, 0), ξ = π/2: e^{Aξ}x = (3, 0, 0, 1).
        // f(e^{Aξ}x) = (·, ·, -α₀, -(1·1)) = (.., -1, -1); e^{Aξ}f(x) rotates
        // (1, -α₀) to (α₀, 1) = (1, 1). The difference is (-2, -2).
        let x = [3.0, 0.0, 1.0, 0.0];
        let rx = broken.generator().rotate(PI / 2.0, &x);
        let lhs = broken.f_eval(&rx);
        let rhs = broken.generator().rotate(PI / 2.0, &broken.f_eval(&x));
        assert!((lhs[2] - rhs[2] + 2.0).abs() < 1e-12);
        assert!((lhs[3] - rhs[3] + 2.0).abs() < 1e-12);
        let r = check_symmetry(&broken, 200, 1e-10, 7).unwrap();
        assert!(!r.pass);
        assert!(r.max_f_violation > 1e-2);
    }

    #[test]
    fn yamada_off_state() {
        let sys = defaults("yamada");
        let v = sys.f_eval(&[7.0, 5.8, 0.0, 0.0]);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn example2_forcing_value() {
        let m: BTreeMap<String, ParamValue> = [
            ("beta0".to_string(), ParamValue::Number(1.0)),
            ("alpha0".to_string(), ParamValue::Number(10.0)),
        ]
        .into();
        let sys = builtin("example2", &m).unwrap();
        for psi in [0.0, 0.7, 2.5] {
            let g = sys.g_eval(&[0.0, 0.0, 1.0, 0.0], psi, 0.0);
            assert_eq!(g, vec![1.0, 0.0, psi.sin(), 0.0]);
        }
    }

    #[test]
    fn yamada_forcing_is_periodic_in_phi() {
        let sys = defaults("yamada");
        let x = [1.0, 2.0, 3.0, 4.0];
        for phi in [0.0, 1.0, 5.0] {
            let a = sys.g_eval(&x, 0.3, phi);
            let b = sys.g_eval(&x, 0.3, phi + 2.0 * PI);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generator_invariants() {
        for name in ["yamada", "example2"] {
            let sys = defaults(name);
            let a = sys.generator().matrix();
            assert_eq!(a.transpose(), -a);
            let dev = (sys.generator().exp(2.0 * PI) - DMatrix::identity(4, 4)).amax();
            assert!(dev < 1e-10);
        }
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        assert!(Generator::new(m).is_err());
        let mut half = DMatrix::zeros(3, 3);
        half[(0, 1)] = -0.5;
        half[(1, 0)] = 0.5;
        assert!(Generator::new(half).is_err());
    }

    #[test]
    fn closed_form_rotation_matches_expm() {
        // A generic (non block-detected) generator built from a rotated plane.
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[0.6, 0.8, 0.0, -0.8, 0.6, 0.0, 0.0, 0.0, 1.0],
        );
        let mut block = DMatrix::zeros(3, 3);
        block[(1, 2)] = -1.0;
        block[(2, 1)] = 1.0;
        let a = &q * &block * q.transpose();
        let a = (&a - a.transpose()) * 0.5;
        let g = Generator::new(a.clone());
        // Rounding may break exact skew-symmetry only if the symmetrization failed.
        let g = g.unwrap();
        let e = g.exp(0.9);
        let reference = (&a * 0.9).exp();
        assert!((e - reference).amax() < 1e-12);
        let blocky = Generator::single_plane(4, 2, 3);
        let e = blocky.exp(0.9);
        let reference = (blocky.matrix() * 0.9).exp();
        assert!((e - reference).amax() < 1e-12);
    }

    #[test]
    fn finite_difference_jacobian_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["yamada", "example2"] {
            let sys = defaults(name);
            for _ in 0..50 {
                let x = sample_ball(&mut rng, 4, 10.0);
                let a = sys.f_jac(&x);
                let fd = sys.f_jac_fd(&x);
                let rel = (&a - &fd).amax() / a.amax().max(1.0);
                assert!(rel < 1e-5, "{name}: {rel}");
            }
        }
    }

    #[test]
    fn unknown_system_and_params() {
        assert!(matches!(
            builtin("lorenz", &BTreeMap::new()),
            Err(Error::UnknownSystem(_))
        ));
        let m: BTreeMap<String, ParamValue> = [("zeta".to_string(), ParamValue::Number(1.0))].into();
        assert!(matches!(
            builtin("yamada", &m),
            Err(Error::InvalidParameter { .. })
        ));
        let m: BTreeMap<String, ParamValue> =
            [("mu".to_string(), ParamValue::Text("abc".into()))].into();
        assert!(builtin("yamada", &m).is_err());
    }

    #[test]
    fn trig_poly_parsing() {
        assert_eq!(TrigPoly::parse("sin").unwrap(), TrigPoly::sin1());
        assert_eq!(
            TrigPoly::parse("0.5cos(psi) + sin(2psi)").unwrap(),
            TrigPoly::two_harmonic()
        );
        assert_eq!(TrigPoly::parse("0.5cos1+sin2").unwrap(), TrigPoly::two_harmonic());
        let p = TrigPoly::parse("-0.25 + 2*cos(3*psi) - sin1").unwrap();
        assert_eq!(p.constant, -0.25);
        assert_eq!(p.cos, vec![0.0, 0.0, 2.0]);
        assert_eq!(p.sin, vec![-1.0]);
        assert_eq!(TrigPoly::parse(&p.to_string()).unwrap(), p);
        assert!(TrigPoly::parse("tan(psi)").is_err());
        assert!(TrigPoly::parse("1e-3sin2").unwrap().sin[1] == 1e-3);
    }

    #[test]
    fn descriptor_roundtrip() {
        let d = SystemDescriptor::new("yamada").with("g_el", ParamValue::Text("two_harmonic".into()));
        let sys = d.build().unwrap();
        let json = serde_json::to_string(sys.descriptor().unwrap()).unwrap();
        let back: SystemDescriptor = serde_json::from_str(&json).unwrap();
        let sys2 = back.build().unwrap();
        let x = [1.0, 2.0, 0.5, -0.5];
        assert_eq!(sys.g_eval(&x, 0.4, 0.1), sys2.g_eval(&x, 0.4, 0.1));
        assert!(serde_json::from_str::<SystemDescriptor>(r#"{"name":"yamada","extra":1}"#).is_err());
    }
}
