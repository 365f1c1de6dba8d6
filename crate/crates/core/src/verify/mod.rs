//! Bracket-class verdicts for a system definition.
//!
//! Each check samples the coordinate box, evaluates a residual tensor at
//! every point and records the worst entry with its location.

mod flat;
mod pencil;

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::report::{Check, Witness, Worst};
use crate::sampling::{CoordBox, SamplePlan};
use crate::tensor::{
    ConnectionSource, ExprTensor, Geometry, GeometryError, SystemDef, TensorValue,
};

pub use flat::{develop_flat_coords, FlatChart, FlatOptions, DEFAULT_SUBSTEPS};
pub use pencil::{pencil_regularity, pencil_roots, PencilReport, PencilSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Residuals of exactly evaluated identities.
    pub tol_zero: f64,
    /// Residuals of ODE-integrated charts.
    pub tol_flat: f64,
    /// Affinor commutators.
    pub tol_commutator: f64,
    /// Minimum separation of pencil roots.
    pub tol_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_zero: 1e-9,
            tol_flat: 1e-7,
            tol_commutator: 1e-9,
            tol_gap: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub tolerances: Tolerances,
    pub plan: SamplePlan,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("system `{0}` declares no affinors")]
    MissingAffinors(String),
    #[error("system `{0}` declares no Liouville potential gamma")]
    MissingGamma(String),
    #[error("system `{0}` declares no metric g_upper")]
    MissingMetric(String),
    #[error("metric is not flat: path-independence residual {residual:.3e} at {point:?}")]
    NotFlat { residual: f64, point: Vec<f64> },
    #[error("box has dimension {found}, system has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("basepoint {0:?} lies outside the box")]
    BasepointOutside(Vec<f64>),
    #[error("grid resolution must be at least 2 nodes per axis")]
    Resolution,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    DnFlat,
    MfConstCurv(f64),
    Ferapontov,
    NotABracket,
    Indeterminate,
}

impl Verdict {
    pub fn tag(&self) -> &'static str {
        match self {
            Verdict::DnFlat => "DN_FLAT",
            Verdict::MfConstCurv(_) => "MF_CONST_CURV",
            Verdict::Ferapontov => "FERAPONTOV",
            Verdict::NotABracket => "NOT_A_BRACKET",
            Verdict::Indeterminate => "INDETERMINATE",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::MfConstCurv(c) => write!(f, "MF_CONST_CURV(c = {c:.12})"),
            other => f.write_str(other.tag()),
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketClass {
    Dn,
    Mf,
    Fer,
    Liouville,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub system: String,
    pub class: BracketClass,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_c: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl VerifyReport {
    fn new(sys: &SystemDef, class: BracketClass, checks: Vec<Check>, success: Verdict) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        let verdict = if pass {
            success
        } else {
            failure_verdict(&checks)
        };
        VerifyReport {
            system: sys.name.clone(),
            class,
            checks,
            verdict,
            pass,
            fitted_c: None,
            flags: Vec::new(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "system {} ({:?} conditions)", self.system, self.class)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        for flag in &self.flags {
            writeln!(f, "  note: {flag}")?;
        }
        write!(f, "verdict: {}", self.verdict)
    }
}

/// A failure within a decade of its tolerance, or a non-finite residual,
/// is inconclusive unless some other check fails outright.
fn failure_verdict(checks: &[Check]) -> Verdict {
    let decisive = checks
        .iter()
        .any(|c| !c.pass && c.residual.is_finite() && c.residual >= 10.0 * c.tol);
    if decisive {
        Verdict::NotABracket
    } else {
        Verdict::Indeterminate
    }
}

fn require_metric(sys: &SystemDef, bounds: &CoordBox) -> Result<(), VerifyError> {
    if sys.g_upper.is_none() {
        return Err(VerifyError::MissingMetric(sys.name.clone()));
    }
    if bounds.dim() != sys.dim() {
        return Err(VerifyError::DimensionMismatch {
            expected: sys.dim(),
            found: bounds.dim(),
        });
    }
    Ok(())
}

type PointResiduals = Vec<(f64, Vec<usize>)>;

/// Evaluates `residuals` at every sample (in parallel) and reduces each
/// residual slot to its worst value, in sample order.
fn sweep<F>(points: &[Vec<f64>], slots: usize, residuals: F) -> Result<Vec<Worst>, VerifyError>
where
    F: Fn(&[f64]) -> Result<PointResiduals, VerifyError> + Sync,
{
    let per_point = points
        .par_iter()
        .map(|u| residuals(u))
        .collect::<Result<Vec<_>, _>>()?;
    let mut worst = vec![Worst::default(); slots];
    for (u, values) in points.iter().zip(per_point) {
        for (slot, (value, index)) in worst.iter_mut().zip(values) {
            slot.observe(value, u, Some(index));
        }
    }
    Ok(worst)
}

fn argmax_diff(a: &TensorValue, b: &TensorValue) -> (f64, Vec<usize>) {
    let mut best = (0.0, a.unflatten(0));
    for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        let d = (x - y).abs();
        if d > best.0 || d.is_nan() {
            best = (d, a.unflatten(i));
            if d.is_nan() {
                break;
            }
        }
    }
    best
}

fn matrix_asymmetry(m: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let mut best = (0.0, vec![0, 0]);
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > best.0 || d.is_nan() {
                best = (d, vec![i, j]);
            }
        }
    }
    best
}

/// Connection encoded by `b`, with an absent `b` read as `b = 0`.
fn bracket_connection(geo: &Geometry<'_>, u: &[f64]) -> Result<TensorValue, GeometryError> {
    match geo.bracket_connection_jet(u)? {
        Some(jet) => Ok(jet.gamma),
        None => {
            let lc = geo.levi_civita(u)?;
            Ok(TensorValue::zeros(lc.dim, lc.variance, u))
        }
    }
}

/// Symmetry of `g`, agreement of the `b`-connection with Levi-Civita, and
/// the raised curvature, at one point.
fn local_part(geo: &Geometry<'_>, u: &[f64]) -> Result<(PointResiduals, TensorValue), VerifyError> {
    let up = geo.metric_upper_matrix(u)?;
    let lc = geo.levi_civita(u)?;
    let from_b = bracket_connection(geo, u)?;
    let curvature = geo.curvature(u, ConnectionSource::LeviCivita)?;
    Ok((
        vec![matrix_asymmetry(&up), argmax_diff(&from_b, &lc)],
        curvature.raised,
    ))
}

/// `δ^ν_μ δ^τ_λ − δ^τ_μ δ^ν_λ`
fn constant_curvature_pattern(nu: usize, tau: usize, mu: usize, la: usize) -> f64 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    d(nu, mu) * d(tau, la) - d(tau, mu) * d(nu, la)
}

const G_SYMMETRIC: &str = "g_upper_symmetric";
const CONNECTION: &str = "connection_matches_levi_civita";
const CURVATURE_ZERO: &str = "curvature_zero";

/// Flat metric with `b` its Levi-Civita connection.
pub fn check_dn(
    sys: &SystemDef,
    bounds: &CoordBox,
    settings: &Settings,
) -> Result<VerifyReport, VerifyError> {
    require_metric(sys, bounds)?;
    let geo = Geometry::new(sys);
    let points = settings.plan.points(bounds);
    let worst = sweep(&points, 3, |u| {
        let (mut residuals, raised) = local_part(&geo, u)?;
        residuals.push(raised.argmax_abs());
        Ok(residuals)
    })?;
    let tol = settings.tolerances.tol_zero;
    let names = [G_SYMMETRIC, CONNECTION, CURVATURE_ZERO];
    let checks = names
        .iter()
        .zip(worst)
        .map(|(n, w)| Check::new(*n, w, tol))
        .collect();
    Ok(VerifyReport::new(
        sys,
        BracketClass::Dn,
        checks,
        Verdict::DnFlat,
    ))
}

/// Constant curvature `c`, fitted by least squares against the pattern
/// `R^{ντ}_{μλ} = c (δ^ν_μ δ^τ_λ − δ^τ_μ δ^ν_λ)`.
pub fn check_mf(
    sys: &SystemDef,
    bounds: &CoordBox,
    settings: &Settings,
) -> Result<VerifyReport, VerifyError> {
    require_metric(sys, bounds)?;
    let geo = Geometry::new(sys);
    let n = sys.dim();
    let points = settings.plan.points(bounds);
    let per_point = points
        .par_iter()
        .map(|u| local_part(&geo, u))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut num, mut den) = (0.0, 0.0);
    for (_, raised) in &per_point {
        for (i, r) in raised.data.iter().enumerate() {
            let ix = raised.unflatten(i);
            let p = constant_curvature_pattern(ix[0], ix[1], ix[2], ix[3]);
            num += r * p;
            den += p * p;
        }
    }
    let c = if den > 0.0 { num / den } else { 0.0 };

    let mut worst = vec![Worst::default(); 3];
    for (u, (local, raised)) in points.iter().zip(per_point) {
        for (slot, (value, index)) in worst.iter_mut().zip(local) {
            slot.observe(value, u, Some(index));
        }
        let mut best = (0.0, vec![0; 4]);
        for (i, r) in raised.data.iter().enumerate() {
            let ix = raised.unflatten(i);
            let d = (r - c * constant_curvature_pattern(ix[0], ix[1], ix[2], ix[3])).abs();
            if d > best.0 || d.is_nan() {
                best = (d, ix);
            }
        }
        worst[2].observe(best.0, u, Some(best.1));
    }
    let tol = settings.tolerances.tol_zero;
    let mut checks: Vec<Check> = [G_SYMMETRIC, CONNECTION, "curvature_constant_pattern"]
        .iter()
        .zip(worst)
        .map(|(name, w)| Check::new(*name, w, tol))
        .collect();
    if let Some(declared) = sys.curvature_const {
        let residual = (c - declared).abs();
        checks.push(Check {
            name: "declared_curvature".into(),
            residual,
            tol,
            pass: residual < tol,
            witness: (residual >= tol).then(|| Witness {
                point: bounds.center(),
                index: None,
            }),
        });
    }
    let mut report = VerifyReport::new(sys, BracketClass::Mf, checks, Verdict::MfConstCurv(c));
    report.fitted_c = Some(c);
    if n == 1 {
        report.flags.push(
            "one-component metric: curvature vanishes identically, c is not determined".into(),
        );
    }
    if report.pass && c.abs() < tol {
        report
            .flags
            .push("fitted c = 0: the metric is flat (DN_FLAT)".into());
    }
    Ok(report)
}

/// Affinors with their first symbolic derivatives.
struct AffinorJet {
    sign: f64,
    matrix: ExprTensor,
    derivative: Vec<ExprTensor>,
}

/// Gauss–Codazzi conditions of a submanifold with flat normal connection.
pub fn check_ferapontov(
    sys: &SystemDef,
    bounds: &CoordBox,
    settings: &Settings,
) -> Result<VerifyReport, VerifyError> {
    require_metric(sys, bounds)?;
    let affinors = sys
        .affinors
        .as_ref()
        .ok_or_else(|| VerifyError::MissingAffinors(sys.name.clone()))?;
    if affinors.is_empty() {
        let mut report = check_dn(sys, bounds, settings)?;
        report
            .flags
            .push("no affinors: conditions reduce to the local (DN) part".into());
        return Ok(report);
    }
    let n = sys.dim();
    let jets: Vec<AffinorJet> = affinors
        .iter()
        .map(|a| AffinorJet {
            sign: a.sign,
            matrix: a.matrix.clone(),
            derivative: (0..n).map(|k| a.matrix.differentiate(k)).collect(),
        })
        .collect();
    let geo = Geometry::new(sys);
    let params = &sys.params;
    let points = settings.plan.points(bounds);
    let worst = sweep(&points, 6, |u| {
        let (mut residuals, raised) = local_part(&geo, u)?;
        let low = geo.metric_lower_matrix(u)?;
        let gamma = geo.christoffel(u)?;
        let w: Vec<DMatrix<f64>> = jets
            .iter()
            .map(|j| geo.eval_matrix(&j.matrix, u))
            .collect::<Result<_, _>>()?;
        let dw: Vec<Vec<Vec<f64>>> = jets
            .iter()
            .map(|j| j.derivative.iter().map(|d| d.evaluate(u, params)).collect())
            .collect::<Result<_, _>>()
            .map_err(GeometryError::from)?;

        // (i) g_{ντ} w^τ_μ symmetric
        let mut sym = (0.0, vec![0, 0, 0]);
        for (k, wk) in w.iter().enumerate() {
            let (d, ix) = matrix_asymmetry(&(&low * wk));
            if d > sym.0 || d.is_nan() {
                sym = (d, vec![k, ix[0], ix[1]]);
            }
        }

        // (ii) ∇_ν w^μ_λ = ∇_λ w^μ_ν
        let mut codazzi = (0.0, vec![0, 0, 0, 0]);
        for (k, (wk, dwk)) in w.iter().zip(&dw).enumerate() {
            let nabla = |nu: usize, mu: usize, la: usize| {
                let mut v = dwk[nu][mu * n + la];
                for s in 0..n {
                    v += gamma.get(&[mu, nu, s]) * wk[(s, la)]
                        - gamma.get(&[s, nu, la]) * wk[(mu, s)];
                }
                v
            };
            for nu in 0..n {
                for mu in 0..n {
                    for la in nu + 1..n {
                        let d = (nabla(nu, mu, la) - nabla(la, mu, nu)).abs();
                        if d > codazzi.0 || d.is_nan() {
                            codazzi = (d, vec![k, nu, mu, la]);
                        }
                    }
                }
            }
        }

        // (iii) R^{ντ}_{μλ} = Σ e_k (w^ν_μ w^τ_λ − w^τ_μ w^ν_λ)
        let mut gauss = (0.0, vec![0; 4]);
        for (i, r) in raised.data.iter().enumerate() {
            let ix = raised.unflatten(i);
            let (nu, tau, mu, la) = (ix[0], ix[1], ix[2], ix[3]);
            let rhs: f64 = jets
                .iter()
                .zip(&w)
                .map(|(j, wk)| {
                    j.sign * (wk[(nu, mu)] * wk[(tau, la)] - wk[(tau, mu)] * wk[(nu, la)])
                })
                .sum();
            let d = (r - rhs).abs();
            if d > gauss.0 || d.is_nan() {
                gauss = (d, ix);
            }
        }

        // (iv) [w_k, w_k'] = 0
        let mut commutator = (0.0, vec![0, 0]);
        for a in 0..w.len() {
            for b in a + 1..w.len() {
                let d = (&w[a] * &w[b] - &w[b] * &w[a]).amax();
                if d > commutator.0 || d.is_nan() {
                    commutator = (d, vec![a, b]);
                }
            }
        }
        residuals.extend([sym, codazzi, gauss, commutator]);
        Ok(residuals)
    })?;
    let tol = &settings.tolerances;
    let names = [
        (G_SYMMETRIC, tol.tol_zero),
        (CONNECTION, tol.tol_zero),
        ("weingarten_symmetric", tol.tol_zero),
        ("codazzi", tol.tol_zero),
        ("gauss", tol.tol_zero),
        ("affinors_commute", tol.tol_commutator),
    ];
    let checks = names
        .iter()
        .zip(worst)
        .map(|((name, t), w)| Check::new(*name, w, *t))
        .collect();
    Ok(VerifyReport::new(
        sys,
        BracketClass::Fer,
        checks,
        Verdict::Ferapontov,
    ))
}

/// Liouville (physical) form: `g = γ + γᵀ`, `b^{νμ}_λ = ∂_λ γ^{νμ}`.
///
/// The report passes when the system is in this form. Its verdict is
/// `DN_FLAT` only if the flatness checks pass as well.
pub fn check_liouville(
    sys: &SystemDef,
    bounds: &CoordBox,
    settings: &Settings,
) -> Result<VerifyReport, VerifyError> {
    require_metric(sys, bounds)?;
    let gamma = sys
        .gamma
        .as_ref()
        .ok_or_else(|| VerifyError::MissingGamma(sys.name.clone()))?;
    let n = sys.dim();
    let d_gamma: Vec<ExprTensor> = (0..n).map(|k| gamma.differentiate(k)).collect();
    let geo = Geometry::new(sys);
    let params = &sys.params;
    let points = settings.plan.points(bounds);
    let worst = sweep(&points, 2, |u| {
        let up = geo.metric_upper_matrix(u)?;
        let gm = geo.eval_matrix(gamma, u)?;
        let mut metric = (0.0, vec![0, 0]);
        for nu in 0..n {
            for mu in 0..n {
                let d = (up[(nu, mu)] - gm[(nu, mu)] - gm[(mu, nu)]).abs();
                if d > metric.0 || d.is_nan() {
                    metric = (d, vec![nu, mu]);
                }
            }
        }
        let b = match &sys.b {
            Some(b) => b.evaluate(u, params).map_err(GeometryError::from)?,
            None => vec![0.0; n * n * n],
        };
        let dg: Vec<Vec<f64>> = d_gamma
            .iter()
            .map(|d| d.evaluate(u, params))
            .collect::<Result<_, _>>()
            .map_err(GeometryError::from)?;
        let mut connection = (0.0, vec![0, 0, 0]);
        for nu in 0..n {
            for mu in 0..n {
                for la in 0..n {
                    let d = (b[(nu * n + mu) * n + la] - dg[la][nu * n + mu]).abs();
                    if d > connection.0 || d.is_nan() {
                        connection = (d, vec![nu, mu, la]);
                    }
                }
            }
        }
        Ok(vec![metric, connection])
    })?;
    let tol = settings.tolerances.tol_zero;
    let checks: Vec<Check> = ["liouville_metric", "liouville_connection"]
        .iter()
        .zip(worst)
        .map(|(name, w)| Check::new(*name, w, tol))
        .collect();
    let form = checks.iter().all(|c| c.pass);
    let mut report = VerifyReport::new(sys, BracketClass::Liouville, checks, Verdict::DnFlat);
    if form {
        let dn = check_dn(sys, bounds, settings)?;
        if !dn.pass {
            report.verdict = dn.verdict;
            report
                .flags
                .push("coefficients have Liouville form but the metric is not flat".into());
        }
    } else {
        report.verdict = Verdict::Indeterminate;
        report
            .flags
            .push("coefficients are not in Liouville form".into());
    }
    Ok(report)
}

/// DN, then MF, then Ferapontov when affinors are declared. Returns the
/// first passing report, or the last one attempted.
pub fn check_auto(
    sys: &SystemDef,
    bounds: &CoordBox,
    settings: &Settings,
) -> Result<VerifyReport, VerifyError> {
    let dn = check_dn(sys, bounds, settings)?;
    if dn.pass {
        return Ok(dn);
    }
    let mut mf = check_mf(sys, bounds, settings)?;
    mf.flags
        .push(format!("DN conditions failed ({})", dn.verdict));
    if mf.pass || sys.affinors.as_ref().map_or(true, Vec::is_empty) {
        return Ok(mf);
    }
    let mut fer = check_ferapontov(sys, bounds, settings)?;
    fer.flags
        .push(format!("MF conditions failed ({})", mf.verdict));
    Ok(fer)
}
