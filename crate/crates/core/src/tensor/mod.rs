//! Metric-derived objects evaluated at points of a chart.
//!
//! Every derivative entering the Christoffel symbols, the curvature tensor
//! and the Nijenhuis/Hantjes tensors comes from exact symbolic
//! differentiation of the system's expressions. Derivatives of the lower
//! metric are assembled numerically from exact derivatives of `g^{νμ}`
//! through `∂g_low = -g_low (∂g_up) g_low`.

mod system;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::DomainError;
use crate::report::{Check, Worst};
use crate::sampling::{CoordBox, SamplePlan};

pub use system::{Affinor, ExprTensor, SystemDef, SystemError};

/// Determinant magnitude below which a metric is singular.
pub const SINGULAR_DET: f64 = 1e-300;
/// Condition number above which a metric is singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("singular metric at {point:?}: {detail}")]
    SingularMetric { point: Vec<f64>, detail: String },
    #[error("{0}")]
    Domain(#[from] DomainError),
    #[error("system `{system}` has no {field}")]
    Missing { system: String, field: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variance {
    Upper,
    Lower,
}

/// Dense numeric tensor at a basepoint, row-major over `rank` axes of
/// length `dim`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorValue {
    pub dim: usize,
    pub variance: Vec<Variance>,
    pub data: Vec<f64>,
    pub basepoint: Vec<f64>,
}

impl TensorValue {
    pub fn zeros(dim: usize, variance: Vec<Variance>, basepoint: &[f64]) -> Self {
        let len = dim.pow(variance.len() as u32);
        TensorValue {
            dim,
            variance,
            data: vec![0.0; len],
            basepoint: basepoint.to_vec(),
        }
    }

    fn from_matrix(m: &DMatrix<f64>, variance: [Variance; 2], basepoint: &[f64]) -> Self {
        let n = m.nrows();
        let mut t = TensorValue::zeros(n, variance.to_vec(), basepoint);
        for i in 0..n {
            for j in 0..n {
                t.data[i * n + j] = m[(i, j)];
            }
        }
        t
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    fn flat(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        index.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let k = self.flat(index);
        self.data[k] = value;
    }

    /// Multi-index of a flat position.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.rank()];
        for axis in (0..self.rank()).rev() {
            index[axis] = flat % self.dim;
            flat /= self.dim;
        }
        index
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry with its multi-index.
    pub fn argmax_abs(&self) -> (f64, Vec<usize>) {
        let (k, v) = self
            .data
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bk, bv), (k, v)| {
                if v.abs() > bv {
                    (k, v.abs())
                } else {
                    (bk, bv)
                }
            });
        (v, self.unflatten(k))
    }

    pub fn max_abs_diff(&self, other: &TensorValue) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Max of `|T[..a..b..] + T[..b..a..]|` over all entries.
    pub fn antisymmetry_residual(&self, a: usize, b: usize) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.data.len() {
            let mut ix = self.unflatten(k);
            let v = self.data[k];
            ix.swap(a, b);
            worst = worst.max((v + self.get(&ix)).abs());
        }
        worst
    }

    pub fn symmetry_residual(&self, a: usize, b: usize) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.data.len() {
            let mut ix = self.unflatten(k);
            let v = self.data[k];
            ix.swap(a, b);
            worst = worst.max((v - self.get(&ix)).abs());
        }
        worst
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.rank(), 2);
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

/// Connection coefficients `Γ^ν_{μλ}` together with their first partial
/// derivatives `∂_κ Γ^ν_{μλ}` (indexed `[ν][μ][λ][κ]`).
#[derive(Clone, Debug)]
pub struct ConnectionJet {
    pub gamma: TensorValue,
    pub d_gamma: TensorValue,
}

/// Which connection the curvature is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectionSource {
    /// `Γ = -g_low · b` when `b` is present, otherwise Levi-Civita.
    System,
    /// Always the Levi-Civita connection of the metric.
    LeviCivita,
}

/// Curvature in both index placements.
#[derive(Clone, Debug)]
pub struct Curvature {
    /// `R^ν_{τμλ}`
    pub mixed: TensorValue,
    /// `R^{ντ}_{μλ} = g^{τσ} R^ν_{σμλ}`
    pub raised: TensorValue,
}

/// A system with all symbolic derivatives required for geometry
/// precomputed. Cheap to share across threads.
#[derive(Clone, Debug)]
pub struct Geometry<'a> {
    pub sys: &'a SystemDef,
    g_upper: Option<ExprTensor>,
    dg_upper: Vec<ExprTensor>,
    ddg_upper: Vec<Vec<ExprTensor>>,
    db: Vec<ExprTensor>,
    operator: Option<ExprTensor>,
    d_operator: Vec<ExprTensor>,
}

impl<'a> Geometry<'a> {
    pub fn new(sys: &'a SystemDef) -> Self {
        let n = sys.dim();
        let g_upper = sys.g_upper.clone();
        let dg_upper: Vec<ExprTensor> = match &g_upper {
            Some(g) => (0..n).map(|r| g.differentiate(r)).collect(),
            None => Vec::new(),
        };
        let ddg_upper = dg_upper
            .iter()
            .map(|d| (0..n).map(|k| d.differentiate(k)).collect())
            .collect();
        let db = match &sys.b {
            Some(b) => (0..n).map(|k| b.differentiate(k)).collect(),
            None => Vec::new(),
        };
        let operator = sys.operator();
        let d_operator = match &operator {
            Some(v) => (0..n).map(|s| v.differentiate(s)).collect(),
            None => Vec::new(),
        };
        Geometry {
            sys,
            g_upper,
            dg_upper,
            ddg_upper,
            db,
            operator,
            d_operator,
        }
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn missing(&self, field: &'static str) -> GeometryError {
        GeometryError::Missing {
            system: self.sys.name.clone(),
            field,
        }
    }

    pub(crate) fn eval_matrix(
        &self,
        t: &ExprTensor,
        u: &[f64],
    ) -> Result<DMatrix<f64>, GeometryError> {
        let n = t.dim();
        let values = t.evaluate(u, &self.sys.params)?;
        Ok(DMatrix::from_row_slice(n, n, &values))
    }

    pub fn metric_upper_matrix(&self, u: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let g = self
            .g_upper
            .as_ref()
            .ok_or_else(|| self.missing("g_upper"))?;
        self.eval_matrix(g, u)
    }

    pub fn metric_lower_matrix(&self, u: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        invert_metric(&self.metric_upper_matrix(u)?, u)
    }

    pub fn metric_lower(&self, u: &[f64]) -> Result<TensorValue, GeometryError> {
        let g = self.metric_lower_matrix(u)?;
        Ok(TensorValue::from_matrix(
            &g,
            [Variance::Lower, Variance::Lower],
            u,
        ))
    }

    /// Lower metric and its first and second partials.
    fn lower_metric_jet(
        &self,
        u: &[f64],
    ) -> Result<
        (
            DMatrix<f64>,
            DMatrix<f64>,
            Vec<DMatrix<f64>>,
            Vec<Vec<DMatrix<f64>>>,
        ),
        GeometryError,
    > {
        let n = self.dim();
        let up = self.metric_upper_matrix(u)?;
        let low = invert_metric(&up, u)?;
        let d_up = self
            .dg_upper
            .iter()
            .map(|d| self.eval_matrix(d, u))
            .collect::<Result<Vec<_>, _>>()?;
        let d_low: Vec<DMatrix<f64>> = d_up.iter().map(|d| -(&low * d * &low)).collect();
        let mut dd_low = vec![vec![DMatrix::zeros(n, n); n]; n];
        for r in 0..n {
            for k in 0..n {
                let dd_up = self.eval_matrix(&self.ddg_upper[r][k], u)?;
                dd_low[r][k] = -(&d_low[k] * &d_up[r] * &low
                    + &low * dd_up * &low
                    + &low * &d_up[r] * &d_low[k]);
            }
        }
        Ok((up, low, d_low, dd_low))
    }

    /// Levi-Civita connection of `g_low = (g^up)^{-1}` with its derivatives.
    pub fn levi_civita_jet(&self, u: &[f64]) -> Result<ConnectionJet, GeometryError> {
        let n = self.dim();
        let (up, _low, d_low, dd_low) = self.lower_metric_jet(u)?;
        let d_up: Vec<DMatrix<f64>> = self
            .dg_upper
            .iter()
            .map(|d| self.eval_matrix(d, u))
            .collect::<Result<_, _>>()?;
        let mut gamma = TensorValue::zeros(
            n,
            vec![Variance::Upper, Variance::Lower, Variance::Lower],
            u,
        );
        let mut d_gamma = TensorValue::zeros(
            n,
            vec![
                Variance::Upper,
                Variance::Lower,
                Variance::Lower,
                Variance::Lower,
            ],
            u,
        );
        for nu in 0..n {
            for mu in 0..n {
                for la in 0..n {
                    let mut value = 0.0;
                    for s in 0..n {
                        let first = d_low[mu][(s, la)] + d_low[la][(s, mu)] - d_low[s][(mu, la)];
                        value += 0.5 * up[(nu, s)] * first;
                    }
                    gamma.set(&[nu, mu, la], value);
                    for k in 0..n {
                        let mut dv = 0.0;
                        for s in 0..n {
                            let first =
                                d_low[mu][(s, la)] + d_low[la][(s, mu)] - d_low[s][(mu, la)];
                            let second = dd_low[mu][k][(s, la)] + dd_low[la][k][(s, mu)]
                                - dd_low[s][k][(mu, la)];
                            dv += 0.5 * (d_up[k][(nu, s)] * first + up[(nu, s)] * second);
                        }
                        d_gamma.set(&[nu, mu, la, k], dv);
                    }
                }
            }
        }
        Ok(ConnectionJet { gamma, d_gamma })
    }

    /// `Γ^ν_{μλ} = -g_{μσ} b^{σν}_λ` with derivatives; `None` without `b`.
    pub fn bracket_connection_jet(
        &self,
        u: &[f64],
    ) -> Result<Option<ConnectionJet>, GeometryError> {
        let Some(b) = &self.sys.b else {
            return Ok(None);
        };
        let n = self.dim();
        let (_up, low, d_low, _dd) = self.lower_metric_jet(u)?;
        let params = &self.sys.params;
        let bv = b.evaluate(u, params)?;
        let dbv = self
            .db
            .iter()
            .map(|d| d.evaluate(u, params))
            .collect::<Result<Vec<_>, _>>()?;
        let b_at = |s: usize, nu: usize, la: usize| bv[(s * n + nu) * n + la];
        let mut gamma = TensorValue::zeros(
            n,
            vec![Variance::Upper, Variance::Lower, Variance::Lower],
            u,
        );
        let mut d_gamma = TensorValue::zeros(
            n,
            vec![
                Variance::Upper,
                Variance::Lower,
                Variance::Lower,
                Variance::Lower,
            ],
            u,
        );
        for nu in 0..n {
            for mu in 0..n {
                for la in 0..n {
                    let value: f64 = (0..n).map(|s| -low[(mu, s)] * b_at(s, nu, la)).sum();
                    gamma.set(&[nu, mu, la], value);
                    for k in 0..n {
                        let dv: f64 = (0..n)
                            .map(|s| {
                                -d_low[k][(mu, s)] * b_at(s, nu, la)
                                    - low[(mu, s)] * dbv[k][(s * n + nu) * n + la]
                            })
                            .sum();
                        d_gamma.set(&[nu, mu, la, k], dv);
                    }
                }
            }
        }
        Ok(Some(ConnectionJet { gamma, d_gamma }))
    }

    pub fn connection_jet(
        &self,
        u: &[f64],
        source: ConnectionSource,
    ) -> Result<ConnectionJet, GeometryError> {
        if source == ConnectionSource::System {
            if let Some(jet) = self.bracket_connection_jet(u)? {
                return Ok(jet);
            }
        }
        self.levi_civita_jet(u)
    }

    pub fn christoffel(&self, u: &[f64]) -> Result<TensorValue, GeometryError> {
        Ok(self.connection_jet(u, ConnectionSource::System)?.gamma)
    }

    pub fn levi_civita(&self, u: &[f64]) -> Result<TensorValue, GeometryError> {
        Ok(self.levi_civita_jet(u)?.gamma)
    }

    pub fn curvature(
        &self,
        u: &[f64],
        source: ConnectionSource,
    ) -> Result<Curvature, GeometryError> {
        let jet = self.connection_jet(u, source)?;
        let up = self.metric_upper_matrix(u)?;
        Ok(curvature_from_jet(&jet, &up))
    }

    fn operator_parts(
        &self,
        u: &[f64],
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), GeometryError> {
        let v = self
            .operator
            .as_ref()
            .ok_or_else(|| self.missing("operator V or v_diag"))?;
        let vm = self.eval_matrix(v, u)?;
        let dv = self
            .d_operator
            .iter()
            .map(|d| self.eval_matrix(d, u))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((vm, dv))
    }

    pub fn operator_matrix(&self, u: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        Ok(self.operator_parts(u)?.0)
    }

    pub fn nijenhuis(&self, u: &[f64]) -> Result<TensorValue, GeometryError> {
        let (v, dv) = self.operator_parts(u)?;
        Ok(nijenhuis_from_parts(&v, &dv, u))
    }

    pub fn hantjes(&self, u: &[f64]) -> Result<TensorValue, GeometryError> {
        let (v, dv) = self.operator_parts(u)?;
        let nij = nijenhuis_from_parts(&v, &dv, u);
        Ok(hantjes_from_parts(&v, &nij, u))
    }
}

pub(crate) fn invert_metric(up: &DMatrix<f64>, u: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
    let singular = |detail: String| GeometryError::SingularMetric {
        point: u.to_vec(),
        detail,
    };
    let det = up.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET {
        return Err(singular(format!("determinant {det:e}")));
    }
    let sv = up.singular_values();
    let (hi, lo) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(h, l), s| (h.max(*s), l.min(*s)));
    if lo == 0.0 || hi / lo > MAX_CONDITION {
        return Err(singular(format!("condition number {:e}", hi / lo)));
    }
    let mut low = up
        .clone()
        .try_inverse()
        .ok_or_else(|| singular("inversion failed".into()))?;
    if (up - up.transpose()).amax() == 0.0 {
        low = 0.5 * (&low + low.transpose());
    }
    Ok(low)
}

/// `R^ν_{τμλ} = ∂_μ Γ^ν_{τλ} - ∂_λ Γ^ν_{τμ} + Γ^ν_{σμ} Γ^σ_{τλ} - Γ^ν_{σλ} Γ^σ_{τμ}`
pub fn curvature_from_jet(jet: &ConnectionJet, g_upper: &DMatrix<f64>) -> Curvature {
    let n = jet.gamma.dim;
    let u = &jet.gamma.basepoint;
    let g = |a: usize, b: usize, c: usize| jet.gamma.get(&[a, b, c]);
    let dg = |a: usize, b: usize, c: usize, k: usize| jet.d_gamma.get(&[a, b, c, k]);
    let variance = vec![
        Variance::Upper,
        Variance::Lower,
        Variance::Lower,
        Variance::Lower,
    ];
    let mut mixed = TensorValue::zeros(n, variance, u);
    for nu in 0..n {
        for tau in 0..n {
            for mu in 0..n {
                for la in 0..n {
                    let mut value = dg(nu, tau, la, mu) - dg(nu, tau, mu, la);
                    for s in 0..n {
                        value += g(nu, s, mu) * g(s, tau, la) - g(nu, s, la) * g(s, tau, mu);
                    }
                    mixed.set(&[nu, tau, mu, la], value);
                }
            }
        }
    }
    let variance = vec![
        Variance::Upper,
        Variance::Upper,
        Variance::Lower,
        Variance::Lower,
    ];
    let mut raised = TensorValue::zeros(n, variance, u);
    for nu in 0..n {
        for tau in 0..n {
            for mu in 0..n {
                for la in 0..n {
                    let value: f64 = (0..n)
                        .map(|s| g_upper[(tau, s)] * mixed.get(&[nu, s, mu, la]))
                        .sum();
                    raised.set(&[nu, tau, mu, la], value);
                }
            }
        }
    }
    Curvature { mixed, raised }
}

/// `N^ν_{μλ} = V^σ_μ ∂_σ V^ν_λ - V^σ_λ ∂_σ V^ν_μ + V^ν_σ (∂_λ V^σ_μ - ∂_μ V^σ_λ)`,
/// where `dv[σ][(ν, λ)] = ∂V^ν_λ / ∂U^σ`.
pub fn nijenhuis_from_parts(v: &DMatrix<f64>, dv: &[DMatrix<f64>], u: &[f64]) -> TensorValue {
    let n = v.nrows();
    let mut t = TensorValue::zeros(
        n,
        vec![Variance::Upper, Variance::Lower, Variance::Lower],
        u,
    );
    for nu in 0..n {
        for mu in 0..n {
            for la in 0..n {
                let mut value = 0.0;
                for s in 0..n {
                    value += v[(s, mu)] * dv[s][(nu, la)] - v[(s, la)] * dv[s][(nu, mu)]
                        + v[(nu, s)] * (dv[la][(s, mu)] - dv[mu][(s, la)]);
                }
                t.set(&[nu, mu, la], value);
            }
        }
    }
    t
}

/// `H^ν_{μλ} = V^ν_σ V^σ_τ N^τ_{μλ} - V^ν_σ N^σ_{τλ} V^τ_μ - V^ν_σ N^σ_{μτ} V^τ_λ + N^ν_{στ} V^σ_μ V^τ_λ`
pub fn hantjes_from_parts(v: &DMatrix<f64>, nij: &TensorValue, u: &[f64]) -> TensorValue {
    let n = v.nrows();
    let v2 = v * v;
    let nt = |a: usize, b: usize, c: usize| nij.get(&[a, b, c]);
    let mut t = TensorValue::zeros(
        n,
        vec![Variance::Upper, Variance::Lower, Variance::Lower],
        u,
    );
    for nu in 0..n {
        for mu in 0..n {
            for la in 0..n {
                let mut value = 0.0;
                for s in 0..n {
                    value += v2[(nu, s)] * nt(s, mu, la);
                    for tau in 0..n {
                        value -= v[(nu, s)] * nt(s, tau, la) * v[(tau, mu)];
                        value -= v[(nu, s)] * nt(s, mu, tau) * v[(tau, la)];
                        value += nt(nu, s, tau) * v[(s, mu)] * v[(tau, la)];
                    }
                }
                t.set(&[nu, mu, la], value);
            }
        }
    }
    t
}

pub fn metric_lower(sys: &SystemDef, u: &[f64]) -> Result<TensorValue, GeometryError> {
    Geometry::new(sys).metric_lower(u)
}

pub fn christoffel(sys: &SystemDef, u: &[f64]) -> Result<TensorValue, GeometryError> {
    Geometry::new(sys).christoffel(u)
}

pub fn riemann_curvature(sys: &SystemDef, u: &[f64]) -> Result<Curvature, GeometryError> {
    Geometry::new(sys).curvature(u, ConnectionSource::System)
}

pub fn nijenhuis(sys: &SystemDef, u: &[f64]) -> Result<TensorValue, GeometryError> {
    Geometry::new(sys).nijenhuis(u)
}

pub fn hantjes(sys: &SystemDef, u: &[f64]) -> Result<TensorValue, GeometryError> {
    Geometry::new(sys).hantjes(u)
}

/// Spectrum of `V` at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hyperbolicity {
    pub point: Vec<f64>,
    pub eigenvalues: Vec<(f64, f64)>,
    pub min_gap: f64,
    pub real: bool,
}

/// Minimum eigenvalue separation below which a point counts as an
/// eigenvalue collision.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

impl Hyperbolicity {
    pub fn strictly_hyperbolic(&self) -> bool {
        self.real && self.min_gap > EIGEN_GAP_TOL
    }
}

pub fn hyperbolicity(v: &DMatrix<f64>, u: &[f64]) -> Hyperbolicity {
    let scale = v.amax().max(1.0);
    let mut eigenvalues: Vec<(f64, f64)> = v
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect();
    eigenvalues.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let real = eigenvalues.iter().all(|(_, im)| im.abs() <= 1e-12 * scale);
    let mut min_gap = f64::INFINITY;
    for i in 0..eigenvalues.len() {
        for j in i + 1..eigenvalues.len() {
            let (a, b) = (eigenvalues[i], eigenvalues[j]);
            min_gap = min_gap.min((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    Hyperbolicity {
        point: u.to_vec(),
        eigenvalues,
        min_gap,
        real,
    }
}

/// Sampled verdict on whether the Hantjes tensor vanishes identically.
#[derive(Clone, Debug, Serialize)]
pub struct DiagonalizabilityReport {
    pub check: Check,
    /// Sample points where `V` has coinciding or complex eigenvalues; the
    /// tensor is still evaluated there.
    pub warnings: Vec<Hyperbolicity>,
}

pub fn hantjes_check(
    sys: &SystemDef,
    bounds: &CoordBox,
    plan: &SamplePlan,
    tol_zero: f64,
) -> Result<DiagonalizabilityReport, GeometryError> {
    let geo = Geometry::new(sys);
    let points = plan.points(bounds);
    let per_point = points
        .par_iter()
        .map(|u| {
            let h = geo.hantjes(u)?;
            let (value, index) = h.argmax_abs();
            let spectrum = hyperbolicity(&geo.operator_matrix(u)?, u);
            Ok((u.clone(), value, index, spectrum))
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let mut worst = Worst::default();
    let mut warnings = Vec::new();
    for (u, value, index, spectrum) in per_point {
        worst.observe(value, &u, Some(index));
        if !spectrum.strictly_hyperbolic() {
            warnings.push(spectrum);
        }
    }
    Ok(DiagonalizabilityReport {
        check: Check::new("hantjes_zero", worst, tol_zero),
        warnings,
    })
}
