use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::VerifyError;
use crate::report::{Check, Witness};
use crate::sampling::{CoordBox, SamplePlan};
use crate::tensor::{Geometry, GeometryError, SystemDef};

/// Roots of `det(g1 − λ g2) = 0` at one sample, sorted by real then
/// imaginary part.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PencilSample {
    pub point: Vec<f64>,
    pub roots: Vec<(f64, f64)>,
    pub min_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PencilReport {
    pub samples: Vec<PencilSample>,
    /// Residual is the smallest root separation; passes iff it exceeds
    /// `tol_gap` at every sample.
    pub check: Check,
}

impl PencilReport {
    pub fn non_singular(&self) -> bool {
        self.check.pass
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Generalized eigenvalues of the pair `(g1, g2)`. Symmetric pairs with
/// `g2` positive definite are reduced to a symmetric problem through the
/// Cholesky factor of `g2`; anything else goes through `g2⁻¹ g1`.
pub fn pencil_roots(
    g1: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    point: &[f64],
) -> Result<Vec<(f64, f64)>, GeometryError> {
    let singular = |detail: &str| GeometryError::SingularMetric {
        point: point.to_vec(),
        detail: detail.into(),
    };
    let mut roots: Vec<(f64, f64)> = if is_symmetric(g1) && is_symmetric(g2) {
        match g2.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                let l_inv = l
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| singular("second metric"))?;
                let reduced = &l_inv * g1 * l_inv.transpose();
                let reduced = (&reduced + reduced.transpose()) * 0.5;
                reduced
                    .symmetric_eigenvalues()
                    .iter()
                    .map(|&x| (x, 0.0))
                    .collect()
            }
            None => general_roots(g1, g2).ok_or_else(|| singular("second metric"))?,
        }
    } else {
        general_roots(g1, g2).ok_or_else(|| singular("second metric"))?
    };
    roots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(roots)
}

fn general_roots(g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> Option<Vec<(f64, f64)>> {
    let inv = g2.clone().try_inverse()?;
    Some(
        (inv * g1)
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect(),
    )
}

fn min_gap(roots: &[(f64, f64)]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            gap = gap.min((roots[i].0 - roots[j].0).hypot(roots[i].1 - roots[j].1));
        }
    }
    gap
}

/// Distinctness of the roots of the pencil of two upper metrics in the
/// same chart.
pub fn pencil_regularity(
    g1: &SystemDef,
    g2: &SystemDef,
    bounds: &CoordBox,
    plan: &SamplePlan,
    tol_gap: f64,
) -> Result<PencilReport, VerifyError> {
    for sys in [g1, g2] {
        if sys.g_upper.is_none() {
            return Err(VerifyError::MissingMetric(sys.name.clone()));
        }
        if sys.dim() != bounds.dim() {
            return Err(VerifyError::DimensionMismatch {
                expected: sys.dim(),
                found: bounds.dim(),
            });
        }
    }
    let (geo1, geo2) = (Geometry::new(g1), Geometry::new(g2));
    let samples = plan
        .points(bounds)
        .par_iter()
        .map(|u| {
            let a = geo1.metric_upper_matrix(u)?;
            let b = geo2.metric_upper_matrix(u)?;
            // both metrics must be non-degenerate
            geo1.metric_lower_matrix(u)?;
            geo2.metric_lower_matrix(u)?;
            let roots = pencil_roots(&a, &b, u)?;
            let min_gap = min_gap(&roots);
            Ok(PencilSample {
                point: u.clone(),
                roots,
                min_gap,
            })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let worst = samples
        .iter()
        .fold(None::<&PencilSample>, |acc, s| match acc {
            Some(best) if !(s.min_gap < best.min_gap) => Some(best),
            _ => Some(s),
        });
    let residual = worst.map_or(f64::INFINITY, |s| s.min_gap);
    let pass = residual > tol_gap;
    let check = Check {
        name: "pencil_root_gap".into(),
        residual,
        tol: tol_gap,
        pass,
        witness: worst.map(|s| Witness {
            point: s.point.clone(),
            index: None,
        }),
    };
    Ok(PencilReport { samples, check })
}
