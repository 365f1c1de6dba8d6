use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::interp::{bicubic, central4, derivative4, Corner};
use super::{DiagonalSystem, HodographError};
use crate::expr::{DomainError, Expr};
use crate::report::{Check, Worst};
use crate::sampling::{CoordBox, SamplePlan};

/// Default tolerance for commuting-flow residuals of integrated flows.
pub const DEFAULT_TOL_GOURSAT: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    UserSupplied,
    Integrated,
}

/// Closed-form `w^ν(R)` with its exact gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFlow {
    pub w: Vec<Expr>,
    params: Vec<f64>,
    /// `[ν][μ] = ∂_μ w^ν`
    gradient: Vec<Vec<Expr>>,
}

impl ClosedFlow {
    fn value(&self, r: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.w.iter().map(|e| e.evaluate(r, &self.params)).collect()
    }

    fn jacobian(&self, r: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        let n = self.w.len();
        let mut m = DMatrix::zeros(n, n);
        for nu in 0..n {
            for mu in 0..n {
                m[(nu, mu)] = self.gradient[nu][mu].evaluate(r, &self.params)?;
            }
        }
        Ok(m)
    }
}

/// Two-component flow sampled on a uniform node grid over the chart box,
/// with nodal gradients for bicubic Hermite interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFlow {
    pub bounds: CoordBox,
    /// Cells per axis.
    pub cells: usize,
    pub basepoint: Vec<f64>,
    step: [f64; 2],
    /// Node arrays indexed `i * (cells + 1) + j`, `i` along `R¹`.
    w: [Vec<f64>; 2],
    d1: [Vec<f64>; 2],
    d2: [Vec<f64>; 2],
    d12: [Vec<f64>; 2],
    /// `a¹₂` and `a²₁` at the nodes.
    a: [Vec<f64>; 2],
}

impl GridFlow {
    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nodes() + j
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.bounds.min[0] + i as f64 * self.step[0],
            self.bounds.min[1] + j as f64 * self.step[1],
        ]
    }

    pub fn node_value(&self, i: usize, j: usize) -> [f64; 2] {
        let k = self.idx(i, j);
        [self.w[0][k], self.w[1][k]]
    }

    /// Interpolated `(w, ∂w)` with `∂w[ν][μ] = ∂_μ w^ν`; `None` outside
    /// the box.
    pub fn interpolate(&self, r: &[f64]) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let mut cell = [0usize; 2];
        let mut local = [0.0; 2];
        for axis in 0..2 {
            let s = (r[axis] - self.bounds.min[axis]) / self.step[axis];
            let slack = 1e-12 * self.cells as f64;
            if !s.is_finite() || s < -slack || s > self.cells as f64 + slack {
                return None;
            }
            let c = (s.floor().max(0.0) as usize).min(self.cells - 1);
            cell[axis] = c;
            local[axis] = s - c as f64;
        }
        let [i, j] = cell;
        let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
        let mut value = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for nu in 0..2 {
            let data = corners.map(|(a, b)| {
                let k = self.idx(a, b);
                Corner {
                    f: self.w[nu][k],
                    fx: self.d1[nu][k],
                    fy: self.d2[nu][k],
                    fxy: self.d12[nu][k],
                }
            });
            let [f, fx, fy] = bicubic(&data, self.step[0], self.step[1], local[0], local[1]);
            value[nu] = f;
            grad[nu] = [fx, fy];
        }
        Some((value, grad))
    }

    /// Largest nodal difference against a finer integration of the same
    /// problem whose grid contains this one.
    pub fn max_node_error(&self, reference: &GridFlow) -> Result<f64, HodographError> {
        if reference.bounds != self.bounds
            || reference.basepoint != self.basepoint
            || reference.cells % self.cells != 0
        {
            return Err(HodographError::Unsupported(
                "reference grid must refine this grid on the same box and basepoint".into(),
            ));
        }
        let ratio = reference.cells / self.cells;
        let mut err: f64 = 0.0;
        for i in 0..self.nodes() {
            for j in 0..self.nodes() {
                let a = self.node_value(i, j);
                let b = reference.node_value(i * ratio, j * ratio);
                err = err.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
            }
        }
        Ok(err)
    }

    /// Fourth-order central difference of the node array `f`.
    fn central(&self, f: &[f64], i: usize, j: usize, axis: usize) -> f64 {
        let value = |k: usize| {
            if axis == 0 {
                f[self.idx(k, j)]
            } else {
                f[self.idx(i, k)]
            }
        };
        let at = if axis == 0 { i } else { j };
        central4(value, at, self.nodes(), self.step[axis]).expect("interior node")
    }

    /// Worst residual over nodes at least two cells from the boundary.
    fn interior_max(&self, mut residual: impl FnMut(usize, usize) -> (f64, usize)) -> Worst {
        let mut worst = Worst::default();
        for i in 2..self.cells - 1 {
            for j in 2..self.cells - 1 {
                let (value, nu) = residual(i, j);
                worst.observe(value, &self.node(i, j), Some(vec![nu]));
            }
        }
        worst
    }

    fn commflows_worst(&self) -> Worst {
        self.interior_max(|i, j| {
            let k = self.idx(i, j);
            let (w1, w2) = (self.w[0][k], self.w[1][k]);
            let r1 = commflows_residual(self.central(&self.w[0], i, j, 1), self.a[0][k], w2 - w1);
            let r2 = commflows_residual(self.central(&self.w[1], i, j, 0), self.a[1][k], w1 - w2);
            if r2 > r1 {
                (r2, 1)
            } else {
                (r1, 0)
            }
        })
    }

    /// Cross-derivative consistency: `∂₁` of the equation-given `∂₂w¹`
    /// against `∂₂` of the differenced `∂₁w¹`, and likewise for `w²`.
    pub fn mixed_derivative_check(&self, tol: f64) -> Check {
        let worst = self.interior_max(|i, j| {
            let r1 =
                (self.central(&self.d2[0], i, j, 0) - self.central(&self.d1[0], i, j, 1)).abs();
            let r2 =
                (self.central(&self.d1[1], i, j, 1) - self.central(&self.d2[1], i, j, 0)).abs();
            if r2 > r1 {
                (r2, 1)
            } else {
                (r1, 0)
            }
        });
        Check::new("mixed_derivatives", worst, tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowData {
    Closed(ClosedFlow),
    Grid(GridFlow),
}

/// A candidate commuting flow `w^ν(R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommutingFlow {
    pub data: FlowData,
    pub provenance: Provenance,
}

impl CommutingFlow {
    /// User-supplied closed-form velocities, in the system's symbols.
    pub fn closed_form(sys: &DiagonalSystem, w: Vec<Expr>) -> Result<Self, HodographError> {
        if w.len() != sys.dim() {
            return Err(HodographError::Dimension {
                what: "w".into(),
                expected: sys.dim(),
                found: w.len(),
            });
        }
        let gradient = w
            .iter()
            .map(|e| (0..sys.dim()).map(|mu| e.differentiate(mu)).collect())
            .collect();
        Ok(CommutingFlow {
            data: FlowData::Closed(ClosedFlow {
                w,
                params: sys.params.clone(),
                gradient,
            }),
            provenance: Provenance::UserSupplied,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            FlowData::Closed(c) => c.w.len(),
            FlowData::Grid(_) => 2,
        }
    }

    pub fn grid(&self) -> Option<&GridFlow> {
        match &self.data {
            FlowData::Grid(g) => Some(g),
            FlowData::Closed(_) => None,
        }
    }

    /// `(w, ∂w)` with `∂w[(ν, μ)] = ∂_μ w^ν`; `None` off the domain.
    pub fn evaluate(&self, r: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>)> {
        match &self.data {
            FlowData::Closed(c) => Some((c.value(r).ok()?, c.jacobian(r).ok()?)),
            FlowData::Grid(g) => {
                let (w, d) = g.interpolate(r)?;
                Some((
                    w.to_vec(),
                    DMatrix::from_row_slice(2, 2, &[d[0][0], d[0][1], d[1][0], d[1][1]]),
                ))
            }
        }
    }
}

/// Residual of `∂_μ w^ν / (w^μ − w^ν) = a^ν_μ`, taken in the product
/// form `∂_μ w^ν − a^ν_μ (w^μ − w^ν)` where `|w^μ − w^ν| < 1` so that
/// coincident values (e.g. constant flows) stay well defined.
fn commflows_residual(dw: f64, a: f64, gap: f64) -> f64 {
    (dw - a * gap).abs() / gap.abs().max(1.0)
}

/// Worst commuting-flow residual over all `μ ≠ ν`. Closed forms are
/// tested at the sample points with exact derivatives, grid flows at
/// interior nodes by fourth-order central differences.
pub fn commflows_check(
    sys: &DiagonalSystem,
    flow: &CommutingFlow,
    plan: &SamplePlan,
    tol: f64,
) -> Result<Check, HodographError> {
    let worst = match &flow.data {
        FlowData::Grid(g) => g.commflows_worst(),
        FlowData::Closed(c) => {
            let n = sys.dim();
            let points = plan.points(&sys.bounds);
            let per_point = points
                .par_iter()
                .map(|r| {
                    let w = c.value(r)?;
                    let dw = c.jacobian(r)?;
                    let mut best = (0.0, vec![0, 0]);
                    for nu in 0..n {
                        for mu in (0..n).filter(|&mu| mu != nu) {
                            let a = sys.coupling(nu, mu).evaluate(r, &sys.params)?;
                            let res = commflows_residual(dw[(nu, mu)], a, w[mu] - w[nu]);
                            if res > best.0 || res.is_nan() {
                                best = (res, vec![nu, mu]);
                            }
                        }
                    }
                    Ok(best)
                })
                .collect::<Result<Vec<_>, DomainError>>()?;
            let mut worst = Worst::default();
            for (r, (value, index)) in points.iter().zip(per_point) {
                worst.observe(value, r, Some(index));
            }
            worst
        }
    };
    Ok(Check::new("commflows", worst, tol))
}

/// Node index of `value` on a uniform axis, if it is one.
fn axis_index(value: f64, min: f64, step: f64, cells: usize) -> Option<usize> {
    let s = (value - min) / step;
    let k = s.round();
    let on_node = (s - k).abs() <= 1e-9 * (1.0 + s.abs());
    (on_node && k >= 0.0 && k <= cells as f64).then_some(k as usize)
}

/// Integrates the two-component commuting-flow equations
/// `∂₂w¹ = a¹₂ (w² − w¹)`, `∂₁w² = a²₁ (w¹ − w²)` from data on the two
/// coordinate lines through `basepoint`: `boundary[0]` gives `w¹` on the
/// `R¹` line and `boundary[1]` gives `w²` on the `R²` line. Cells are
/// marched outward into all four quadrants with the trapezoidal rule.
pub fn integrate_commuting_flow(
    sys: &DiagonalSystem,
    basepoint: &[f64],
    boundary: &[Expr],
    cells: usize,
    tol_gap: f64,
) -> Result<CommutingFlow, HodographError> {
    if sys.dim() != 2 {
        return Err(HodographError::Unsupported(format!(
            "commuting flows are integrated only for N = 2 (got N = {}); \
             supply a closed-form w instead",
            sys.dim()
        )));
    }
    for (what, found) in [("basepoint", basepoint.len()), ("boundary", boundary.len())] {
        if found != 2 {
            return Err(HodographError::Dimension {
                what: what.into(),
                expected: 2,
                found,
            });
        }
    }
    if cells < 4 {
        return Err(HodographError::Unsupported(
            "the flow grid needs at least 4 cells per axis".into(),
        ));
    }
    let bounds = sys.bounds.clone();
    let step = [
        bounds.extent(0) / cells as f64,
        bounds.extent(1) / cells as f64,
    ];
    let base = match (
        axis_index(basepoint[0], bounds.min[0], step[0], cells),
        axis_index(basepoint[1], bounds.min[1], step[1], cells),
    ) {
        (Some(i), Some(j)) => [i, j],
        _ => return Err(HodographError::BasepointOffGrid(basepoint.to_vec())),
    };
    let nodes = cells + 1;
    let idx = |i: usize, j: usize| i * nodes + j;
    let node = |i: usize, j: usize| {
        vec![
            bounds.min[0] + i as f64 * step[0],
            bounds.min[1] + j as f64 * step[1],
        ]
    };

    let exprs = [
        sys.coupling(0, 1).clone(),
        sys.coupling(1, 0).clone(),
        sys.coupling(0, 1).differentiate(0).simplify(),
        sys.coupling(1, 0).differentiate(1).simplify(),
    ];
    let per_node = (0..nodes * nodes)
        .into_par_iter()
        .map(|k| {
            let r = node(k / nodes, k % nodes);
            let gap = sys.gap_at(&r)?;
            if gap.is_nan() || gap <= tol_gap {
                return Err(HodographError::HyperbolicityViolation { point: r, gap });
            }
            let mut out = [0.0; 4];
            for (o, e) in out.iter_mut().zip(&exprs) {
                *o = e.evaluate(&r, &sys.params)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, HodographError>>()?;
    let column = |c: usize| per_node.iter().map(|v| v[c]).collect::<Vec<f64>>();
    let (a12, a21, da12, da21) = (column(0), column(1), column(2), column(3));

    let mut w1 = vec![f64::NAN; nodes * nodes];
    let mut w2 = vec![f64::NAN; nodes * nodes];
    let [i0, j0] = base;
    for i in 0..nodes {
        w1[idx(i, j0)] = boundary[0].evaluate(&node(i, j0), &sys.params)?;
    }
    for j in 0..nodes {
        w2[idx(i0, j)] = boundary[1].evaluate(&node(i0, j), &sys.params)?;
    }

    let singular = |pivot: f64, k: usize| {
        if pivot.abs() < 1e-12 {
            Err(HodographError::NonConvergence {
                point: node(k / nodes, k % nodes),
            })
        } else {
            Ok(())
        }
    };
    // outward ranges along one axis: (from, to) node pairs
    let walk = |start: usize, dir: isize| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut cur = start as isize;
        while (0..nodes as isize).contains(&(cur + dir)) {
            out.push((cur as usize, (cur + dir) as usize));
            cur += dir;
        }
        out
    };

    for dir in [1isize, -1] {
        // w² along the R¹ line through the basepoint
        let hs = dir as f64 * step[0] * 0.5;
        for (i, ip) in walk(i0, dir) {
            let (k, kp) = (idx(i, j0), idx(ip, j0));
            let pivot = 1.0 + hs * a21[kp];
            singular(pivot, kp)?;
            w2[kp] = (w2[k] + hs * (a21[k] * (w1[k] - w2[k]) + a21[kp] * w1[kp])) / pivot;
        }
        // w¹ along the R² line
        let ks = dir as f64 * step[1] * 0.5;
        for (j, jp) in walk(j0, dir) {
            let (k, kp) = (idx(i0, j), idx(i0, jp));
            let pivot = 1.0 + ks * a12[kp];
            singular(pivot, kp)?;
            w1[kp] = (w1[k] + ks * (a12[k] * (w2[k] - w1[k]) + a12[kp] * w2[kp])) / pivot;
        }
    }

    for di in [1isize, -1] {
        for dj in [1isize, -1] {
            let hs = di as f64 * step[0] * 0.5;
            let ks = dj as f64 * step[1] * 0.5;
            for (i, ip) in walk(i0, di) {
                for (j, jp) in walk(j0, dj) {
                    // known: (ip, j) below and (i, jp) beside the new corner
                    let (kb, ks_, kn) = (idx(ip, j), idx(i, jp), idx(ip, jp));
                    let alpha = ks * a12[kn];
                    let beta = hs * a21[kn];
                    let p = w1[kb] + ks * a12[kb] * (w2[kb] - w1[kb]);
                    let q = w2[ks_] + hs * a21[ks_] * (w1[ks_] - w2[ks_]);
                    // (1+α) w¹ − α w² = p,  −β w¹ + (1+β) w² = q
                    let det = 1.0 + alpha + beta;
                    singular(det, kn)?;
                    w1[kn] = ((1.0 + beta) * p + alpha * q) / det;
                    w2[kn] = (beta * p + (1.0 + alpha) * q) / det;
                }
            }
        }
    }

    // exact ∂₂w¹ and ∂₁w² from the equations, differenced ∂₁w¹ and ∂₂w²
    let d2w1: Vec<f64> = (0..nodes * nodes)
        .map(|k| a12[k] * (w2[k] - w1[k]))
        .collect();
    let d1w2: Vec<f64> = (0..nodes * nodes)
        .map(|k| a21[k] * (w1[k] - w2[k]))
        .collect();
    let mut d1w1 = vec![0.0; nodes * nodes];
    for j in 0..nodes {
        let line: Vec<f64> = (0..nodes).map(|i| w1[idx(i, j)]).collect();
        for (i, d) in derivative4(&line, step[0]).into_iter().enumerate() {
            d1w1[idx(i, j)] = d;
        }
    }
    let mut d2w2 = vec![0.0; nodes * nodes];
    for i in 0..nodes {
        let line = &w2[idx(i, 0)..idx(i, 0) + nodes];
        d2w2[idx(i, 0)..idx(i, 0) + nodes].copy_from_slice(&derivative4(line, step[1]));
    }
    let d12w1: Vec<f64> = (0..nodes * nodes)
        .map(|k| da12[k] * (w2[k] - w1[k]) + a12[k] * (d1w2[k] - d1w1[k]))
        .collect();
    let d12w2: Vec<f64> = (0..nodes * nodes)
        .map(|k| da21[k] * (w1[k] - w2[k]) + a21[k] * (d2w1[k] - d2w2[k]))
        .collect();

    Ok(CommutingFlow {
        data: FlowData::Grid(GridFlow {
            bounds,
            cells,
            basepoint: basepoint.to_vec(),
            step,
            w: [w1, w2],
            d1: [d1w1, d1w2],
            d2: [d2w1, d2w2],
            d12: [d12w1, d12w2],
            a: [a12, a21],
        }),
        provenance: Provenance::Integrated,
    })
}
