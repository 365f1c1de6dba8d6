use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interp::central4;
use super::{CommutingFlow, DiagonalSystem, HodographError};
use crate::report::{Check, Worst};

/// Uniform spacetime grid `x_j`, `t_k` (endpoints included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub x: [f64; 2],
    pub t: [f64; 2],
    pub nx: usize,
    pub nt: usize,
}

impl Window {
    fn axis(range: [f64; 2], n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![range[0]];
        }
        let h = (range[1] - range[0]) / (n - 1) as f64;
        (0..n).map(|i| range[0] + i as f64 * h).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Window::axis(self.x, self.nx)
    }

    pub fn ts(&self) -> Vec<f64> {
        Window::axis(self.t, self.nt)
    }

    fn validate(&self) -> Result<(), HodographError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.nx == 0 || self.nt == 0 {
            return Err(HodographError::Window("nx and nt must be positive".into()));
        }
        if !ordered(self.x) || !ordered(self.t) {
            return Err(HodographError::Window(
                "ranges must be finite [min, max] pairs".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Max-norm of `w(R) − t v(R) − x` accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings tried before a point is declared diverged.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
            max_halvings: 20,
        }
    }
}

/// Solved `R(x_j, t_k)`; point arrays are indexed `k * nx + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct HodographSolution {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub converged: Vec<bool>,
}

impl HodographSolution {
    /// A solution given directly as values, all marked converged.
    pub fn from_values(x: Vec<f64>, t: Vec<f64>, r: Vec<Vec<f64>>) -> Self {
        assert_eq!(r.len(), x.len() * t.len(), "one value per grid point");
        let len = r.len();
        HodographSolution {
            x,
            t,
            r,
            residual: vec![0.0; len],
            converged: vec![true; len],
        }
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        k * self.nx() + j
    }

    pub fn at(&self, j: usize, k: usize) -> &[f64] {
        &self.r[self.index(j, k)]
    }

    pub fn converged_count(&self) -> usize {
        self.converged.iter().filter(|c| **c).count()
    }

    pub fn max_newton_residual(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.converged)
            .filter(|(_, c)| **c)
            .map(|(r, _)| *r)
            .fold(0.0, f64::max)
    }

    /// Columns `x, t, R1..RN, residual, converged`, rows in `t`-major order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HodographError> {
        let io = |e: csv::Error| HodographError::Io(e.to_string());
        let n = self.r.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "t".to_string()];
        header.extend((1..=n).map(|k| format!("R{k}")));
        header.extend(["residual".to_string(), "converged".to_string()]);
        w.write_record(&header).map_err(io)?;
        for k in 0..self.nt() {
            for j in 0..self.nx() {
                let p = self.index(j, k);
                let mut row: Vec<String> = [self.x[j], self.t[k]]
                    .iter()
                    .chain(&self.r[p])
                    .chain(std::iter::once(&self.residual[p]))
                    .map(|v| format!("{v:.17e}"))
                    .collect();
                row.push(self.converged[p].to_string());
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| HodographError::Io(e.to_string()))
    }
}

struct PointSolve {
    r: Vec<f64>,
    residual: f64,
    converged: bool,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(
        0.0,
        |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
    )
}

/// `F(R) = w(R) − t v(R) − x` and its Jacobian, `None` off the domain.
fn system_at(
    sys: &DiagonalSystem,
    flow: &CommutingFlow,
    r: &[f64],
    x: f64,
    t: f64,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (w, dw) = flow.evaluate(r)?;
    let v = sys.velocities_at(r).ok()?;
    let dv = sys.velocity_jacobian(r).ok()?;
    let f = DVector::from_iterator(w.len(), w.iter().zip(&v).map(|(w, v)| w - t * v - x));
    let norm = max_abs(&f);
    norm.is_finite().then(|| (f, dw - dv * t))
}

fn newton(
    sys: &DiagonalSystem,
    flow: &CommutingFlow,
    x: f64,
    t: f64,
    guess: &[f64],
    opts: &NewtonOptions,
) -> PointSolve {
    let mut r = DVector::from_column_slice(guess);
    let Some((mut f, mut jac)) = system_at(sys, flow, r.as_slice(), x, t) else {
        return PointSolve {
            r: guess.to_vec(),
            residual: f64::INFINITY,
            converged: false,
        };
    };
    let mut norm = max_abs(&f);
    for _ in 0..opts.max_iter {
        if norm < opts.tol {
            break;
        }
        let Some(step) = jac.clone().lu().solve(&(-&f)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &r + &step * lambda;
            if let Some((fc, jc)) = system_at(sys, flow, cand.as_slice(), x, t) {
                let nc = max_abs(&fc);
                if nc < norm {
                    accepted = Some((cand, fc, jc, nc));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((cand, fc, jc, nc)) = accepted else {
            break;
        };
        r = cand;
        f = fc;
        jac = jc;
        norm = nc;
    }
    let r = r.as_slice().to_vec();
    PointSolve {
        converged: norm < opts.tol && sys.bounds.contains(&r),
        r,
        residual: norm,
    }
}

/// Solves `w^ν(R) = t v^ν(R) + x` on every window point. The first row
/// (`t = t_min`) is marched in `x` from `seed`; each later row starts
/// from the row before it, one point per `x`, in parallel. Points where
/// Newton fails are flagged, not fatal.
pub fn hodograph_solve(
    sys: &DiagonalSystem,
    flow: &CommutingFlow,
    window: &Window,
    seed: &[f64],
    opts: &NewtonOptions,
) -> Result<HodographSolution, HodographError> {
    window.validate()?;
    if flow.dim() != sys.dim() {
        return Err(HodographError::Dimension {
            what: "w".into(),
            expected: sys.dim(),
            found: flow.dim(),
        });
    }
    if seed.len() != sys.dim() || !sys.bounds.contains(seed) {
        return Err(HodographError::SeedOutOfBox(seed.to_vec()));
    }
    let xs = window.xs();
    let ts = window.ts();
    let mut rows: Vec<Vec<PointSolve>> = Vec::with_capacity(ts.len());

    let mut guess = seed.to_vec();
    let mut first = Vec::with_capacity(xs.len());
    for &x in &xs {
        let p = newton(sys, flow, x, ts[0], &guess, opts);
        if p.converged {
            guess = p.r.clone();
        }
        first.push(p);
    }
    rows.push(first);

    for &t in &ts[1..] {
        let prev = rows.last().expect("first row exists");
        let row = (0..xs.len())
            .into_par_iter()
            .map(|j| {
                let start = nearest_converged(prev, j).map_or(seed, |p| p.r.as_slice());
                newton(sys, flow, xs[j], t, start, opts)
            })
            .collect();
        rows.push(row);
    }

    let mut sol = HodographSolution {
        x: xs,
        t: ts,
        r: Vec::new(),
        residual: Vec::new(),
        converged: Vec::new(),
    };
    for p in rows.into_iter().flatten() {
        sol.r.push(p.r);
        sol.residual.push(p.residual);
        sol.converged.push(p.converged);
    }
    Ok(sol)
}

/// The converged point of `row` closest to index `j` (lower index on ties).
fn nearest_converged(row: &[PointSolve], j: usize) -> Option<&PointSolve> {
    (0..row.len())
        .flat_map(|d| [j.checked_sub(d), Some(j + d)])
        .flatten()
        .filter(|&i| i < row.len())
        .map(|i| &row[i])
        .find(|p| p.converged)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionResidual {
    /// Worst `|R^ν_t − v^ν R^ν_x|` with witness `(x, t)`.
    pub check: Check,
    pub mean: f64,
    pub points: usize,
    /// Per-point residual, `None` outside the tested interior.
    #[serde(skip)]
    pub field: Vec<Option<f64>>,
}

/// Grid points whose five-point stencils in `x` and in `t` are all
/// converged.
fn interior(sol: &HodographSolution) -> Result<Vec<(usize, usize)>, HodographError> {
    let (nx, nt) = (sol.nx(), sol.nt());
    let ok = |j: usize, k: usize| sol.converged[sol.index(j, k)];
    let mut out = Vec::new();
    for k in 2..nt.saturating_sub(2) {
        for j in 2..nx.saturating_sub(2) {
            if (0..5).all(|d| ok(j + d - 2, k) && ok(j, k + d - 2)) {
                out.push((j, k));
            }
        }
    }
    if out.is_empty() {
        return Err(HodographError::RegionTooSmall(format!(
            "{} of {} points converged on a {nx}×{nt} grid",
            sol.converged_count(),
            sol.r.len()
        )));
    }
    Ok(out)
}

fn step(axis: &[f64]) -> f64 {
    (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
}

fn derivative_x(sol: &HodographSolution, nu: usize, j: usize, k: usize) -> f64 {
    central4(|i| sol.at(i, k)[nu], j, sol.nx(), step(&sol.x)).expect("interior point")
}

fn derivative_t(sol: &HodographSolution, nu: usize, j: usize, k: usize) -> f64 {
    central4(|i| sol.at(j, i)[nu], k, sol.nt(), step(&sol.t)).expect("interior point")
}

/// `R^ν_t − v^ν(R) R^ν_x` by fourth-order central differences on the
/// converged interior.
pub fn verify_solution(
    sol: &HodographSolution,
    sys: &DiagonalSystem,
    tol: f64,
) -> Result<SolutionResidual, HodographError> {
    let points = interior(sol)?;
    let values = points
        .par_iter()
        .map(|&(j, k)| {
            let v = sys.velocities_at(sol.at(j, k))?;
            let mut best = (0.0, 0);
            for (nu, v) in v.iter().enumerate() {
                let res = (derivative_t(sol, nu, j, k) - v * derivative_x(sol, nu, j, k)).abs();
                if res > best.0 || res.is_nan() {
                    best = (res, nu);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>, HodographError>>()?;
    let mut worst = Worst::default();
    let mut field = vec![None; sol.r.len()];
    let mut sum = 0.0;
    for (&(j, k), &(value, nu)) in points.iter().zip(&values) {
        worst.observe(value, &[sol.x[j], sol.t[k]], Some(vec![nu]));
        field[sol.index(j, k)] = Some(value);
        sum += value;
    }
    Ok(SolutionResidual {
        check: Check::new("pde_residual", worst, tol),
        mean: sum / points.len() as f64,
        points: points.len(),
        field,
    })
}

/// Differentiating `w^ν(R) − t v^ν(R) = x` in `x` along a solution of a
/// commuting flow gives `(∂_ν w^ν − t ∂_ν v^ν) R^ν_x = 1`.
pub fn chain_rule_check(
    sol: &HodographSolution,
    sys: &DiagonalSystem,
    flow: &CommutingFlow,
    tol: f64,
) -> Result<Check, HodographError> {
    let points = interior(sol)?;
    let mut worst = Worst::default();
    for &(j, k) in &points {
        let r = sol.at(j, k);
        let (_, dw) = flow
            .evaluate(r)
            .ok_or_else(|| HodographError::SeedOutOfBox(r.to_vec()))?;
        let dv = sys.velocity_jacobian(r)?;
        for nu in 0..sys.dim() {
            let slope = dw[(nu, nu)] - sol.t[k] * dv[(nu, nu)];
            let res = (slope * derivative_x(sol, nu, j, k) - 1.0).abs();
            worst.observe(res, &[sol.x[j], sol.t[k]], Some(vec![nu]));
        }
    }
    Ok(Check::new("chain_rule", worst, tol))
}
