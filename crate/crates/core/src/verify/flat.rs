//! Flat coordinates by integrating the developing map along axis paths.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::VerifyError;
use crate::report::Witness;
use crate::sampling::CoordBox;
use crate::tensor::{Geometry, GeometryError, SystemDef};

/// Default substep multiplier: the RK4 step is `extent / (64 · substeps)`.
pub const DEFAULT_SUBSTEPS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FlatOptions {
    /// Grid nodes per axis.
    pub resolution: usize,
    pub substeps: usize,
    pub tol_flat: f64,
}

impl Default for FlatOptions {
    fn default() -> Self {
        FlatOptions {
            resolution: 64,
            substeps: DEFAULT_SUBSTEPS,
            tol_flat: 1e-7,
        }
    }
}

/// Sampled flat chart `U ↦ n(U)` on a tensor grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlatChart {
    pub coord_names: Vec<String>,
    pub basepoint: Vec<f64>,
    /// `p^a_λ = ∂_λ n^a` at the basepoint, row `a`.
    pub frame: Vec<Vec<f64>>,
    pub signature: Vec<f64>,
    pub resolution: usize,
    /// Grid nodes in row-major order over the axes.
    pub nodes: Vec<Vec<f64>>,
    pub coords: Vec<Vec<f64>>,
    /// `∂_λ n^a` at every node, flattened row-major.
    pub jacobians: Vec<Vec<f64>>,
    /// Largest deviation of the pushed-forward metric from `diag(ε)`.
    pub metric_residual: f64,
    pub metric_witness: Witness,
    /// Largest disagreement of `n` between the two axis orders.
    pub path_residual: f64,
    pub path_witness: Witness,
    pub tol_flat: f64,
}

impl FlatChart {
    pub fn dim(&self) -> usize {
        self.basepoint.len()
    }

    /// Pushed-forward metric is constant to `tol_flat`.
    pub fn pass(&self) -> bool {
        self.metric_residual < self.tol_flat
    }

    pub fn jacobian(&self, node: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, &self.jacobians[node])
    }

    /// `g^{ab} = p^a_ν g^{νμ} p^b_μ` at a grid node.
    pub fn pushed_metric(
        &self,
        sys: &SystemDef,
        node: usize,
    ) -> Result<DMatrix<f64>, GeometryError> {
        let p = self.jacobian(node);
        let up = Geometry::new(sys).metric_upper_matrix(&self.nodes[node])?;
        Ok(&p * up * p.transpose())
    }

    /// The chart `A · n`.
    pub fn transformed(&self, a: &DMatrix<f64>) -> FlatChart {
        let n = self.dim();
        let apply = |v: &[f64]| (a * DMatrix::from_row_slice(n, 1, v)).as_slice().to_vec();
        let apply_matrix = |m: &[f64]| {
            let prod = a * DMatrix::from_row_slice(n, n, m);
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| prod[(i, j)])
                .collect()
        };
        let frame_flat: Vec<f64> = self.frame.concat();
        let frame: Vec<f64> = apply_matrix(&frame_flat);
        FlatChart {
            frame: frame.chunks(n).map(<[f64]>::to_vec).collect(),
            coords: self.coords.iter().map(|c| apply(c)).collect(),
            jacobians: self.jacobians.iter().map(|m| apply_matrix(m)).collect(),
            ..self.clone()
        }
    }

    /// Columns: coordinates, then `n1..nN`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.coord_names.clone();
        header.extend((1..=self.dim()).map(|a| format!("n{a}")));
        w.write_record(&header)?;
        for (u, n) in self.nodes.iter().zip(&self.coords) {
            w.write_record(u.iter().chain(n).map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ODE state: `n^a` followed by `p^a_λ` row-major.
type State = Vec<f64>;

struct Developer<'a> {
    geo: Geometry<'a>,
    n: usize,
}

impl Developer<'_> {
    /// `d/ds` of the state moving along `axis`:
    /// `dn^a = p^a_μ`, `dp^a_λ = Γ^σ_{μλ} p^a_σ`.
    fn rhs(&self, u: &[f64], state: &[f64], axis: usize) -> Result<State, GeometryError> {
        let n = self.n;
        let gamma = self.geo.levi_civita(u)?;
        let p = |a: usize, l: usize| state[n + a * n + l];
        let mut d = vec![0.0; n + n * n];
        for a in 0..n {
            d[a] = p(a, axis);
            for la in 0..n {
                d[n + a * n + la] = (0..n).map(|s| gamma.get(&[s, axis, la]) * p(a, s)).sum();
            }
        }
        Ok(d)
    }

    fn rk4(
        &self,
        u: &mut [f64],
        state: &mut State,
        axis: usize,
        h: f64,
    ) -> Result<(), GeometryError> {
        let shifted = |u: &[f64], dt: f64| {
            let mut v = u.to_vec();
            v[axis] += dt;
            v
        };
        let add = |s: &[f64], k: &[f64], c: f64| -> State {
            s.iter().zip(k).map(|(a, b)| a + c * b).collect()
        };
        let k1 = self.rhs(u, state, axis)?;
        let mid = shifted(u, 0.5 * h);
        let k2 = self.rhs(&mid, &add(state, &k1, 0.5 * h), axis)?;
        let k3 = self.rhs(&mid, &add(state, &k2, 0.5 * h), axis)?;
        let end = shifted(u, h);
        let k4 = self.rhs(&end, &add(state, &k3, h), axis)?;
        for i in 0..state.len() {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        u[axis] += h;
        Ok(())
    }

    /// States at each target coordinate on the line through `start` along
    /// `axis`, in the order of `targets`.
    fn line(
        &self,
        start: &[f64],
        state: &State,
        axis: usize,
        targets: &[f64],
        h: f64,
    ) -> Result<Vec<(Vec<f64>, State)>, GeometryError> {
        let s0 = start[axis];
        let mut out = vec![None; targets.len()];
        let mut forward: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] >= s0).collect();
        let mut backward: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] < s0).collect();
        forward.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]));
        backward.sort_by(|&a, &b| targets[b].total_cmp(&targets[a]));
        for order in [forward, backward] {
            let mut u = start.to_vec();
            let mut st = state.clone();
            for i in order {
                let delta = targets[i] - u[axis];
                let steps = ((delta.abs() / h) - 1e-9).ceil().max(0.0) as usize;
                if steps > 0 {
                    let step = delta / steps as f64;
                    for _ in 0..steps {
                        self.rk4(&mut u, &mut st, axis, step)?;
                    }
                }
                u[axis] = targets[i];
                out[i] = Some((u.clone(), st.clone()));
            }
        }
        Ok(out
            .into_iter()
            .map(|s| s.expect("every target visited"))
            .collect())
    }

    /// Integrates outward from the basepoint, one axis at a time in
    /// `order`, and returns the states at every grid node (row-major).
    fn develop(
        &self,
        u0: &[f64],
        state0: &State,
        order: &[usize],
        axes: &[Vec<f64>],
        steps: &[f64],
    ) -> Result<Vec<State>, GeometryError> {
        let n = self.n;
        let mut frontier: Vec<(Vec<usize>, Vec<f64>, State)> =
            vec![(vec![usize::MAX; n], u0.to_vec(), state0.clone())];
        for &axis in order {
            frontier = frontier
                .par_iter()
                .map(|(index, u, st)| {
                    let states = self.line(u, st, axis, &axes[axis], steps[axis])?;
                    Ok(states
                        .into_iter()
                        .enumerate()
                        .map(|(j, (v, s))| {
                            let mut ix = index.clone();
                            ix[axis] = j;
                            (ix, v, s)
                        })
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>, GeometryError>>()?
                .into_iter()
                .flatten()
                .collect();
        }
        let res = axes[0].len();
        let mut out = vec![Vec::new(); frontier.len()];
        for (ix, _, st) in frontier {
            let flat = ix.iter().fold(0, |acc, &i| acc * res + i);
            out[flat] = st;
        }
        Ok(out)
    }
}

/// Frame `P` with `P g^up(U0) Pᵀ = diag(ε)`, from the eigen-decomposition
/// of `g_low(U0)` sorted by ascending eigenvalue.
fn signature_frame(
    low: &DMatrix<f64>,
    u0: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>), GeometryError> {
    let n = low.nrows();
    let sym = (low + low.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues.amax();
    let mut frame = DMatrix::zeros(n, n);
    let mut signature = Vec::with_capacity(n);
    for (row, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() <= 1e-14 * scale {
            return Err(GeometryError::SingularMetric {
                point: u0.to_vec(),
                detail: "zero eigenvalue of g_lower at the basepoint".into(),
            });
        }
        let mut q = eig.eigenvectors.column(k).into_owned();
        if let Some(first) = q.iter().find(|x| x.abs() > 1e-14) {
            if *first < 0.0 {
                q = -q;
            }
        }
        for l in 0..n {
            frame[(row, l)] = lambda.abs().sqrt() * q[l];
        }
        signature.push(lambda.signum());
    }
    Ok((frame, signature))
}

/// Develops flat coordinates of the metric of `sys` on a grid over `bounds`
/// with `n(U0) = 0` and `∂n(U0)` the signature frame.
///
/// Each node is reached along axis-aligned paths in two orders (axes
/// ascending and descending); their disagreement measures holonomy.
pub fn develop_flat_coords(
    sys: &SystemDef,
    u0: &[f64],
    bounds: &CoordBox,
    options: &FlatOptions,
) -> Result<FlatChart, VerifyError> {
    let n = sys.dim();
    if sys.g_upper.is_none() {
        return Err(VerifyError::MissingMetric(sys.name.clone()));
    }
    if bounds.dim() != n || u0.len() != n {
        return Err(VerifyError::DimensionMismatch {
            expected: n,
            found: if bounds.dim() != n {
                bounds.dim()
            } else {
                u0.len()
            },
        });
    }
    if !bounds.contains(u0) {
        return Err(VerifyError::BasepointOutside(u0.to_vec()));
    }
    if options.resolution < 2 {
        return Err(VerifyError::Resolution);
    }
    let dev = Developer {
        geo: Geometry::new(sys),
        n,
    };
    let res = options.resolution;
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..res)
                .map(|j| bounds.min[a] + bounds.extent(a) * j as f64 / (res - 1) as f64)
                .collect()
        })
        .collect();
    let steps: Vec<f64> = (0..n)
        .map(|a| bounds.extent(a) / (64 * options.substeps.max(1)) as f64)
        .collect();

    let low = dev.geo.metric_lower_matrix(u0)?;
    let (frame, signature) = signature_frame(&low, u0)?;
    let mut state0 = vec![0.0; n + n * n];
    for a in 0..n {
        for l in 0..n {
            state0[n + a * n + l] = frame[(a, l)];
        }
    }
    let ascending: Vec<usize> = (0..n).collect();
    let descending: Vec<usize> = (0..n).rev().collect();
    let first = dev.develop(u0, &state0, &ascending, &axes, &steps)?;
    let second = if n > 1 {
        dev.develop(u0, &state0, &descending, &axes, &steps)?
    } else {
        first.clone()
    };

    let total = res.pow(n as u32);
    let nodes: Vec<Vec<f64>> = (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut u = vec![0.0; n];
            for a in (0..n).rev() {
                u[a] = axes[a][rest % res];
                rest /= res;
            }
            u
        })
        .collect();

    let mut path = (0.0, 0);
    for (i, (a, b)) in first.iter().zip(&second).enumerate() {
        let d = a[..n]
            .iter()
            .zip(&b[..n])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if d > path.0 || d.is_nan() {
            path = (d, i);
        }
    }
    if !(path.0 <= 10.0 * options.tol_flat) {
        return Err(VerifyError::NotFlat {
            residual: path.0,
            point: nodes[path.1].clone(),
        });
    }

    let eta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(signature.clone()));
    let metric = nodes
        .par_iter()
        .zip(&first)
        .map(|(u, st)| {
            let p = DMatrix::from_row_slice(n, n, &st[n..]);
            let up = dev.geo.metric_upper_matrix(u)?;
            Ok((&p * up * p.transpose() - &eta).amax())
        })
        .collect::<Result<Vec<f64>, GeometryError>>()?;
    let mut worst_metric = (0.0, 0);
    for (i, d) in metric.iter().enumerate() {
        if *d > worst_metric.0 || d.is_nan() {
            worst_metric = (*d, i);
        }
    }
    let witness = |i: usize| Witness {
        point: nodes[i].clone(),
        index: None,
    };

    Ok(FlatChart {
        coord_names: sys.symbols.coord_names().map(str::to_string).collect(),
        basepoint: u0.to_vec(),
        frame: (0..n)
            .map(|a| (0..n).map(|l| frame[(a, l)]).collect())
            .collect(),
        signature,
        resolution: res,
        coords: first.iter().map(|st| st[..n].to_vec()).collect(),
        jacobians: first.iter().map(|st| st[n..].to_vec()).collect(),
        metric_residual: worst_metric.0,
        metric_witness: witness(worst_metric.1),
        path_residual: path.0,
        path_witness: witness(path.1),
        tol_flat: options.tol_flat,
        nodes,
    })
}
