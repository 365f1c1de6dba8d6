//! Diagonal systems `R^ν_t = v^ν(R) R^ν_x`: semi-Hamiltonian test,
//! commuting flows and the hodograph solution `w(R) = t v(R) + x`.

mod flow;
mod interp;
mod solve;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{DomainError, Expr, Symbols};
use crate::report::{Check, Worst};
use crate::sampling::{CoordBox, SamplePlan};
use crate::tensor::SystemDef;
use crate::verify::Settings;

pub use flow::{
    commflows_check, integrate_commuting_flow, ClosedFlow, CommutingFlow, FlowData, GridFlow,
    Provenance, DEFAULT_TOL_GOURSAT,
};
pub use solve::{
    chain_rule_check, hodograph_solve, verify_solution, HodographSolution, NewtonOptions,
    SolutionResidual, Window,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HodographError {
    #[error("system `{0}` declares no diagonal velocities v_diag")]
    MissingVelocities(String),
    #[error("{what} has dimension {found}, system has {expected}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("velocities collide (gap {gap:.3e}) at {point:?}")]
    HyperbolicityViolation { point: Vec<f64>, gap: f64 },
    #[error("Goursat cell solve is singular at {point:?}")]
    NonConvergence { point: Vec<f64> },
    #[error("seed {0:?} lies outside the chart box")]
    SeedOutOfBox(Vec<f64>),
    #[error("basepoint {0:?} is not a node of the flow grid")]
    BasepointOffGrid(Vec<f64>),
    #[error("need at least 5 converged points per direction; {0}")]
    RegionTooSmall(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid window: {0}")]
    Window(String),
    #[error("cannot write CSV: {0}")]
    Io(String),
}

/// Velocities `v^ν(R)` on a box in Riemann-invariant space.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSystem {
    pub name: String,
    pub symbols: Symbols,
    pub params: Vec<f64>,
    pub velocities: Vec<Expr>,
    pub bounds: CoordBox,
    /// `∂_μ v^ν`, indexed `[ν][μ]`.
    gradient: Vec<Vec<Expr>>,
    /// `∂_μ v^ν / (v^μ − v^ν)`, indexed `[ν][μ]`; zero for `μ = ν`.
    coupling: Vec<Vec<Expr>>,
}

impl DiagonalSystem {
    pub fn new(sys: &SystemDef, bounds: CoordBox) -> Result<Self, HodographError> {
        let velocities = sys
            .v_diag
            .clone()
            .ok_or_else(|| HodographError::MissingVelocities(sys.name.clone()))?;
        DiagonalSystem::from_parts(
            sys.name.clone(),
            sys.symbols.clone(),
            sys.params.clone(),
            velocities,
            bounds,
        )
    }

    pub fn from_parts(
        name: String,
        symbols: Symbols,
        params: Vec<f64>,
        velocities: Vec<Expr>,
        bounds: CoordBox,
    ) -> Result<Self, HodographError> {
        let n = symbols.n_coords();
        for (what, found) in [("v_diag", velocities.len()), ("box", bounds.dim())] {
            if found != n {
                return Err(HodographError::Dimension {
                    what: what.into(),
                    expected: n,
                    found,
                });
            }
        }
        let gradient: Vec<Vec<Expr>> = velocities
            .iter()
            .map(|v| (0..n).map(|mu| v.differentiate(mu)).collect())
            .collect();
        let coupling = (0..n)
            .map(|nu| {
                (0..n)
                    .map(|mu| {
                        if mu == nu {
                            Expr::num(0.0)
                        } else {
                            let gap = velocities[mu].clone() - velocities[nu].clone();
                            (gradient[nu][mu].clone() / gap).simplify()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(DiagonalSystem {
            name,
            symbols,
            params,
            velocities,
            bounds,
            gradient,
            coupling,
        })
    }

    pub fn dim(&self) -> usize {
        self.velocities.len()
    }

    pub fn coord_names(&self) -> Vec<String> {
        self.symbols.coord_names().map(str::to_string).collect()
    }

    pub fn velocities_at(&self, r: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.velocities
            .iter()
            .map(|v| v.evaluate(r, &self.params))
            .collect()
    }

    /// `[ν][μ] = ∂_μ v^ν`.
    pub fn velocity_jacobian(&self, r: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for nu in 0..n {
            for mu in 0..n {
                m[(nu, mu)] = self.gradient[nu][mu].evaluate(r, &self.params)?;
            }
        }
        Ok(m)
    }

    /// The Christoffel-like coefficient `∂_μ v^ν / (v^μ − v^ν)`.
    pub fn coupling(&self, nu: usize, mu: usize) -> &Expr {
        &self.coupling[nu][mu]
    }

    /// Smallest velocity separation at `r`; infinite for `N = 1`.
    pub fn gap_at(&self, r: &[f64]) -> Result<f64, DomainError> {
        let v = self.velocities_at(r)?;
        let mut gap = f64::INFINITY;
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                gap = gap.min((a - b).abs());
            }
        }
        Ok(gap)
    }

    /// Fails with the first sample (in plan order) where two velocities
    /// come within `tol_gap`; returns the minimum gap otherwise.
    pub fn check_hyperbolic(&self, plan: &SamplePlan, tol_gap: f64) -> Result<f64, HodographError> {
        let points = plan.points(&self.bounds);
        let gaps = points
            .par_iter()
            .map(|r| self.gap_at(r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut min_gap = f64::INFINITY;
        for (r, gap) in points.iter().zip(gaps) {
            if gap.is_nan() || gap <= tol_gap {
                return Err(HodographError::HyperbolicityViolation {
                    point: r.clone(),
                    gap,
                });
            }
            min_gap = min_gap.min(gap);
        }
        Ok(min_gap)
    }

    /// The same system in relabelled coordinates `R'^k = R^{perm[k]}`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DiagonalSystem, HodographError> {
        let n = self.dim();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(HodographError::Unsupported(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
        let old_names = self.coord_names();
        let names: Vec<&str> = perm.iter().map(|&p| old_names[p].as_str()).collect();
        let param_names: Vec<&str> = self.symbols.param_names().collect();
        let symbols = Symbols::new(&names, &param_names).expect("names were already valid");
        // old coordinate perm[k] becomes new coordinate k
        let mut replacements = vec![Expr::num(0.0); n];
        for (k, &p) in perm.iter().enumerate() {
            replacements[p] = symbols.coord(k);
        }
        let velocities = perm
            .iter()
            .map(|&p| self.velocities[p].substitute(&replacements))
            .collect();
        let bounds = CoordBox::new(
            perm.iter().map(|&p| self.bounds.min[p]).collect(),
            perm.iter().map(|&p| self.bounds.max[p]).collect(),
        );
        DiagonalSystem::from_parts(
            self.name.clone(),
            symbols,
            self.params.clone(),
            velocities,
            bounds,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemiHamiltonianReport {
    pub system: String,
    /// Number of index triples `(ν, {μ, λ})` tested.
    pub triples: usize,
    pub min_gap: f64,
    pub check: Check,
    pub pass: bool,
}

/// `∂_λ a^ν_μ − ∂_μ a^ν_λ` for distinct `ν, μ, λ`, with `a` the coupling
/// coefficients. Only `μ < λ` is kept since the expression is
/// antisymmetric in that pair.
fn compatibility_exprs(sys: &DiagonalSystem) -> Vec<([usize; 3], Expr)> {
    let n = sys.dim();
    let mut out = Vec::new();
    for nu in 0..n {
        for mu in 0..n {
            for lambda in mu + 1..n {
                if mu == nu || lambda == nu {
                    continue;
                }
                let e = sys.coupling[nu][mu].differentiate(lambda)
                    - sys.coupling[nu][lambda].differentiate(mu);
                out.push(([nu, mu, lambda], e.simplify()));
            }
        }
    }
    out
}

/// Tests the compatibility conditions of the commuting-flow equations at
/// the sample points. Vacuous for `N ≤ 2`.
pub fn semi_hamiltonian_check(
    sys: &DiagonalSystem,
    settings: &Settings,
) -> Result<SemiHamiltonianReport, HodographError> {
    let tol = settings.tolerances.tol_zero;
    let min_gap = sys.check_hyperbolic(&settings.plan, settings.tolerances.tol_gap)?;
    let exprs = compatibility_exprs(sys);
    let points = settings.plan.points(&sys.bounds);
    let per_point = points
        .par_iter()
        .map(|r| {
            exprs
                .iter()
                .map(|(ix, e)| Ok((e.evaluate(r, &sys.params)?.abs(), ix.to_vec())))
                .collect::<Result<Vec<_>, DomainError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut worst = Worst::default();
    for (r, values) in points.iter().zip(per_point) {
        if values.is_empty() {
            worst.observe(0.0, r, None);
        }
        for (value, index) in values {
            worst.observe(value, r, Some(index));
        }
    }
    let check = Check::new("compatibility", worst, tol);
    Ok(SemiHamiltonianReport {
        system: sys.name.clone(),
        triples: exprs.len(),
        min_gap,
        pass: check.pass,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(coords: &[&str], v: &[&str], min: Vec<f64>, max: Vec<f64>) -> DiagonalSystem {
        let sys = SystemDef::new("test", coords, &[])
            .unwrap()
            .with_v_diag(v)
            .unwrap();
        DiagonalSystem::new(&sys, CoordBox::new(min, max)).unwrap()
    }

    #[test]
    fn two_component_systems_are_vacuously_semi_hamiltonian() {
        let sys = system(
            &["a", "b"],
            &["(3*a+b)/4", "(3*b+a)/4"],
            vec![1.5, -0.5],
            vec![2.5, 0.5],
        );
        let report = semi_hamiltonian_check(&sys, &Settings::default()).unwrap();
        assert_eq!(report.triples, 0);
        assert!(report.pass);
        assert_eq!(report.check.residual, 0.0);
    }

    #[test]
    fn decoupled_velocities_pass() {
        let sys = system(
            &["a", "b", "c"],
            &["a", "b", "c"],
            vec![0.0, 2.0, 4.0],
            vec![1.0, 3.0, 5.0],
        );
        let report = semi_hamiltonian_check(&sys, &Settings::default()).unwrap();
        assert_eq!(report.triples, 3);
        assert!(report.pass);
    }

    #[test]
    fn colliding_velocities_are_rejected() {
        let sys = system(&["a", "b"], &["a", "a"], vec![0.0, 0.0], vec![1.0, 1.0]);
        let err = semi_hamiltonian_check(&sys, &Settings::default()).unwrap_err();
        assert!(matches!(err, HodographError::HyperbolicityViolation { .. }));
    }

    #[test]
    fn permutation_relabels_coordinates() {
        let sys = system(
            &["a", "b", "c"],
            &["a*b", "b+c", "c^2"],
            vec![0.0, 1.0, 2.0],
            vec![1.0, 2.0, 3.0],
        );
        let p = sys.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.coord_names(), ["c", "a", "b"]);
        let v = sys.velocities_at(&[0.3, 1.4, 2.5]).unwrap();
        let vp = p.velocities_at(&[2.5, 0.3, 1.4]).unwrap();
        assert_eq!(vp, vec![v[2], v[0], v[1]]);
        assert_eq!(p.bounds.min, vec![2.0, 0.0, 1.0]);
        assert!(sys.permuted(&[0, 0, 1]).is_err());
    }
}
