//! Discretized Poisson brackets of hydrodynamic type on periodic fields.
//!
//! Functionals have densities depending on `U` only, so their variational
//! derivatives are the exact gradients of the density at each node. The
//! only finite difference is the field-space derivative of inner brackets
//! in the Jacobi tester.

mod grid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, DomainError, Expr, ParseError, Symbols};
use crate::tensor::{ExprTensor, SystemDef};

pub use grid::{GridField, SpectralDerivative};

/// Default field-space step of the Jacobi tester (scaled by `1/Δx`).
pub const DEFAULT_H_STEP: f64 = 1e-5;
/// Default number of grid points.
pub const DEFAULT_M: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid size {0} is not a power of two (at least 2)")]
    GridSize(usize),
    #[error("field values must be finite")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("system `{0}` declares no metric g_upper")]
    MissingMetric(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cannot parse density: {0}")]
    Parse(#[from] ParseError),
    #[error("field-space step must be positive, got {0}")]
    Step(f64),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<std::io::Error> for FieldError {
    fn from(e: std::io::Error) -> Self {
        FieldError::Csv(e.to_string())
    }
}

/// `F[U] = Σ_i f(U(x_i)) Δx` for a density `f(U)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Functional {
    pub density: Expr,
    gradient: Vec<Expr>,
}

impl Functional {
    pub fn new(density: Expr, n: usize) -> Self {
        let gradient = (0..n).map(|k| density.differentiate(k)).collect();
        Functional { density, gradient }
    }

    pub fn parse(source: &str, symbols: &Symbols) -> Result<Self, FieldError> {
        Ok(Functional::new(parse(source, symbols)?, symbols.n_coords()))
    }

    /// `∫ U^ν dx`
    pub fn coordinate(symbols: &Symbols, nu: usize) -> Self {
        Functional::new(symbols.coord(nu), symbols.n_coords())
    }

    /// `∫ ½ Σ ε_ν (U^ν)² dx`
    pub fn momentum(symbols: &Symbols, signs: &[f64]) -> Self {
        let density = signs
            .iter()
            .enumerate()
            .fold(Expr::num(0.0), |acc, (k, &e)| {
                acc + Expr::num(0.5 * e) * Expr::pow(symbols.coord(k), Expr::num(2.0))
            });
        Functional::new(density, symbols.n_coords())
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn value(&self, u: &GridField, params: &[f64]) -> Result<f64, FieldError> {
        let mut total = 0.0;
        for i in 0..u.len() {
            total += self.density.evaluate(&u.point(i), params)?;
        }
        Ok(total * u.dx())
    }

    /// `∂f/∂U^ν` at one node.
    pub fn gradient_at(&self, point: &[f64], params: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.gradient
            .iter()
            .map(|g| g.evaluate(point, params))
            .collect()
    }

    /// `δF/δU^ν(x_i)`
    pub fn variational(&self, u: &GridField, params: &[f64]) -> Result<GridField, FieldError> {
        let mut values = vec![vec![0.0; u.len()]; self.dim()];
        for i in 0..u.len() {
            for (nu, g) in self
                .gradient_at(&u.point(i), params)?
                .into_iter()
                .enumerate()
            {
                values[nu][i] = g;
            }
        }
        GridField::new(values)
    }
}

/// Weights of the local (`g δ′ + b U_x δ`) and ultralocal (`h δ`) parts.
/// Both default to 1; zeroing one tests the other part alone, and other
/// values give members of the pencil `local + λ·ultralocal`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BracketMix {
    pub local: f64,
    pub ultralocal: f64,
}

impl Default for BracketMix {
    fn default() -> Self {
        BracketMix {
            local: 1.0,
            ultralocal: 1.0,
        }
    }
}

/// Field-space difference used for variational derivatives of inner
/// brackets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// `(K[U + δ] − K[U − δ]) / 2h` with `δ = h/Δx` at one node.
    #[default]
    Central,
    /// Fourth-order combination of the `δ` and `2δ` central differences.
    Richardson,
}

/// Coefficients evaluated at one node.
#[derive(Clone, Debug)]
struct NodeCoefficients {
    g: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
}

/// Field state with cached coefficients; cheap to perturb at one node.
#[derive(Clone, Debug)]
struct FieldState {
    /// `u[i][ν]`
    u: Vec<Vec<f64>>,
    /// `ux[ν][i]`
    ux: Vec<Vec<f64>>,
    coeffs: Vec<NodeCoefficients>,
}

/// The operator `A(ξ)^ν = g^{νμ} ∂_x ξ_μ + b^{νμ}_λ U^λ_x ξ_μ + h^{νμ} ξ_μ`
/// for one system and grid size.
#[derive(Clone, Debug)]
pub struct BracketOperator<'a> {
    sys: &'a SystemDef,
    g: &'a ExprTensor,
    n: usize,
    m: usize,
    dx: f64,
    mix: BracketMix,
    stencil: Stencil,
    spectral: SpectralDerivative,
}

impl<'a> BracketOperator<'a> {
    pub fn new(sys: &'a SystemDef, m: usize) -> Result<Self, FieldError> {
        let g = sys
            .g_upper
            .as_ref()
            .ok_or_else(|| FieldError::MissingMetric(sys.name.clone()))?;
        if !m.is_power_of_two() || m < 2 {
            return Err(FieldError::GridSize(m));
        }
        Ok(BracketOperator {
            sys,
            g,
            n: sys.dim(),
            m,
            dx: 2.0 * std::f64::consts::PI / m as f64,
            mix: BracketMix::default(),
            stencil: Stencil::default(),
            spectral: SpectralDerivative::new(m),
        })
    }

    pub fn with_mix(mut self, mix: BracketMix) -> Self {
        self.mix = mix;
        self
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        self.stencil = stencil;
        self
    }

    fn check_shape(&self, f: &GridField, what: &str) -> Result<(), FieldError> {
        if f.components() != self.n || f.len() != self.m {
            return Err(FieldError::Shape(format!(
                "{what} is {}×{}, expected {}×{}",
                f.components(),
                f.len(),
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    fn node(&self, u: &[f64]) -> Result<NodeCoefficients, DomainError> {
        let params = &self.sys.params;
        let n = self.n;
        let g = self.g.evaluate(u, params)?;
        let b = match &self.sys.b {
            Some(b) => b.evaluate(u, params)?,
            None => vec![0.0; n * n * n],
        };
        let h = match &self.sys.h_ultra {
            Some(h) => h.evaluate(u, params)?,
            None => vec![0.0; n * n],
        };
        Ok(NodeCoefficients { g, b, h })
    }

    fn state(&self, field: &GridField) -> Result<FieldState, FieldError> {
        self.check_shape(field, "field")?;
        let u: Vec<Vec<f64>> = (0..self.m).map(|i| field.point(i)).collect();
        let ux = field
            .values()
            .iter()
            .map(|c| self.spectral.apply(c))
            .collect();
        let coeffs = u.iter().map(|p| self.node(p)).collect::<Result<_, _>>()?;
        Ok(FieldState { u, ux, coeffs })
    }

    /// Copy of `base` with `U^ν(x_i)` shifted by `delta`.
    fn perturbed(
        &self,
        base: &FieldState,
        nu: usize,
        i: usize,
        delta: f64,
    ) -> Result<FieldState, FieldError> {
        let mut s = base.clone();
        s.u[i][nu] += delta;
        let column: Vec<f64> = s.u.iter().map(|p| p[nu]).collect();
        s.ux[nu] = self.spectral.apply(&column);
        s.coeffs[i] = self.node(&s.u[i])?;
        Ok(s)
    }

    /// `xi[ν][i] ↦ A(ξ)[ν][i]`
    fn apply_raw(&self, s: &FieldState, xi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n;
        let dxi: Vec<Vec<f64>> = xi.iter().map(|c| self.spectral.apply(c)).collect();
        let mut out = vec![vec![0.0; self.m]; n];
        for i in 0..self.m {
            let c = &s.coeffs[i];
            for nu in 0..n {
                let mut local = 0.0;
                let mut ultra = 0.0;
                for mu in 0..n {
                    let mut bux = 0.0;
                    for la in 0..n {
                        bux += c.b[(nu * n + mu) * n + la] * s.ux[la][i];
                    }
                    local += c.g[nu * n + mu] * dxi[mu][i] + bux * xi[mu][i];
                    ultra += c.h[nu * n + mu] * xi[mu][i];
                }
                out[nu][i] = self.mix.local * local + self.mix.ultralocal * ultra;
            }
        }
        out
    }

    fn pairing_raw(&self, s: &FieldState, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let ab = self.apply_raw(s, b);
        let mut total = 0.0;
        for (x, y) in a.iter().zip(&ab) {
            for (p, q) in x.iter().zip(y) {
                total += p * q;
            }
        }
        total * self.dx
    }

    /// `[ν][i]` for node-wise gradients.
    fn covector(&self, s: &FieldState, f: &Functional) -> Result<Vec<Vec<f64>>, FieldError> {
        let mut out = vec![vec![0.0; self.m]; self.n];
        for (i, p) in s.u.iter().enumerate() {
            for (nu, g) in f.gradient_at(p, &self.sys.params)?.into_iter().enumerate() {
                out[nu][i] = g;
            }
        }
        Ok(out)
    }

    fn check_functional(&self, f: &Functional) -> Result<(), FieldError> {
        if f.dim() != self.n {
            return Err(FieldError::Shape(format!(
                "density over {} fields, system has {}",
                f.dim(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn apply(&self, u: &GridField, xi: &GridField) -> Result<GridField, FieldError> {
        self.check_shape(xi, "covector")?;
        let s = self.state(u)?;
        GridField::new(self.apply_raw(&s, xi.values()))
    }

    /// `Σ_i a(x_i) · A(b)(x_i) Δx` for covector fields `a`, `b`.
    pub fn pairing(&self, u: &GridField, a: &GridField, b: &GridField) -> Result<f64, FieldError> {
        self.check_shape(a, "covector")?;
        self.check_shape(b, "covector")?;
        let s = self.state(u)?;
        Ok(self.pairing_raw(&s, a.values(), b.values()))
    }

    pub fn bracket(
        &self,
        f: &Functional,
        g: &Functional,
        u: &GridField,
    ) -> Result<f64, FieldError> {
        self.check_functional(f)?;
        self.check_functional(g)?;
        let s = self.state(u)?;
        Ok(self.pairing_raw(&s, &self.covector(&s, f)?, &self.covector(&s, g)?))
    }

    /// `{F, G}` with its variational derivative by central differences,
    /// perturbing one node at a time by `±h/Δx`.
    fn inner_bracket_gradient(
        &self,
        s: &FieldState,
        f: &Functional,
        g: &Functional,
        h: f64,
    ) -> Result<(f64, Vec<Vec<f64>>, f64), FieldError> {
        let base_f = self.covector(s, f)?;
        let base_g = self.covector(s, g)?;
        let value = self.pairing_raw(s, &base_f, &base_g);
        // |terms| of the inner sum, for the roundoff estimate
        let ag = self.apply_raw(s, &base_g);
        let magnitude: f64 = base_f
            .iter()
            .flatten()
            .zip(ag.iter().flatten())
            .map(|(a, b)| (a * b).abs())
            .sum::<f64>()
            * self.dx;
        let delta = h / self.dx;
        let params = &self.sys.params;
        let entries: Vec<(usize, usize)> = (0..self.n)
            .flat_map(|nu| (0..self.m).map(move |i| (nu, i)))
            .collect();
        let values = entries
            .par_iter()
            .map(|&(nu, i)| {
                let eval = |sign: f64| -> Result<f64, FieldError> {
                    let p = self.perturbed(s, nu, i, sign * delta)?;
                    let mut cf = base_f.clone();
                    let mut cg = base_g.clone();
                    let gf = f.gradient_at(&p.u[i], params)?;
                    let gg = g.gradient_at(&p.u[i], params)?;
                    for k in 0..self.n {
                        cf[k][i] = gf[k];
                        cg[k][i] = gg[k];
                    }
                    Ok(self.pairing_raw(&p, &cf, &cg))
                };
                let first = (eval(1.0)? - eval(-1.0)?) / (2.0 * h);
                Ok(match self.stencil {
                    Stencil::Central => first,
                    Stencil::Richardson => {
                        let wide = (eval(2.0)? - eval(-2.0)?) / (4.0 * h);
                        (4.0 * first - wide) / 3.0
                    }
                })
            })
            .collect::<Result<Vec<f64>, FieldError>>()?;
        let mut gradient = vec![vec![0.0; self.m]; self.n];
        for ((nu, i), v) in entries.into_iter().zip(values) {
            gradient[nu][i] = v;
        }
        Ok((value, gradient, magnitude))
    }

    pub fn jacobi(
        &self,
        f: &Functional,
        g: &Functional,
        k: &Functional,
        u: &GridField,
        h_step: f64,
    ) -> Result<JacobiReport, FieldError> {
        if !(h_step > 0.0) {
            return Err(FieldError::Step(h_step));
        }
        for x in [f, g, k] {
            self.check_functional(x)?;
        }
        let s = self.state(u)?;
        let mut terms = [0.0; 3];
        let mut roundoff = 0.0;
        for (slot, (a, b, c)) in [(f, g, k), (g, k, f), (k, f, g)].into_iter().enumerate() {
            let (_, grad, magnitude) = self.inner_bracket_gradient(&s, a, b, h_step)?;
            let outer = self.covector(&s, c)?;
            terms[slot] = self.pairing_raw(&s, &grad, &outer);
            let ac = self.apply_raw(&s, &outer);
            // independent rounding errors in the M·N difference quotients
            // add in quadrature
            let weight: f64 = ac.iter().flatten().map(|v| v * v).sum::<f64>().sqrt() * self.dx;
            roundoff += f64::EPSILON * magnitude.max(f64::MIN_POSITIVE) * weight / h_step;
        }
        let signed = terms.iter().sum::<f64>();
        let residual = signed.abs();
        Ok(JacobiReport {
            residual,
            signed,
            terms,
            roundoff,
            step_too_small: roundoff > 0.5 * residual && roundoff > ROUNDOFF_WARN,
        })
    }
}

/// Roundoff floor above which a roundoff-dominated Jacobi residual is
/// flagged.
pub const ROUNDOFF_WARN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JacobiReport {
    /// `|J|`
    pub residual: f64,
    pub signed: f64,
    /// `{{F,G},H}`, `{{G,H},F}`, `{{H,F},G}`
    pub terms: [f64; 3],
    /// Estimated roundoff in `J` from the field-space differences.
    pub roundoff: f64,
    /// `J` is dominated by roundoff at a level that could mask a genuine
    /// violation; increase `h_step`.
    pub step_too_small: bool,
}

pub fn apply_bracket_operator(
    sys: &SystemDef,
    u: &GridField,
    xi: &GridField,
) -> Result<GridField, FieldError> {
    BracketOperator::new(sys, u.len())?.apply(u, xi)
}

pub fn bracket(
    sys: &SystemDef,
    f: &Functional,
    g: &Functional,
    u: &GridField,
) -> Result<f64, FieldError> {
    BracketOperator::new(sys, u.len())?.bracket(f, g, u)
}

pub fn jacobi_residual(
    sys: &SystemDef,
    f: &Functional,
    g: &Functional,
    h: &Functional,
    u: &GridField,
    h_step: f64,
) -> Result<JacobiReport, FieldError> {
    BracketOperator::new(sys, u.len())?.jacobi(f, g, h, u, h_step)
}

/// `U_t = A(δH/δU)`
pub fn hamiltonian_flow(
    sys: &SystemDef,
    h: &Functional,
    u: &GridField,
) -> Result<GridField, FieldError> {
    let op = BracketOperator::new(sys, u.len())?;
    op.check_functional(h)?;
    op.apply(u, &h.variational(u, &sys.params)?)
}

/// Polynomial density of total degree 2 or 3 in the coordinates, with
/// every monomial present and coefficients in `[-1, 1]` (three decimals).
pub fn random_density(symbols: &Symbols, rng: &mut impl Rng) -> Functional {
    let n = symbols.n_coords();
    let degree = rng.gen_range(2..=3);
    // non-decreasing index lists = monomials of degree 1..=degree
    let mut monomials: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..degree {
        layer = layer
            .iter()
            .flat_map(|m| {
                let start = m.last().copied().unwrap_or(0);
                (start..n).map(move |k| {
                    let mut e = m.clone();
                    e.push(k);
                    e
                })
            })
            .collect();
        monomials.extend(layer.iter().cloned());
    }
    let mut density = Expr::num(0.0);
    for m in &monomials {
        let c = (rng.gen_range(-1.0f64..1.0) * 1000.0).round() / 1000.0;
        let term = m
            .iter()
            .fold(Expr::num(c), |acc, &k| acc * symbols.coord(k));
        density = density + term;
    }
    Functional::new(density, n)
}

/// Seeded batch of functional triples.
pub fn random_triples(symbols: &Symbols, count: usize, seed: u64) -> Vec<[Functional; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            [
                random_density(symbols, &mut rng),
                random_density(symbols, &mut rng),
                random_density(symbols, &mut rng),
            ]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JacobiSweep {
    pub system: String,
    pub grid: usize,
    pub h_step: f64,
    pub seed: u64,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub worst_triple: [String; 3],
    pub step_too_small: bool,
}

/// Jacobi residuals over `count` seeded triples at one field.
pub fn jacobi_sweep(
    sys: &SystemDef,
    u: &GridField,
    count: usize,
    seed: u64,
    h_step: f64,
) -> Result<JacobiSweep, FieldError> {
    BracketOperator::new(sys, u.len())?.jacobi_sweep(u, count, seed, h_step)
}

impl BracketOperator<'_> {
    /// [`jacobi_sweep`] with this operator's mix and stencil.
    pub fn jacobi_sweep(
        &self,
        u: &GridField,
        count: usize,
        seed: u64,
        h_step: f64,
    ) -> Result<JacobiSweep, FieldError> {
        let triples = random_triples(&self.sys.symbols, count, seed);
        let mut residuals = Vec::with_capacity(count);
        let mut worst = (f64::NEG_INFINITY, 0);
        let mut step_too_small = false;
        for (k, [f, g, h]) in triples.iter().enumerate() {
            let r = self.jacobi(f, g, h, u, h_step)?;
            step_too_small |= r.step_too_small;
            if r.residual > worst.0 || r.residual.is_nan() {
                worst = (r.residual, k);
            }
            residuals.push(r.residual);
        }
        let worst_triple = match triples.get(worst.1) {
            Some([f, g, h]) => [
                f.density.to_string(),
                g.density.to_string(),
                h.density.to_string(),
            ],
            None => Default::default(),
        };
        Ok(JacobiSweep {
            system: self.sys.name.clone(),
            grid: u.len(),
            h_step,
            seed,
            max_residual: residuals.iter().copied().fold(0.0, f64::max),
            residuals,
            worst_triple,
            step_too_small,
        })
    }
}
