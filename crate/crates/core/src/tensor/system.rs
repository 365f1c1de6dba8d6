use thiserror::Error;

use crate::expr::{parse, DomainError, Expr, ParseError, Symbols, SymbolsError};

/// Dense array of expressions with `rank` axes of length `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprTensor {
    dim: usize,
    rank: usize,
    entries: Vec<Expr>,
}

impl ExprTensor {
    pub fn new(dim: usize, rank: usize, entries: Vec<Expr>) -> Self {
        assert_eq!(
            entries.len(),
            dim.pow(rank as u32),
            "entry count must be dim^rank"
        );
        ExprTensor { dim, rank, entries }
    }

    pub fn from_fn(dim: usize, rank: usize, mut f: impl FnMut(&[usize]) -> Expr) -> Self {
        let total = dim.pow(rank as u32);
        let mut index = vec![0usize; rank];
        let entries = (0..total)
            .map(|flat| {
                let mut rest = flat;
                for axis in (0..rank).rev() {
                    index[axis] = rest % dim;
                    rest /= dim;
                }
                f(&index)
            })
            .collect();
        ExprTensor { dim, rank, entries }
    }

    /// Parses a flat, row-major list of sources.
    pub fn parse<S: AsRef<str>>(
        symbols: &Symbols,
        dim: usize,
        rank: usize,
        sources: &[S],
    ) -> Result<Self, ParseError> {
        let entries = sources
            .iter()
            .map(|s| parse(s.as_ref(), symbols))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExprTensor::new(dim, rank, entries))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    pub fn get(&self, index: &[usize]) -> &Expr {
        &self.entries[self.flat(index)]
    }

    fn flat(&self, index: &[usize]) -> usize {
        index.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> ExprTensor {
        ExprTensor {
            dim: self.dim,
            rank: self.rank,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn differentiate(&self, var: usize) -> ExprTensor {
        self.map(|e| e.differentiate(var))
    }

    pub fn evaluate(&self, point: &[f64], params: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.entries
            .iter()
            .map(|e| e.evaluate(point, params))
            .collect()
    }
}

/// A Weingarten-type operator `w_(k)` with its sign `e_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinor {
    pub sign: f64,
    pub matrix: ExprTensor,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("invalid symbols: {0}")]
    Symbols(#[from] SymbolsError),
    #[error("cannot parse `{field}`: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("`{field}` has {found} entries, expected {expected}")]
    Dimension {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("affinor sign must be +1 or -1, got {0}")]
    Sign(f64),
    #[error("{0} parameter values given for {1} declared parameters")]
    ParamCount(usize, usize),
    #[error("dimension must be at least 1")]
    EmptyDimension,
}

/// A chart with the closed-form coefficients of a bracket and/or a
/// hydrodynamic-type system. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemDef {
    pub name: String,
    pub symbols: Symbols,
    pub params: Vec<f64>,
    /// `g^{νμ}`
    pub g_upper: Option<ExprTensor>,
    /// `b^{νμ}_λ`, indexed `[ν][μ][λ]`.
    pub b: Option<ExprTensor>,
    /// `V^ν_μ`, indexed `[ν][μ]`.
    pub v_matrix: Option<ExprTensor>,
    /// Diagonal velocities `v^ν`.
    pub v_diag: Option<Vec<Expr>>,
    pub affinors: Option<Vec<Affinor>>,
    /// Ultralocal term `h^{νμ}`.
    pub h_ultra: Option<ExprTensor>,
    pub curvature_const: Option<f64>,
    /// Liouville potential `γ^{νμ}`.
    pub gamma: Option<ExprTensor>,
}

fn flatten<'a, R: AsRef<[S]>, S: AsRef<str> + 'a>(rows: &'a [R]) -> Vec<&'a str> {
    rows.iter()
        .flat_map(|r| r.as_ref().iter().map(|s| s.as_ref()))
        .collect()
}

impl SystemDef {
    pub fn new<S: AsRef<str>>(
        name: impl Into<String>,
        coords: &[S],
        params: &[(S, f64)],
    ) -> Result<Self, SystemError> {
        if coords.is_empty() {
            return Err(SystemError::EmptyDimension);
        }
        let names: Vec<&str> = params.iter().map(|(n, _)| n.as_ref()).collect();
        let coords: Vec<&str> = coords.iter().map(|c| c.as_ref()).collect();
        let symbols = Symbols::new(&coords, &names)?;
        Ok(SystemDef {
            name: name.into(),
            symbols,
            params: params.iter().map(|(_, v)| *v).collect(),
            g_upper: None,
            b: None,
            v_matrix: None,
            v_diag: None,
            affinors: None,
            h_ultra: None,
            curvature_const: None,
            gamma: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbols.n_coords()
    }

    fn tensor<S: AsRef<str>>(
        &self,
        field: &str,
        rank: usize,
        sources: &[S],
    ) -> Result<ExprTensor, SystemError> {
        let n = self.dim();
        let expected = n.pow(rank as u32);
        if sources.len() != expected {
            return Err(SystemError::Dimension {
                field: field.into(),
                expected,
                found: sources.len(),
            });
        }
        ExprTensor::parse(&self.symbols, n, rank, sources).map_err(|source| SystemError::Parse {
            field: field.into(),
            source,
        })
    }

    fn matrix<R: AsRef<[S]>, S: AsRef<str>>(
        &self,
        field: &str,
        rows: &[R],
    ) -> Result<ExprTensor, SystemError> {
        if rows.len() != self.dim() || rows.iter().any(|r| r.as_ref().len() != self.dim()) {
            return Err(SystemError::Dimension {
                field: field.into(),
                expected: self.dim() * self.dim(),
                found: rows.iter().map(|r| r.as_ref().len()).sum(),
            });
        }
        self.tensor(field, 2, &flatten(rows))
    }

    pub fn with_g_upper<R: AsRef<[S]>, S: AsRef<str>>(
        mut self,
        rows: &[R],
    ) -> Result<Self, SystemError> {
        self.g_upper = Some(self.matrix("g_upper", rows)?);
        Ok(self)
    }

    /// `entries` is `b^{νμ}_λ` flattened over `[ν][μ][λ]`.
    pub fn with_b<S: AsRef<str>>(mut self, entries: &[S]) -> Result<Self, SystemError> {
        self.b = Some(self.tensor("b", 3, entries)?);
        Ok(self)
    }

    pub fn with_v_matrix<R: AsRef<[S]>, S: AsRef<str>>(
        mut self,
        rows: &[R],
    ) -> Result<Self, SystemError> {
        self.v_matrix = Some(self.matrix("V", rows)?);
        Ok(self)
    }

    pub fn with_v_diag<S: AsRef<str>>(mut self, entries: &[S]) -> Result<Self, SystemError> {
        self.v_diag = Some(self.tensor("v_diag", 1, entries)?.entries);
        Ok(self)
    }

    pub fn with_affinor<R: AsRef<[S]>, S: AsRef<str>>(
        mut self,
        sign: f64,
        rows: &[R],
    ) -> Result<Self, SystemError> {
        if sign != 1.0 && sign != -1.0 {
            return Err(SystemError::Sign(sign));
        }
        let matrix = self.matrix("affinor", rows)?;
        self.affinors
            .get_or_insert_with(Vec::new)
            .push(Affinor { sign, matrix });
        Ok(self)
    }

    /// Declares an (initially empty) affinor list.
    pub fn with_no_affinors(mut self) -> Self {
        self.affinors = Some(Vec::new());
        self
    }

    pub fn with_h_ultra<R: AsRef<[S]>, S: AsRef<str>>(
        mut self,
        rows: &[R],
    ) -> Result<Self, SystemError> {
        self.h_ultra = Some(self.matrix("h_ultra", rows)?);
        Ok(self)
    }

    pub fn with_gamma<R: AsRef<[S]>, S: AsRef<str>>(
        mut self,
        rows: &[R],
    ) -> Result<Self, SystemError> {
        self.gamma = Some(self.matrix("gamma", rows)?);
        Ok(self)
    }

    pub fn with_curvature_const(mut self, c: f64) -> Self {
        self.curvature_const = Some(c);
        self
    }

    /// `V` as given, or `diag(v_diag)`.
    pub fn operator(&self) -> Option<ExprTensor> {
        if let Some(v) = &self.v_matrix {
            return Some(v.clone());
        }
        self.v_diag.as_ref().map(|diag| {
            ExprTensor::from_fn(self.dim(), 2, |ix| {
                if ix[0] == ix[1] {
                    diag[ix[0]].clone()
                } else {
                    Expr::num(0.0)
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_validates_dimensions() {
        let sys = SystemDef::new("polar", &["r", "th"], &[])
            .unwrap()
            .with_g_upper(&[["1", "0"], ["0", "1/r^2"]])
            .unwrap();
        assert_eq!(sys.dim(), 2);
        let g = sys.g_upper.as_ref().unwrap();
        assert_eq!(g.get(&[1, 1]).evaluate(&[2.0, 0.0], &[]).unwrap(), 0.25);

        let err = SystemDef::new("bad", &["r", "th"], &[])
            .unwrap()
            .with_g_upper(&[vec!["1", "0", "0"], vec!["0", "1", "0"]])
            .unwrap_err();
        assert!(matches!(err, SystemError::Dimension { .. }));

        let err = SystemDef::new("bad", &["r"], &[])
            .unwrap()
            .with_v_diag(&["q"])
            .unwrap_err();
        assert!(matches!(err, SystemError::Parse { .. }));
    }

    #[test]
    fn operator_falls_back_to_diagonal() {
        let sys = SystemDef::new("d", &["R1", "R2"], &[])
            .unwrap()
            .with_v_diag(&["R1", "2*R2"])
            .unwrap();
        let v = sys.operator().unwrap();
        assert_eq!(v.get(&[0, 1]), &Expr::num(0.0));
        assert_eq!(v.get(&[1, 1]).evaluate(&[0.0, 3.0], &[]).unwrap(), 6.0);
    }

    #[test]
    fn rejects_bad_affinor_sign() {
        let err = SystemDef::new("s", &["x"], &[])
            .unwrap()
            .with_affinor(0.5, &[["1"]]);
        assert!(matches!(err, Err(SystemError::Sign(_))));
    }
}
