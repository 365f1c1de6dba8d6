//! Closed-form expressions over coordinate variables and named parameters.
//!
//! Expressions are parsed from a small infix DSL (see [`parse`]), differentiated
//! exactly by AST transformation and evaluated in double precision. Nodes are
//! immutable and shared through `Arc`, so cloning is cheap and evaluation is
//! safe from any number of threads.

mod diff;
mod display;
mod parser;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parser::{parse, ParseError};

/// A resolved reference to a coordinate or a parameter.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub index: usize,
    pub name: Arc<str>,
}

/// Unary functions, including negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Neg,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Neg => "-",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Build with [`parse`] or the folding constructors
/// ([`Expr::add`], [`Expr::mul`], ...).
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Symbol),
    Param(Symbol),
    Unary(Func, Arc<Expr>),
    Binary(BinOp, Arc<Expr>, Arc<Expr>),
}

/// Declared names an expression may reference: coordinates first, then parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Symbols {
    coords: Vec<Arc<str>>,
    params: Vec<Arc<str>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolsError {
    #[error("duplicate symbol name `{0}`")]
    Duplicate(String),
    #[error("invalid symbol name `{0}`")]
    InvalidName(String),
}

impl Symbols {
    pub fn new<S: AsRef<str>>(coords: &[S], params: &[S]) -> Result<Self, SymbolsError> {
        let mut seen = std::collections::HashSet::new();
        for name in coords.iter().chain(params.iter()) {
            let name = name.as_ref();
            if !is_valid_name(name) || Func::from_name(name).is_some() {
                return Err(SymbolsError::InvalidName(name.to_string()));
            }
            if !seen.insert(name.to_string()) {
                return Err(SymbolsError::Duplicate(name.to_string()));
            }
        }
        Ok(Symbols {
            coords: coords.iter().map(|s| Arc::from(s.as_ref())).collect(),
            params: params.iter().map(|s| Arc::from(s.as_ref())).collect(),
        })
    }

    /// Coordinates only, no parameters.
    pub fn coords<S: AsRef<str>>(coords: &[S]) -> Result<Self, SymbolsError> {
        Self::new::<S>(coords, &[])
    }

    pub fn n_coords(&self) -> usize {
        self.coords.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn coord_names(&self) -> impl Iterator<Item = &str> {
        self.coords.iter().map(|s| &**s)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|s| &**s)
    }

    pub fn coord(&self, index: usize) -> Expr {
        Expr::Var(Symbol {
            index,
            name: self.coords[index].clone(),
        })
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| &**c == name)
    }

    pub(crate) fn resolve(&self, name: &str) -> Option<Expr> {
        if let Some(i) = self.coord_index(name) {
            return Some(self.coord(i));
        }
        self.params.iter().position(|p| &**p == name).map(|index| {
            Expr::Param(Symbol {
                index,
                name: self.params[index].clone(),
            })
        })
    }
}

pub(crate) fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    LogNonPositive,
    SqrtNegative,
    DivisionByZero,
    PowDomain,
    NonFinite,
    Unbound,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::LogNonPositive => "log of a non-positive value",
            DomainKind::SqrtNegative => "sqrt of a negative value",
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::PowDomain => "non-integer power of a non-positive base",
            DomainKind::NonFinite => "non-finite result",
            DomainKind::Unbound => "unbound symbol",
        })
    }
}

/// Evaluation failure, carrying the offending subexpression.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("domain error: {kind} in `{subexpr}`")]
pub struct DomainError {
    pub kind: DomainKind,
    pub subexpr: String,
}

impl Expr {
    pub fn num(value: f64) -> Expr {
        Expr::Num(value)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn is_num(&self, value: f64) -> bool {
        self.as_num() == Some(value)
    }

    pub fn unary(func: Func, arg: Expr) -> Expr {
        if let Expr::Num(v) = arg {
            if func == Func::Neg {
                return Expr::Num(-v);
            }
        }
        if func == Func::Neg {
            if let Expr::Unary(Func::Neg, inner) = &arg {
                return (**inner).clone();
            }
        }
        Expr::Unary(func, Arc::new(arg))
    }

    pub fn neg(arg: Expr) -> Expr {
        Expr::unary(Func::Neg, arg)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Binary(BinOp::Add, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x - y),
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            _ => Expr::Binary(BinOp::Sub, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Num(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Expr::Binary(BinOp::Mul, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
            (Some(x), _) if x == 0.0 => Expr::Num(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Binary(BinOp::Div, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        if b.is_num(1.0) {
            return a;
        }
        if b.is_num(0.0) {
            return Expr::Num(1.0);
        }
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            if let Ok(v) = pow_checked(x, y) {
                return Expr::Num(v);
            }
        }
        Expr::Binary(BinOp::Pow, Arc::new(a), Arc::new(b))
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        match op {
            BinOp::Add => Expr::add(a, b),
            BinOp::Sub => Expr::sub(a, b),
            BinOp::Mul => Expr::mul(a, b),
            BinOp::Div => Expr::div(a, b),
            BinOp::Pow => Expr::pow(a, b),
        }
    }

    pub fn func(func: Func, arg: Expr) -> Expr {
        Expr::unary(func, arg)
    }

    /// Re-applies the constant-folding constructors bottom-up.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => self.clone(),
            Expr::Unary(f, a) => Expr::unary(*f, a.simplify()),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.simplify(), b.simplify()),
        }
    }

    /// Whether the expression mentions coordinate `var`.
    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Var(s) => s.index == var,
            Expr::Num(_) | Expr::Param(_) => false,
            Expr::Unary(_, a) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// True when no coordinate appears (parameters allowed).
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Var(_) => false,
            Expr::Num(_) | Expr::Param(_) => true,
            Expr::Unary(_, a) => a.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Replaces every coordinate `Var(i)` by `replacements[i]`.
    pub fn substitute(&self, replacements: &[Expr]) -> Expr {
        match self {
            Expr::Var(s) => replacements[s.index].clone(),
            Expr::Num(_) | Expr::Param(_) => self.clone(),
            Expr::Unary(f, a) => Expr::unary(*f, a.substitute(replacements)),
            Expr::Binary(op, a, b) => {
                Expr::binary(*op, a.substitute(replacements), b.substitute(replacements))
            }
        }
    }

    pub fn evaluate(&self, point: &[f64], params: &[f64]) -> Result<f64, DomainError> {
        let fail = |kind| DomainError {
            kind,
            subexpr: self.to_string(),
        };
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(s) => *point
                .get(s.index)
                .ok_or_else(|| fail(DomainKind::Unbound))?,
            Expr::Param(s) => *params
                .get(s.index)
                .ok_or_else(|| fail(DomainKind::Unbound))?,
            Expr::Unary(f, a) => {
                let x = a.evaluate(point, params)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log if x <= 0.0 => return Err(fail(DomainKind::LogNonPositive)),
                    Func::Log => x.ln(),
                    Func::Sqrt if x < 0.0 => return Err(fail(DomainKind::SqrtNegative)),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs => x.abs(),
                    Func::Neg => -x,
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.evaluate(point, params)?;
                let y = b.evaluate(point, params)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div if y == 0.0 => return Err(fail(DomainKind::DivisionByZero)),
                    BinOp::Div => x / y,
                    BinOp::Pow => pow_checked(x, y).map_err(fail)?,
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(fail(DomainKind::NonFinite))
        }
    }
}

fn pow_checked(base: f64, exponent: f64) -> Result<f64, DomainKind> {
    if exponent.fract() == 0.0 && exponent.abs() < i32::MAX as f64 {
        if base == 0.0 && exponent < 0.0 {
            return Err(DomainKind::DivisionByZero);
        }
        Ok(base.powi(exponent as i32))
    } else if base > 0.0 {
        Ok(base.powf(exponent))
    } else {
        Err(DomainKind::PowDomain)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::Num(v)
    }
}
