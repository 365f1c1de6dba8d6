//! Infix printing with the minimal parentheses that re-parse to the same tree.

use std::fmt;

use super::{BinOp, Expr, Func};

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const NEGATION: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Num(v) if v.is_sign_negative() => NEGATION,
        Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => ATOM,
        Expr::Unary(Func::Neg, _) => NEGATION,
        Expr::Unary(_, _) => ATOM,
        Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => SUM,
        Expr::Binary(BinOp::Mul | BinOp::Div, _, _) => PRODUCT,
        Expr::Binary(BinOp::Pow, _, _) => POWER,
    }
}

struct Wrapped<'a>(&'a Expr, bool);

impl fmt::Display for Wrapped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if v.is_sign_negative() => write!(f, "-{}", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(s) | Expr::Param(s) => f.write_str(&s.name),
            Expr::Unary(Func::Neg, a) => {
                // A bare non-negative literal after `-` would fold back into a
                // negative literal on re-parse.
                let plain = match &**a {
                    Expr::Num(v) => v.is_sign_negative(),
                    other => level(other) >= POWER || level(other) == NEGATION,
                };
                write!(f, "-{}", Wrapped(a, !plain))
            }
            Expr::Unary(func, a) => write!(f, "{}({})", func.name(), a),
            Expr::Binary(BinOp::Pow, a, b) => write!(
                f,
                "{}^{}",
                Wrapped(a, level(a) < ATOM),
                Wrapped(b, level(b) < ATOM)
            ),
            Expr::Binary(op, a, b) => {
                let own = level(self);
                let symbol = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => unreachable!(),
                };
                write!(
                    f,
                    "{}{}{}",
                    Wrapped(a, level(a) < own),
                    symbol,
                    Wrapped(b, level(b) <= own)
                )
            }
        }
    }
}
