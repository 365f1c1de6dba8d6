//! Exact symbolic differentiation.

use super::{BinOp, Expr, Func, Symbols};

impl Expr {
    /// Partial derivative with respect to coordinate `var`.
    ///
    /// The result is built through the folding constructors, so repeated
    /// differentiation does not accumulate `0*x` and `1*x` debris.
    pub fn differentiate(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) | Expr::Param(_) => Expr::num(0.0),
            Expr::Var(s) => Expr::num(if s.index == var { 1.0 } else { 0.0 }),
            Expr::Unary(func, a) => {
                let da = a.differentiate(var);
                if da.as_num() == Some(0.0) {
                    return Expr::num(0.0);
                }
                let a = (**a).clone();
                let outer = match func {
                    Func::Neg => return Expr::neg(da),
                    Func::Sin => Expr::func(Func::Cos, a),
                    Func::Cos => Expr::neg(Expr::func(Func::Sin, a)),
                    Func::Tan => Expr::div(
                        Expr::num(1.0),
                        Expr::pow(Expr::func(Func::Cos, a), Expr::num(2.0)),
                    ),
                    Func::Exp => Expr::func(Func::Exp, a),
                    Func::Log => return Expr::div(da, a),
                    Func::Sqrt => {
                        return Expr::div(da, Expr::mul(Expr::num(2.0), Expr::func(Func::Sqrt, a)))
                    }
                    Func::Abs => Expr::div(a.clone(), Expr::func(Func::Abs, a)),
                };
                Expr::mul(outer, da)
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => Expr::add(Expr::mul(da, b.clone()), Expr::mul(a, db)),
                    BinOp::Div => {
                        if b.is_constant() {
                            Expr::div(da, b)
                        } else {
                            Expr::div(
                                Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db)),
                                Expr::pow(b, Expr::num(2.0)),
                            )
                        }
                    }
                    BinOp::Pow => {
                        if !b.depends_on(var) {
                            // d(a^c) = c a^(c-1) da
                            let lowered = Expr::pow(a, Expr::sub(b.clone(), Expr::num(1.0)));
                            Expr::mul(Expr::mul(b, lowered), da)
                        } else {
                            // d(a^b) = a^b (db ln a + b da / a)
                            let value = Expr::pow(a.clone(), b.clone());
                            let log_term = Expr::mul(db, Expr::func(Func::Log, a.clone()));
                            let base_term = Expr::div(Expr::mul(b, da), a);
                            Expr::mul(value, Expr::add(log_term, base_term))
                        }
                    }
                }
            }
        }
    }

    /// Derivative with respect to a coordinate given by name.
    pub fn differentiate_by_name(&self, symbols: &Symbols, var: &str) -> Option<Expr> {
        symbols.coord_index(var).map(|i| self.differentiate(i))
    }
}
