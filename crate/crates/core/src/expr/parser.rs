//! Recursive-descent parser for the expression DSL.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := base ("^" base)?
//! base   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")" | "-" factor
//! ```
//!
//! A minus sign directly in front of a number literal (not itself raised to
//! a power) folds into a negative literal; otherwise it applies to the whole
//! following factor, so `-x^2` is `-(x^2)`.

use std::sync::Arc;

use thiserror::Error;

use super::{BinOp, Expr, Func, Symbols};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{name}` at position {position}")]
    UnknownSymbol { name: String, position: usize },
    #[error("unknown function `{name}` at position {position}")]
    UnknownFunction { name: String, position: usize },
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(v) => format!("number `{v}`"),
            Token::Name(n) => format!("name `{n}`"),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::Caret => "`^`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
        }
    }
}

fn tokenize(source: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let token = match c {
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &source[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("malformed number `{text}`"),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::Syntax {
                        position: start,
                        message: format!("number `{text}` is out of range"),
                    });
                }
                tokens.push((Token::Number(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((Token::Name(source[start..i].to_string()), start));
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        tokens.push((token, start));
        i += 1;
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
    symbols: &'a Symbols,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, offset: usize) -> Option<&Token> {
        self.tokens.get(self.pos + offset).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn error(&self, expected: &str) -> ParseError {
        let found = self
            .peek()
            .map_or_else(|| "end of input".to_string(), Token::describe);
        ParseError::Syntax {
            position: self.position(),
            message: format!("expected {expected}, found {found}"),
        }
    }

    fn expect(&mut self, token: Token, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&token) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Arc::new(lhs), Arc::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Arc::new(lhs), Arc::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            let exponent = self.base()?;
            return Ok(Expr::Binary(BinOp::Pow, Arc::new(base), Arc::new(exponent)));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let position = self.position();
        match self.peek().cloned() {
            Some(Token::Number(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Minus) => {
                self.pos += 1;
                if let (Some(Token::Number(v)), next) = (self.peek().cloned(), self.peek_at(1)) {
                    if next != Some(&Token::Caret) {
                        self.pos += 1;
                        return Ok(Expr::Num(-v));
                    }
                }
                let inner = self.factor()?;
                Ok(Expr::Unary(Func::Neg, Arc::new(inner)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token::Name(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::LParen) {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction {
                        name: name.clone(),
                        position,
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(Token::RParen, "`)`")?;
                    return Ok(Expr::Unary(func, Arc::new(arg)));
                }
                self.symbols
                    .resolve(&name)
                    .ok_or(ParseError::UnknownSymbol { name, position })
            }
            _ => Err(self.error("a number, name, `(` or `-`")),
        }
    }
}

/// Parses `source` against the declared `symbols`.
pub fn parse(source: &str, symbols: &Symbols) -> Result<Expr, ParseError> {
    let tokens = tokenize(source)?;
    if tokens.is_empty() {
        return Err(ParseError::Syntax {
            position: 0,
            message: "empty expression".into(),
        });
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: source.len(),
        symbols,
    };
    let expr = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("an operator or end of input"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(names: &[&str]) -> Symbols {
        Symbols::coords(names).unwrap()
    }

    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Arc::new(a), Arc::new(b))
    }

    #[test]
    fn builds_sum_of_product_and_function() {
        let syms = s(&["U1", "U2"]);
        let e = parse("U1*U2 + sin(U1)", &syms).unwrap();
        let expected = bin(
            BinOp::Add,
            bin(BinOp::Mul, syms.coord(0), syms.coord(1)),
            Expr::Unary(Func::Sin, Arc::new(syms.coord(0))),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn power_binds_before_product_before_sum() {
        let syms = s(&["a", "b", "c"]);
        let e = parse("a + b*c^2", &syms).unwrap();
        let expected = bin(
            BinOp::Add,
            syms.coord(0),
            bin(
                BinOp::Mul,
                syms.coord(1),
                bin(BinOp::Pow, syms.coord(2), Expr::Num(2.0)),
            ),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn same_precedence_is_left_associative() {
        let syms = s(&["a", "b", "c"]);
        let e = parse("a - b - c", &syms).unwrap();
        let expected = bin(
            BinOp::Sub,
            bin(BinOp::Sub, syms.coord(0), syms.coord(1)),
            syms.coord(2),
        );
        assert_eq!(e, expected);
        let e = parse("a / b * c", &syms).unwrap();
        let expected = bin(
            BinOp::Mul,
            bin(BinOp::Div, syms.coord(0), syms.coord(1)),
            syms.coord(2),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn negation_is_below_power() {
        let syms = s(&["x"]);
        let e = parse("-x^2", &syms).unwrap();
        let expected = Expr::Unary(
            Func::Neg,
            Arc::new(bin(BinOp::Pow, syms.coord(0), Expr::Num(2.0))),
        );
        assert_eq!(e, expected);
        assert_eq!(e.evaluate(&[3.0], &[]).unwrap(), -9.0);
        assert_eq!(parse("-2", &syms).unwrap(), Expr::Num(-2.0));
        assert_eq!(
            parse("-2^2", &syms).unwrap().evaluate(&[0.0], &[]).unwrap(),
            -4.0
        );
        assert_eq!(
            parse("2^-1", &syms).unwrap().evaluate(&[0.0], &[]).unwrap(),
            0.5
        );
    }

    #[test]
    fn reports_unknown_symbols_and_functions() {
        let syms = s(&["U1", "U2"]);
        assert_eq!(
            parse("U3", &syms).unwrap_err(),
            ParseError::UnknownSymbol {
                name: "U3".into(),
                position: 0
            }
        );
        assert!(matches!(
            parse("foo(U1)", &syms),
            Err(ParseError::UnknownFunction { .. })
        ));
    }

    #[test]
    fn reports_syntax_errors_with_position() {
        let syms = s(&["x"]);
        match parse("x + * 2", &syms).unwrap_err() {
            ParseError::Syntax { position, message } => {
                assert_eq!(position, 4);
                assert!(message.contains("expected"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("(x", &syms),
            Err(ParseError::Syntax { position: 2, .. })
        ));
        assert!(matches!(parse("", &syms), Err(ParseError::Syntax { .. })));
        assert!(matches!(
            parse("x^x^x", &syms),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("x $ 1", &syms),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn accepts_scientific_literals_and_whitespace() {
        let syms = s(&["x"]);
        let e = parse("  1.5e-3*x\t+ .5 ", &syms).unwrap();
        assert!((e.evaluate(&[2.0], &[]).unwrap() - 0.503).abs() < 1e-15);
    }
}
