use hydrobrackets::expr::{parse, BinOp, Expr, Func, Symbols};
use proptest::prelude::*;

fn symbols() -> Symbols {
    Symbols::coords(&["x", "y", "z"]).unwrap()
}

#[derive(Clone, Debug)]
enum Shape {
    Var(usize),
    Num(f64),
    Unary(Func, Box<Shape>),
    Binary(BinOp, Box<Shape>, Box<Shape>),
}

fn shape() -> impl Strategy<Value = Shape> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(Shape::Var),
        (-30i32..30).prop_map(|k| Shape::Num(k as f64 / 10.0)),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            (
                prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Tan),
                    Just(Func::Exp),
                    Just(Func::Log),
                    Just(Func::Sqrt),
                    Just(Func::Abs),
                    Just(Func::Neg),
                ],
                inner.clone()
            )
                .prop_map(|(f, a)| Shape::Unary(f, Box::new(a))),
            (
                prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                ],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Shape::Binary(op, Box::new(a), Box::new(b))),
            (inner.clone(), -3i32..4).prop_map(|(a, k)| Shape::Binary(
                BinOp::Pow,
                Box::new(a),
                Box::new(Shape::Num(k as f64))
            )),
            (inner, 1i32..8).prop_map(|(a, k)| Shape::Binary(
                BinOp::Pow,
                Box::new(Shape::Unary(Func::Exp, Box::new(a))),
                Box::new(Shape::Num(k as f64 / 4.0))
            )),
        ]
    })
}

fn build(s: &Shape, syms: &Symbols) -> Expr {
    match s {
        Shape::Var(i) => syms.coord(*i),
        Shape::Num(v) => Expr::Num(*v),
        Shape::Unary(f, a) => Expr::Unary(*f, build(a, syms).into()),
        Shape::Binary(op, a, b) => Expr::Binary(*op, build(a, syms).into(), build(b, syms).into()),
    }
}

fn central(e: &Expr, p: &[f64], var: usize, h: f64) -> Option<f64> {
    let mut plus = p.to_vec();
    let mut minus = p.to_vec();
    plus[var] += h;
    minus[var] -= h;
    Some((e.evaluate(&plus, &[]).ok()? - e.evaluate(&minus, &[]).ok()?) / (2.0 * h))
}

fn richardson(e: &Expr, p: &[f64], var: usize) -> Option<f64> {
    let h = 1e-6;
    let coarse = central(e, p, var, h)?;
    let fine = central(e, p, var, h / 2.0)?;
    Some((4.0 * fine - coarse) / 3.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn printed_form_reparses_identically(s in shape()) {
        let syms = symbols();
        let e = build(&s, &syms);
        let printed = e.to_string();
        let again = parse(&printed, &syms).unwrap();
        prop_assert_eq!(e, again);
    }

    #[test]
    fn derivative_matches_finite_differences(
        s in shape(),
        p in prop::array::uniform3(0.2f64..2.0),
        var in 0usize..3,
    ) {
        let e = build(&s, &symbols());
        let value = e.evaluate(&p, &[]);
        prop_assume!(matches!(value, Ok(v) if v.abs() < 1e3));
        // Only smooth neighbourhoods: the function must be defined and the
        // derivative estimate stable across very different step sizes.
        let wide = central(&e, &p, var, 1e-3);
        let narrow = central(&e, &p, var, 1e-5);
        prop_assume!(matches!((wide, narrow), (Some(a), Some(b)) if (a - b).abs() < 1e-3 * (1.0 + b.abs())));
        let reference = richardson(&e, &p, var);
        prop_assume!(reference.is_some());
        let reference = reference.unwrap();
        let exact = e.differentiate(var).evaluate(&p, &[]).unwrap();
        prop_assert!(
            (exact - reference).abs() < 1e-6 * (1.0 + exact.abs()),
            "{} d/d{}: exact {} vs fd {}", e, var, exact, reference
        );
    }

    #[test]
    fn differentiation_is_linear(
        s1 in shape(),
        s2 in shape(),
        a in -3.0f64..3.0,
        p in prop::array::uniform3(0.2f64..2.0),
        var in 0usize..3,
    ) {
        let syms = symbols();
        let (e1, e2) = (build(&s1, &syms), build(&s2, &syms));
        let combined = Expr::num(a) * e1.clone() + e2.clone();
        let lhs = combined.differentiate(var).evaluate(&p, &[]);
        let d1 = e1.differentiate(var).evaluate(&p, &[]);
        let d2 = e2.differentiate(var).evaluate(&p, &[]);
        prop_assume!(lhs.is_ok() && d1.is_ok() && d2.is_ok());
        let rhs = a * d1.unwrap() + d2.unwrap();
        let lhs = lhs.unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
    }
}
