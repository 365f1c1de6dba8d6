use hydrobrackets::expr::{parse, Expr, Symbols};
use hydrobrackets::sampling::{CoordBox, SamplePlan};
use hydrobrackets::tensor::{ExprTensor, SystemDef};
use hydrobrackets::verify::{
    check_auto, check_dn, check_ferapontov, check_liouville, check_mf, develop_flat_coords,
    pencil_regularity, pencil_roots, BracketClass, FlatOptions, Settings, Verdict, VerifyError,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

mod common;
use common::pencil_oracle;
use common::random_spd;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POLAR_B: [&str; 8] = ["0", "0", "0", "-1/r", "0", "1/r", "-1/r^3", "0"];
const SPHERE_B: [&str; 8] = [
    "0",
    "0",
    "0",
    "-cos(th)/sin(th)",
    "0",
    "cos(th)/sin(th)",
    "-cos(th)/sin(th)^3",
    "0",
];

fn polar() -> SystemDef {
    SystemDef::new("polar", &["r", "th"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "1/r^2"]])
        .unwrap()
        .with_b(&POLAR_B)
        .unwrap()
}

fn polar_box() -> CoordBox {
    CoordBox::new(vec![0.5, -1.0], vec![2.0, 1.0])
}

fn sphere() -> SystemDef {
    SystemDef::new("sphere", &["th", "ph"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "1/sin(th)^2"]])
        .unwrap()
        .with_b(&SPHERE_B)
        .unwrap()
}

fn sphere_box() -> CoordBox {
    CoordBox::new(vec![0.5, -1.0], vec![2.5, 1.0])
}

fn settings() -> Settings {
    Settings::default()
}

#[test]
fn canonical_constant_bracket_is_dn_flat() {
    let sys = SystemDef::new("canonical", &["u", "v"], &[])
        .unwrap()
        .with_g_upper(&[["0", "1"], ["1", "0"]])
        .unwrap();
    let b = CoordBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
    let report = check_dn(&sys, &b, &settings()).unwrap();
    assert_eq!(report.verdict, Verdict::DnFlat);
    assert!(report.pass);
}

#[test]
fn polar_pair_is_dn_flat() {
    let report = check_dn(&polar(), &polar_box(), &settings()).unwrap();
    assert_eq!(report.verdict, Verdict::DnFlat, "{report}");
}

#[test]
fn sphere_fails_dn_with_unit_curvature_witness() {
    let report = check_dn(&sphere(), &sphere_box(), &settings()).unwrap();
    assert_eq!(report.verdict, Verdict::NotABracket);
    let curv = report.check("curvature_zero").unwrap();
    assert!(!curv.pass);
    assert!((curv.residual - 1.0).abs() < 1e-10);
    let witness = curv.witness.as_ref().unwrap();
    assert!(sphere_box().contains(&witness.point));
    assert_eq!(witness.index.as_ref().unwrap().len(), 4);
    assert!(report.check("connection_matches_levi_civita").unwrap().pass);
}

#[test]
fn sphere_has_constant_curvature_one() {
    let report = check_mf(&sphere(), &sphere_box(), &settings()).unwrap();
    let c = report.fitted_c.unwrap();
    assert!((c - 1.0).abs() < 1e-8);
    assert_eq!(report.verdict, Verdict::MfConstCurv(c));
    assert!(report.check("curvature_constant_pattern").unwrap().residual < 1e-8);
}

#[test]
fn flat_metric_fits_zero_curvature_and_agrees_with_dn() {
    let report = check_mf(&polar(), &polar_box(), &settings()).unwrap();
    assert!(report.pass);
    assert!(report.fitted_c.unwrap().abs() < 1e-9);
    assert!(report.flags.iter().any(|f| f.contains("DN_FLAT")));
    assert!(check_dn(&polar(), &polar_box(), &settings()).unwrap().pass);
}

#[test]
fn non_constant_curvature_fails_mf() {
    let sys = SystemDef::new("nonconst", &["r", "th"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "exp(-2*r^2)"]])
        .unwrap();
    let report = check_mf(
        &sys,
        &CoordBox::new(vec![0.1, -1.0], vec![1.0, 1.0]),
        &settings(),
    )
    .unwrap();
    let pattern = report.check("curvature_constant_pattern").unwrap();
    assert!(!pattern.pass && pattern.residual > 0.1);
    assert!(pattern.witness.is_some());
    assert_eq!(report.verdict, Verdict::NotABracket);
}

fn sphere_affinor(rows: &[[&str; 2]; 2]) -> SystemDef {
    sphere().with_affinor(1.0, rows).unwrap()
}

#[test]
fn sphere_with_identity_affinor_is_ferapontov() {
    let sys = sphere_affinor(&[["1", "0"], ["0", "1"]]);
    let report = check_ferapontov(&sys, &sphere_box(), &settings()).unwrap();
    assert_eq!(report.class, BracketClass::Fer);
    assert_eq!(report.verdict, Verdict::Ferapontov, "{report}");
    for c in &report.checks {
        assert!(c.residual < 1e-9, "{c}");
    }
    // the one-affinor case reproduces the constant-curvature result
    let mf = check_mf(&sys, &sphere_box(), &settings()).unwrap();
    assert!((mf.fitted_c.unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn asymmetric_weingarten_operator_fails_condition_one() {
    let sys = sphere_affinor(&[["1", "1"], ["0", "1"]]);
    let report = check_ferapontov(&sys, &sphere_box(), &settings()).unwrap();
    let sym = report.check("weingarten_symmetric").unwrap();
    assert!(!sym.pass);
    assert!(sym.witness.is_some());
    assert!(!report.pass);
}

#[test]
fn non_commuting_affinors_fail_condition_four() {
    let sys = sphere()
        .with_affinor(1.0, &[["1", "0"], ["0", "2"]])
        .unwrap()
        .with_affinor(-1.0, &[["0", "1"], ["sin(th)^2", "0"]])
        .unwrap();
    let report = check_ferapontov(&sys, &sphere_box(), &settings()).unwrap();
    assert!(!report.check("affinors_commute").unwrap().pass);
}

#[test]
fn empty_affinor_list_matches_dn() {
    for sys in [polar(), sphere()] {
        let bounds = if sys.name == "polar" {
            polar_box()
        } else {
            sphere_box()
        };
        let fer = check_ferapontov(&sys.clone().with_no_affinors(), &bounds, &settings()).unwrap();
        let dn = check_dn(&sys, &bounds, &settings()).unwrap();
        assert_eq!(fer.pass, dn.pass);
        for (a, b) in fer.checks.iter().zip(&dn.checks) {
            assert_eq!(a.name, b.name);
            assert!((a.residual - b.residual).abs() < 1e-12);
        }
    }
}

#[test]
fn auto_classifies_library_shapes() {
    assert_eq!(
        check_auto(&polar(), &polar_box(), &settings())
            .unwrap()
            .verdict,
        Verdict::DnFlat
    );
    let report = check_auto(&sphere(), &sphere_box(), &settings()).unwrap();
    assert!(matches!(report.verdict, Verdict::MfConstCurv(c) if (c - 1.0).abs() < 1e-8));
}

fn liouville_system(gamma: [[&str; 2]; 2], perturb: Option<(usize, f64)>) -> SystemDef {
    let syms = Symbols::coords(&["p", "q"]).unwrap();
    let g: [[Expr; 2]; 2] = gamma.map(|row| row.map(|s| parse(s, &syms).unwrap()));
    let up: Vec<Vec<String>> = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| (g[i][j].clone() + g[j][i].clone()).to_string())
                .collect()
        })
        .collect();
    let b = ExprTensor::from_fn(2, 3, |ix| g[ix[0]][ix[1]].differentiate(ix[2]));
    let mut b: Vec<String> = b.entries().iter().map(Expr::to_string).collect();
    if let Some((k, eps)) = perturb {
        b[k] = format!("{} + {eps}", b[k]);
    }
    SystemDef::new("liouville", &["p", "q"], &[])
        .unwrap()
        .with_g_upper(&up)
        .unwrap()
        .with_b(&b)
        .unwrap()
        .with_gamma(&gamma)
        .unwrap()
}

#[test]
fn constant_potential_is_liouville_and_flat() {
    let sys = liouville_system([["0.5", "0"], ["0", "-0.5"]], None);
    let report = check_liouville(&sys, &polar_box(), &settings()).unwrap();
    assert!(report.pass);
    assert_eq!(report.verdict, Verdict::DnFlat);
}

#[test]
fn quadratic_potential_round_trips() {
    let sys = liouville_system([["2 + p^2", "p*q"], ["q^2/2", "3 + q^2"]], None);
    let report = check_liouville(&sys, &polar_box(), &settings()).unwrap();
    assert!(report.pass);
    for c in &report.checks {
        assert!(c.residual < 1e-12, "{c}");
    }
}

#[test]
fn perturbed_entry_is_the_liouville_witness() {
    // flat index (ν·2 + μ)·2 + λ = 5 is b^{10}_1
    let sys = liouville_system([["2 + p^2", "p*q"], ["q^2/2", "3 + q^2"]], Some((5, 1e-3)));
    let report = check_liouville(&sys, &polar_box(), &settings()).unwrap();
    let c = report.check("liouville_connection").unwrap();
    assert!(!c.pass);
    assert!((c.residual - 1e-3).abs() < 1e-12);
    assert_eq!(
        c.witness.as_ref().unwrap().index.as_deref(),
        Some(&[1, 0, 1][..])
    );
}

#[test]
fn pencil_roots_match_characteristic_polynomial() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1 = random_spd(&mut rng, 4);
        let g2 = random_spd(&mut rng, 4);
        let roots = pencil_roots(&g1, &g2, &[]).unwrap();
        let m = g2.clone().try_inverse().unwrap() * &g1;
        let oracle = pencil_oracle::roots(&pencil_oracle::char_poly(&m));
        for (r, o) in roots.iter().zip(&oracle) {
            assert!(r.1 == 0.0);
            assert!(
                (r.0 - o).abs() < 1e-8 * (1.0 + o.abs()),
                "seed {seed}: {r:?} vs {o}"
            );
        }
    }
}

#[test]
fn identical_metrics_form_a_singular_pencil() {
    let g = polar();
    let report = pencil_regularity(&g, &g, &polar_box(), &SamplePlan::default(), 1e-6).unwrap();
    assert!(!report.non_singular());
}

#[test]
fn polar_flat_chart_is_the_cartesian_plane() {
    let sys = polar();
    let chart =
        develop_flat_coords(&sys, &[1.0, 0.0], &polar_box(), &FlatOptions::default()).unwrap();
    assert_eq!(chart.nodes.len(), 64 * 64);
    assert!(
        chart.metric_residual < 1e-7,
        "metric {}",
        chart.metric_residual
    );
    assert!(chart.path_residual < 1e-8, "path {}", chart.path_residual);
    assert_eq!(chart.signature, vec![1.0, 1.0]);
    // ∂(x,y)/∂(r,θ) is the identity at (1,0), so n = P·(x − 1, y)
    let p = &chart.frame;
    for (u, n) in chart.nodes.iter().zip(&chart.coords) {
        let (x, y) = (u[0] * u[1].cos() - 1.0, u[0] * u[1].sin());
        for a in 0..2 {
            let expected = p[a][0] * x + p[a][1] * y;
            assert!((n[a] - expected).abs() < 1e-7, "{u:?}");
        }
    }
    let mut csv = Vec::new();
    chart.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("r,th,n1,n2\n"));
    assert_eq!(text.lines().count(), 64 * 64 + 1);
}

#[test]
fn sphere_is_not_flat() {
    let err = develop_flat_coords(
        &sphere(),
        &[1.5, 0.0],
        &sphere_box(),
        &FlatOptions::default(),
    )
    .unwrap_err();
    match err {
        VerifyError::NotFlat { residual, .. } => assert!(residual > 1e-2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reports_are_deterministic() {
    let s = Settings {
        plan: SamplePlan::with_seed(3),
        ..Settings::default()
    };
    let a = serde_json::to_string(&check_mf(&sphere(), &sphere_box(), &s).unwrap()).unwrap();
    let b = serde_json::to_string(&check_mf(&sphere(), &sphere_box(), &s).unwrap()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flat_chart_is_covariant_under_constant_maps(entries in prop::collection::vec(-2.0f64..2.0, 4)) {
        let a = DMatrix::from_row_slice(2, 2, &entries);
        prop_assume!(a.determinant().abs() > 0.1);
        let opts = FlatOptions { resolution: 8, ..FlatOptions::default() };
        let chart = develop_flat_coords(&polar(), &[1.0, 0.0], &polar_box(), &opts).unwrap();
        let moved = chart.transformed(&a);
        let eta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(chart.signature.clone()));
        let expected = &a * eta * a.transpose();
        for node in [0, 17, 63] {
            let g = moved.pushed_metric(&polar(), node).unwrap();
            prop_assert!((g - &expected).amax() < 1e-7 * (1.0 + expected.amax()));
        }
    }

    #[test]
    fn mf_with_zero_curvature_agrees_with_dn(d1 in 0.5f64..3.0, d2 in -3.0f64..-0.5, off in -0.2f64..0.2) {
        let sys = SystemDef::new("const", &["x", "y"], &[])
            .unwrap()
            .with_g_upper(&[[d1.to_string(), off.to_string()], [off.to_string(), d2.to_string()]])
            .unwrap();
        let b = polar_box();
        let mf = check_mf(&sys, &b, &settings()).unwrap();
        let dn = check_dn(&sys, &b, &settings()).unwrap();
        prop_assert!(mf.fitted_c.unwrap().abs() < 1e-12);
        prop_assert_eq!(mf.pass, dn.pass);
    }
}
