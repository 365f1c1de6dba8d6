use hydrobrackets::fieldbracket::{
    apply_bracket_operator, bracket, hamiltonian_flow, jacobi_residual, random_triples, BracketMix,
    BracketOperator, Functional, GridField, SpectralDerivative, Stencil, DEFAULT_H_STEP,
};
use hydrobrackets::tensor::SystemDef;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn canonical() -> SystemDef {
    SystemDef::new("canonical", &["U1", "U2"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "-1"]])
        .unwrap()
}

fn polar(b_shift: f64) -> SystemDef {
    let shifted = format!("-1/r + {b_shift}");
    SystemDef::new("polar", &["r", "th"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "1/r^2"]])
        .unwrap()
        .with_b(&["0", "0", "0", shifted.as_str(), "0", "1/r", "-1/r^3", "0"])
        .unwrap()
}

fn sphere() -> SystemDef {
    SystemDef::new("sphere", &["th", "ph"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0"], ["0", "1/sin(th)^2"]])
        .unwrap()
        .with_b(&[
            "0",
            "0",
            "0",
            "-cos(th)/sin(th)",
            "0",
            "cos(th)/sin(th)",
            "-cos(th)/sin(th)^3",
            "0",
        ])
        .unwrap()
}

fn field(base: &[f64], seed: u64, m: usize) -> GridField {
    GridField::smooth_random(base, 0.3, 2, m, seed).unwrap()
}

fn max_jacobi(sys: &SystemDef, u: &GridField, count: usize, seed: u64) -> f64 {
    random_triples(&sys.symbols, count, seed)
        .iter()
        .map(|[f, g, h]| {
            jacobi_residual(sys, f, g, h, u, DEFAULT_H_STEP)
                .unwrap()
                .residual
        })
        .fold(0.0, f64::max)
}

#[test]
fn so3_ultralocal_operator_is_a_cross_product() {
    // h^{νμ} = ε^{νμλ} U^λ, so A(ξ)^ν = ε^{νμλ} ξ_μ U^λ = (ξ × U)^ν
    let sys = SystemDef::new("so3", &["U1", "U2", "U3"], &[])
        .unwrap()
        .with_g_upper(&[["0", "0", "0"], ["0", "0", "0"], ["0", "0", "0"]])
        .unwrap()
        .with_h_ultra(&[["0", "U3", "-U2"], ["-U3", "0", "U1"], ["U2", "-U1", "0"]])
        .unwrap();
    let u = GridField::smooth_random(&[1.0, -0.5, 0.2], 1.0, 3, 32, 7).unwrap();
    let s = [0.3, -1.1, 2.0];
    let xi = GridField::new(s.iter().map(|&c| vec![c; 32]).collect()).unwrap();
    let a = apply_bracket_operator(&sys, &u, &xi).unwrap();
    for i in 0..32 {
        let p = u.point(i);
        let cross = [
            s[1] * p[2] - s[2] * p[1],
            s[2] * p[0] - s[0] * p[2],
            s[0] * p[1] - s[1] * p[0],
        ];
        for nu in 0..3 {
            assert!((a.component(nu)[i] - cross[nu]).abs() < 1e-14);
        }
    }
}

#[test]
fn coordinate_integrals_are_annihilators() {
    let sys = canonical();
    let u = field(&[0.5, -0.2], 3, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let g = hydrobrackets::fieldbracket::random_density(&sys.symbols, &mut rng);
        for nu in 0..2 {
            let casimir = Functional::coordinate(&sys.symbols, nu);
            assert!(bracket(&sys, &casimir, &g, &u).unwrap().abs() < 1e-12);
            assert!(bracket(&sys, &g, &casimir, &u).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn momentum_generates_translation() {
    let sys = canonical();
    let u = field(&[0.5, -0.2], 4, 64);
    let p = Functional::momentum(&sys.symbols, &[1.0, -1.0]);
    let ut = hamiltonian_flow(&sys, &p, &u).unwrap();
    let d = SpectralDerivative::new(64);
    for nu in 0..2 {
        let ux = d.apply(u.component(nu));
        for i in 0..64 {
            assert!((ut.component(nu)[i] - ux[i]).abs() < 1e-10);
        }
    }
    // {P, G} = Σ δG/δU^ν U^ν_x Δx
    let g = Functional::parse("U1^2*U2 - U2^3", &sys.symbols).unwrap();
    let dg = g.variational(&u, &[]).unwrap();
    let expected: f64 = (0..2)
        .map(|nu| {
            let ux = d.apply(u.component(nu));
            dg.component(nu)
                .iter()
                .zip(&ux)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum::<f64>()
        * u.dx();
    let got = BracketOperator::new(&sys, 64)
        .unwrap()
        .bracket(&g, &p, &u)
        .unwrap();
    assert!((got - expected).abs() < 1e-10);
    let flow = hamiltonian_flow(&sys, &Functional::coordinate(&sys.symbols, 1), &u).unwrap();
    assert!(flow.values().iter().flatten().all(|v| v.abs() < 1e-13));
}

#[test]
fn constant_bracket_satisfies_jacobi() {
    let sys = canonical();
    let u = field(&[0.4, 0.1], 5, 64);
    let worst = max_jacobi(&sys, &u, 5, 1);
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn flat_polar_pair_satisfies_jacobi() {
    let sys = polar(0.0);
    let u = field(&[1.3, 0.2], 6, 64);
    let worst = max_jacobi(&sys, &u, 5, 2);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn perturbed_connection_breaks_jacobi() {
    let sys = polar(0.1);
    let u = field(&[1.3, 0.2], 6, 64);
    let worst = max_jacobi(&sys, &u, 20, 2);
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn curved_metric_breaks_jacobi() {
    let sys = sphere();
    let u = field(&[1.2, 0.3], 8, 64);
    let worst = max_jacobi(&sys, &u, 20, 3);
    assert!(worst > 1e-3, "{worst}");
}

fn jacobi_over_grids(stencil: Stencil, step: impl Fn(usize) -> f64) -> Vec<f64> {
    let sys = polar(0.0);
    let triples = random_triples(&sys.symbols, 1, 4);
    let [f, g, h] = &triples[0];
    [32, 64, 128, 256]
        .iter()
        .map(|&m| {
            let u = field(&[1.3, 0.2], 6, m);
            let op = BracketOperator::new(&sys, m).unwrap().with_stencil(stencil);
            op.jacobi(f, g, h, &u, step(m)).unwrap().residual
        })
        .collect()
}

#[test]
fn jacobi_residual_does_not_grow_with_resolution_at_fixed_node_perturbation() {
    // h_step ∝ Δx keeps the per-node perturbation h/Δx fixed
    let residuals = jacobi_over_grids(Stencil::Central, |m| DEFAULT_H_STEP * 64.0 / m as f64);
    for pair in residuals.windows(2) {
        assert!(pair[1] <= 1.1 * pair[0], "{residuals:?}");
    }
}

#[test]
fn fourth_order_stencil_reaches_the_roundoff_floor() {
    let residuals = jacobi_over_grids(Stencil::Richardson, |_| DEFAULT_H_STEP);
    for pair in residuals.windows(2) {
        assert!(pair[1] <= pair[0].max(1e-9), "{residuals:?}");
    }
    assert!(residuals.iter().all(|r| *r < 1e-9), "{residuals:?}");
}

#[test]
fn tiny_step_is_flagged() {
    let sys = polar(0.0);
    let u = field(&[1.3, 0.2], 6, 32);
    let triples = random_triples(&sys.symbols, 1, 4);
    let [f, g, h] = &triples[0];
    let report = jacobi_residual(&sys, f, g, h, &u, 1e-14).unwrap();
    assert!(report.step_too_small, "{report:?}");
    let report = jacobi_residual(&sys, f, g, h, &u, DEFAULT_H_STEP).unwrap();
    assert!(!report.step_too_small, "{report:?}");
}

#[test]
fn ultralocal_part_can_be_tested_alone() {
    let sys = SystemDef::new("so3", &["U1", "U2", "U3"], &[])
        .unwrap()
        .with_g_upper(&[["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
        .unwrap()
        .with_h_ultra(&[["0", "U3", "-U2"], ["-U3", "0", "U1"], ["U2", "-U1", "0"]])
        .unwrap();
    let u = GridField::smooth_random(&[1.0, -0.5, 0.2], 0.3, 2, 32, 1).unwrap();
    let triples = random_triples(&sys.symbols, 2, 8);
    for mix in [
        BracketMix::default(),
        BracketMix {
            local: 0.0,
            ultralocal: 1.0,
        },
        BracketMix {
            local: 1.0,
            ultralocal: 0.0,
        },
    ] {
        let op = BracketOperator::new(&sys, 32).unwrap().with_mix(mix);
        for [f, g, h] in &triples {
            let r = op.jacobi(f, g, h, &u, DEFAULT_H_STEP).unwrap();
            assert!(r.residual < 1e-7, "{mix:?}: {r:?}");
        }
    }
}

#[test]
fn leibniz_rule_for_product_functionals() {
    // K = G·H has δK = G δH + H δG; {K, F} equals the derivative of K along
    // the flow of F.
    let sys = polar(0.0);
    let u = field(&[1.3, 0.2], 9, 64);
    let triples = random_triples(&sys.symbols, 1, 11);
    let [f, g, h] = &triples[0];
    let op = BracketOperator::new(&sys, 64).unwrap();
    let (gv, hv) = (g.value(&u, &[]).unwrap(), h.value(&u, &[]).unwrap());
    let (dg, dh) = (
        g.variational(&u, &[]).unwrap(),
        h.variational(&u, &[]).unwrap(),
    );
    let dk = GridField::new(
        (0..2)
            .map(|nu| {
                dg.component(nu)
                    .iter()
                    .zip(dh.component(nu))
                    .map(|(a, b)| gv * b + hv * a)
                    .collect()
            })
            .collect(),
    )
    .unwrap();
    let df = f.variational(&u, &[]).unwrap();
    let via_product = op.pairing(&u, &dk, &df).unwrap();
    let flow = op.apply(&u, &df).unwrap();
    let k_at = |eps: f64| {
        let shifted = GridField::new(
            (0..2)
                .map(|nu| {
                    u.component(nu)
                        .iter()
                        .zip(flow.component(nu))
                        .map(|(a, b)| a + eps * b)
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        g.value(&shifted, &[]).unwrap() * h.value(&shifted, &[]).unwrap()
    };
    let eps = 1e-4;
    let directional =
        (8.0 * (k_at(eps) - k_at(-eps)) - (k_at(2.0 * eps) - k_at(-2.0 * eps))) / (12.0 * eps);
    let split = bracket(&sys, g, f, &u).unwrap() * hv + gv * bracket(&sys, h, f, &u).unwrap();
    assert!((via_product - directional).abs() < 1e-7 * (1.0 + directional.abs()));
    assert!((via_product - split).abs() < 1e-9 * (1.0 + split.abs()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn brackets_are_antisymmetric(seed in 0u64..10_000) {
        for sys in [canonical(), polar(0.0)] {
            let u = field(&[1.3, 0.2], seed, 64);
            let triples = random_triples(&sys.symbols, 1, seed);
            let [f, g, _] = &triples[0];
            let fg = bracket(&sys, f, g, &u).unwrap();
            let gf = bracket(&sys, g, f, &u).unwrap();
            prop_assert!((fg + gf).abs() < 1e-10, "{} {} {}", sys.name, fg, gf);
        }
    }
}
