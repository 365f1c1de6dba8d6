use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use hydrobrackets::config::{self, Config, FlowPlan};
use hydrobrackets::fieldbracket::BracketOperator;
use hydrobrackets::hodograph::{
    chain_rule_check, commflows_check, hodograph_solve, semi_hamiltonian_check, verify_solution,
    HodographError,
};
use hydrobrackets::report::{Check, Worst};
use hydrobrackets::verify::{
    check_auto, check_dn, check_ferapontov, check_liouville, check_mf, develop_flat_coords,
    Settings, VerifyError,
};
use serde_json::{json, Value};

use crate::{ClassArg, Global, Outcome};

/// A config path, or failing that the file stem as a built-in name, so
/// `examples/sphere.json` works without the file on disk.
fn load(spec: &str) -> anyhow::Result<Config> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(Config::load(path)?);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    match Config::builtin(stem) {
        Some(config) => Ok(config?),
        None => bail!(
            "`{spec}` is neither a readable file nor a built-in example \
             (run `hydrobrackets examples` for the list)"
        ),
    }
}

fn settings(g: &Global, cfg: &Config) -> Settings {
    let mut s = cfg.settings();
    if let Some(t) = g.tol_zero {
        s.tolerances.tol_zero = t;
    }
    if let Some(t) = g.tol_flat {
        s.tolerances.tol_flat = t;
    }
    if let Some(seed) = g.seed {
        s.plan.seed = seed;
    }
    s
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

pub fn check(g: &Global, class: ClassArg, spec: &str) -> anyhow::Result<Outcome> {
    let cfg = load(spec)?;
    let s = settings(g, &cfg);
    let (sys, bounds) = (&cfg.system, &cfg.bounds);
    let report = match class {
        ClassArg::Dn => check_dn(sys, bounds, &s),
        ClassArg::Mf => check_mf(sys, bounds, &s),
        ClassArg::Fer => check_ferapontov(sys, bounds, &s),
        ClassArg::Liouville => check_liouville(sys, bounds, &s),
        ClassArg::Auto => check_auto(sys, bounds, &s),
    }?;
    println!("{report}");
    if let Some(out) = &g.out {
        write_json(out, &report.to_json())?;
    }
    Ok(outcome(report.pass))
}

pub fn flat_coords(g: &Global, spec: &str) -> anyhow::Result<Outcome> {
    let cfg = load(spec)?;
    let mut opts = cfg.flat_options();
    if let Some(t) = g.tol_flat {
        opts.tol_flat = t;
    }
    if let Some(m) = g.grid {
        opts.resolution = m;
    }
    let basepoint = cfg.flat_basepoint();
    let chart = match develop_flat_coords(&cfg.system, &basepoint, &cfg.bounds, &opts) {
        Ok(chart) => chart,
        Err(VerifyError::NotFlat { residual, point }) => {
            println!("system {}", cfg.name());
            println!("  not flat: path-independence residual {residual:.3e} at {point:?}");
            println!("verdict: NOT_FLAT");
            return Ok(Outcome::Fail);
        }
        Err(e) => return Err(e.into()),
    };
    println!("system {}", cfg.name());
    println!(
        "  chart on a {}^{} grid from basepoint {:?}, signature {:?}",
        chart.resolution,
        chart.dim(),
        chart.basepoint,
        chart.signature
    );
    println!(
        "  metric constancy residual {:.3e} at {:?}",
        chart.metric_residual, chart.metric_witness.point
    );
    println!(
        "  two-path residual {:.3e} at {:?}",
        chart.path_residual, chart.path_witness.point
    );
    println!(
        "verdict: {}",
        if chart.pass() { "FLAT" } else { "ABOVE_TOLERANCE" }
    );
    if let Some(out) = &g.out {
        let mut w = create(out)?;
        chart.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(outcome(chart.pass()))
}

fn print_check(c: &Check) {
    println!("  {c}");
}

pub fn hodograph(g: &Global, spec: &str) -> anyhow::Result<Outcome> {
    let cfg = load(spec)?;
    let Some(mut plan) = cfg.hodograph.clone() else {
        bail!("config `{}` has no hodograph section", cfg.name());
    };
    if let (Some(m), FlowPlan::Goursat { cells, .. }) = (g.grid, &mut plan.flow) {
        *cells = m;
    }
    let s = settings(g, &cfg);
    let sys = cfg.diagonal()?;
    println!("system {} (N = {})", cfg.name(), sys.dim());

    let semi = match semi_hamiltonian_check(&sys, &s) {
        Ok(r) => r,
        Err(e @ HodographError::HyperbolicityViolation { .. }) => {
            println!("  {e}");
            println!("verdict: NOT_HYPERBOLIC");
            return Ok(Outcome::Fail);
        }
        Err(e) => return Err(e.into()),
    };
    print_check(&semi.check);
    if !semi.pass {
        if !g.force {
            println!("  not semi-Hamiltonian; refusing to solve (use --force to override)");
            println!("verdict: NOT_SEMI_HAMILTONIAN");
            return Ok(Outcome::Fail);
        }
        println!("  not semi-Hamiltonian; solving anyway (--force)");
    }

    let flow = Config::commuting_flow(&plan, &sys, s.tolerances.tol_gap)?;
    let mut checks = Vec::new();
    match flow.grid() {
        Some(grid) => {
            checks.push(commflows_check(&sys, &flow, &s.plan, plan.tol_goursat)?);
            checks.push(grid.mixed_derivative_check(plan.tol_mixed));
        }
        None => checks.push(commflows_check(&sys, &flow, &s.plan, s.tolerances.tol_zero)?),
    }
    let sol = hodograph_solve(&sys, &flow, &plan.window, &plan.seed, &plan.newton)?;
    let converged = sol.converged_count();
    match verify_solution(&sol, &sys, plan.tol_residual) {
        Ok(res) => {
            checks.push(res.check);
            checks.push(chain_rule_check(&sol, &sys, &flow, plan.tol_residual)?);
        }
        Err(e @ HodographError::RegionTooSmall(_)) => {
            let unmeasured = Worst {
                residual: f64::NAN,
                witness: None,
            };
            checks.push(Check::new("pde_residual", unmeasured, plan.tol_residual));
            println!("  {e}");
        }
        Err(e) => return Err(e.into()),
    }
    for c in &checks {
        print_check(c);
    }
    println!(
        "  solved {converged}/{} spacetime points (max Newton residual {:.3e})",
        sol.r.len(),
        sol.max_newton_residual()
    );
    let pass = converged > 0 && checks.iter().all(|c| c.pass);
    println!("verdict: {}", if pass { "SOLVED" } else { "FAILED" });
    if let Some(out) = &g.out {
        let mut w = create(out)?;
        sol.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(outcome(pass))
}

pub fn jacobi(g: &Global, spec: &str) -> anyhow::Result<Outcome> {
    let cfg = load(spec)?;
    let mut plan = cfg.jacobi_plan();
    if let Some(m) = g.grid {
        plan.grid = m;
    }
    if let Some(seed) = g.seed {
        plan.seed = seed;
    }
    let u = plan.field()?;
    let op = BracketOperator::new(&cfg.system, plan.grid)?
        .with_mix(plan.mix)
        .with_stencil(plan.stencil);
    let sweep = op.jacobi_sweep(&u, plan.triples, plan.seed, plan.h_step)?;
    let pass = sweep.max_residual < plan.tol;
    println!(
        "system {}: {} triples on M = {} (seed {}, h = {:e})",
        cfg.name(),
        plan.triples,
        plan.grid,
        plan.seed,
        plan.h_step
    );
    println!("  max Jacobi residual {:.3e} (tol {:e})", sweep.max_residual, plan.tol);
    println!(
        "  worst triple: {} | {} | {}",
        sweep.worst_triple[0], sweep.worst_triple[1], sweep.worst_triple[2]
    );
    if sweep.step_too_small {
        println!("  note: residuals are near the roundoff floor of the field-space step");
    }
    println!("verdict: {}", if pass { "JACOBI_HOLDS" } else { "JACOBI_FAILS" });
    if let Some(out) = &g.out {
        let mut report = serde_json::to_value(&sweep)?;
        report["tol"] = json!(plan.tol);
        report["pass"] = json!(pass);
        write_json(out, &report)?;
    }
    Ok(outcome(pass))
}

pub fn examples(g: &Global, name: Option<&str>) -> anyhow::Result<Outcome> {
    if let Some(name) = name {
        let Some(source) = config::builtin_source(name) else {
            bail!("no built-in example named `{name}`");
        };
        print!("{source}");
        return Ok(Outcome::Pass);
    }
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
    }
    for (name, source) in config::library() {
        let doc: Value = serde_json::from_str(source)?;
        let about = doc["description"].as_str().unwrap_or("");
        println!("{name:<24} {about}");
        if let Some(dir) = &g.out {
            let path = dir.join(format!("{name}.json"));
            std::fs::write(&path, source)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
    }
    Ok(Outcome::Pass)
}
