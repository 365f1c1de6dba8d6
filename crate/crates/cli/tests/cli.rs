use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run_with(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hydrobrackets"));
    cmd.args(args).env_remove("HYDROBRACKETS_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_with(args, &[])
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn canonical_is_dn_flat() {
    let out = run(&["check", "--class", "dn", "examples/canonical.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("verdict: DN_FLAT"));
}

#[test]
fn sphere_is_mf_with_unit_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("mf.json");
    let out = run(&["check", "--class", "mf", "examples/sphere.json", "--out", path_str(&report)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("MF_CONST_CURV"));
    let json = read_json(&report);
    let c = json["fitted_c"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 1e-6, "c = {c}");
    assert_eq!(json["pass"], Value::Bool(true));
}

#[test]
fn sphere_fails_dn_with_curvature_witness() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("dn.json");
    let out = run(&["check", "--class", "dn", "examples/sphere.json", "--out", path_str(&report)]);
    assert_eq!(code(&out), 2);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.contains("curvature_zero")).unwrap();
    assert!(line.contains("FAIL") && line.contains(" at ["), "{line}");
    let json = read_json(&report);
    let check = json["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "curvature_zero")
        .unwrap();
    assert!((check["residual"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(check["witness"]["point"].is_array());
}

#[test]
fn tolerance_flags_override_the_config() {
    let out = run(&["check", "--class", "dn", "sphere", "--tol-zero", "10"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn ferapontov_pair_and_mutant() {
    assert_eq!(code(&run(&["check", "--class", "fer", "sphere_affinor"])), 0);
    let out = run(&["check", "--class", "fer", "ferapontov_mutant"]);
    assert_eq!(code(&out), 2);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.contains("weingarten_symmetric")).unwrap();
    assert!(line.contains("FAIL") && line.contains(" at ["));
}

#[test]
fn auto_falls_through_to_mf() {
    let out = run(&["check", "sphere"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("MF_CONST_CURV"));
}

#[test]
fn missing_affinors_is_a_usage_error() {
    let out = run(&["check", "--class", "fer", "polar"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("affinors"));
}

#[test]
fn polar_flat_chart_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("polar.csv");
    let out = run(&["flat-coords", "polar", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, ["r", "th", "n1", "n2"]);
    assert_eq!(rows.len(), 64 * 64);
    // the chart is Cartesian up to a rotation and shift: |n - n0| = distance
    let num = |s: &String| s.parse::<f64>().unwrap();
    let cart = |r: f64, t: f64| (r * t.cos(), r * t.sin());
    let p0 = cart(num(&rows[0][0]), num(&rows[0][1]));
    let n0 = (num(&rows[0][2]), num(&rows[0][3]));
    for row in rows.iter().step_by(97) {
        let p = cart(num(&row[0]), num(&row[1]));
        let n = (num(&row[2]), num(&row[3]));
        let d_flat = ((n.0 - n0.0).powi(2) + (n.1 - n0.1).powi(2)).sqrt();
        let d_true = ((p.0 - p0.0).powi(2) + (p.1 - p0.1).powi(2)).sqrt();
        assert!((d_flat - d_true).abs() < 1e-7, "{d_flat} vs {d_true}");
    }
}

#[test]
fn constant_metric_chart_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let out = run(&["flat-coords", "canonical", "--grid", "9", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0);
    let (_, rows) = read_csv(&csv);
    let v: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(v.len(), 81);
    // second differences vanish along both grid directions
    for i in 1..8 {
        for j in 1..8 {
            for c in 2..4 {
                let at = |a: usize, b: usize| v[a * 9 + b][c];
                let d1 = at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j);
                let d2 = at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1);
                assert!(d1.abs() < 1e-14 && d2.abs() < 1e-14);
            }
        }
    }
}

#[test]
fn sphere_has_no_flat_chart() {
    let out = run(&["flat-coords", "sphere"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("NOT_FLAT"));
}

#[test]
fn hopf_solution_matches_the_branch() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("hopf.csv");
    let out = run(&["hodograph", "hopf", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, ["x", "t", "R1", "residual", "converged"]);
    assert_eq!(rows.len(), 256 * 64);
    for row in &rows {
        let [x, t, r]: [f64; 3] = [0, 1, 2].map(|k| row[k].parse().unwrap());
        let exact = (t + (t * t + 4.0 * x).sqrt()) / 2.0;
        assert!((r - exact).abs() < 1e-10);
        assert_eq!(row[4], "true");
    }
    let pde = stdout(&out)
        .lines()
        .find(|l| l.contains("pde_residual"))
        .unwrap()
        .to_string();
    assert!(pde.contains("PASS") && pde.contains("1.00e-7"), "{pde}");
}

#[test]
fn shallow_water_goursat_pipeline_passes() {
    let out = run(&["hodograph", "shallow_water"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("solved 2121/2121"));
}

#[test]
fn incompatible_system_is_refused_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c3.csv");
    let out = run(&["hodograph", "coupled3", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 2);
    let text = stdout(&out);
    assert!(text.contains("refusing to solve"));
    assert!(!csv.exists());
    let line = text.lines().find(|l| l.contains("compatibility")).unwrap();
    let residual: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(residual > 1e-3);

    let forced = run(&["hodograph", "coupled3", "--force", "--out", path_str(&csv)]);
    assert_ne!(code(&forced), 1, "{}", stderr(&forced));
    assert!(stdout(&forced).contains("solving anyway"));
    assert!(csv.exists());
}

#[test]
fn hodograph_needs_a_section() {
    let out = run(&["hodograph", "eps_system"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no hodograph section"));
}

#[test]
fn jacobi_sweeps_separate_brackets_from_non_brackets() {
    let dir = tempfile::tempdir().unwrap();
    for (name, expected, bound) in [
        ("canonical", 0, 1e-8),
        ("polar", 0, 1e-6),
        ("polar_perturbed", 2, 1e-3),
        ("sphere", 2, 1e-3),
    ] {
        let report = dir.path().join(format!("{name}.json"));
        let out = run(&["jacobi", name, "--out", path_str(&report)]);
        assert_eq!(code(&out), expected, "{name}: {}", stdout(&out));
        let json = read_json(&report);
        let max = json["max_residual"].as_f64().unwrap();
        if expected == 0 {
            assert!(max < bound, "{name}: {max}");
        } else {
            assert!(max > bound, "{name}: {max}");
        }
        assert_eq!(json["residuals"].as_array().unwrap().len(), 20);
        assert_eq!(json["worst_triple"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for (k, threads) in ["1", "2", "1"].iter().enumerate() {
        let check = dir.path().join(format!("check{k}.json"));
        let jac = dir.path().join(format!("jac{k}.json"));
        let env = [("HYDROBRACKETS_THREADS", *threads)];
        let a = run_with(&["check", "sphere", "--seed", "3", "--out", path_str(&check)], &env);
        let b = run_with(&["jacobi", "polar", "--grid", "32", "--out", path_str(&jac)], &env);
        assert_eq!((code(&a), code(&b)), (0, 0));
        texts.push((std::fs::read(&check).unwrap(), std::fs::read(&jac).unwrap()));
    }
    assert!(texts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seed_changes_the_sample_set() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    run(&["check", "--class", "dn", "sphere", "--out", path_str(&a)]);
    run(&["check", "--class", "dn", "sphere", "--seed", "5", "--out", path_str(&b)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let out = run_with(&["examples"], &[("HYDROBRACKETS_THREADS", "zero")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("HYDROBRACKETS_THREADS"));
}

#[test]
fn config_errors_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        "{\n  \"name\": \"bad\",\n  \"N\": 2,\n  \"coords\": [\"x\", \"y\"],\n  \
         \"g_upper\": [[\"1\", \"0\"], [\"0\", \"z^2\"]],\n  \
         \"box\": {\"min\": [0, 0], \"max\": [1, 1]}\n}\n",
    )
    .unwrap();
    let out = run(&["check", path_str(&path)]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("bad.json:5:"), "{err}");
    assert!(err.contains("/g_upper/1/1") && err.contains("unknown symbol"), "{err}");

    std::fs::write(&path, "{\"name\": \"x\", \"N\": 1, \"coords\": [\"u\"]}").unwrap();
    let err = stderr(&run(&["check", path_str(&path)]));
    assert!(err.contains("bad.json:1:1") && err.contains("box"), "{err}");

    std::fs::write(&path, "{\"name\": \"x\",\n \"N\": 1,,}").unwrap();
    let err = stderr(&run(&["check", path_str(&path)]));
    assert!(err.contains("bad.json:2:") && err.contains("invalid JSON"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["check"])), 1);
    assert_eq!(code(&run(&["check", "--class", "xyz", "sphere"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["check", "no_such_system"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn examples_round_trip_through_files() {
    let out = run(&["examples"]);
    assert_eq!(code(&out), 0);
    let listing = stdout(&out);
    for name in [
        "canonical",
        "polar",
        "sphere",
        "sphere_affinor",
        "shallow_water_physical",
        "shallow_water",
        "hopf",
        "eps_system",
        "so3",
    ] {
        assert!(listing.lines().any(|l| l.starts_with(name)), "{name}");
    }

    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    assert_eq!(code(&run(&["examples", "--out", path_str(&lib)])), 0);
    let file = lib.join("sphere.json");
    let from_file = dir.path().join("f.json");
    let from_builtin = dir.path().join("b.json");
    run(&["check", path_str(&file), "--out", path_str(&from_file)]);
    run(&["check", "sphere", "--out", path_str(&from_builtin)]);
    assert_eq!(
        std::fs::read(&from_file).unwrap(),
        std::fs::read(&from_builtin).unwrap()
    );

    let shown = run(&["examples", "hopf"]);
    assert_eq!(stdout(&shown), std::fs::read_to_string(lib.join("hopf.json")).unwrap());
}
