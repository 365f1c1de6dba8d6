//! JSON system definitions: schema validation, semantic checks with
//! source locations, and the built-in example library.

mod locate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use jsonschema::{Draft, JSONSchema};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::expr::{parse, Expr, Symbols};
use crate::fieldbracket::{BracketMix, FieldError, GridField, Stencil, DEFAULT_H_STEP, DEFAULT_M};
use crate::hodograph::{
    integrate_commuting_flow, CommutingFlow, DiagonalSystem, HodographError, NewtonOptions,
    Window, DEFAULT_TOL_GOURSAT,
};
use crate::sampling::{CoordBox, SamplePlan, DEFAULT_SAMPLES};
use crate::tensor::SystemDef;
use crate::verify::{FlatOptions, Settings, Tolerances, DEFAULT_SUBSTEPS};

pub const DEFAULT_TOL_JACOBI: f64 = 1e-6;
pub const DEFAULT_TOL_MIXED: f64 = 1e-4;

/// The published schema (JSON Schema draft 7).
pub const SCHEMA: &str = include_str!("schema.json");

const LIBRARY: &[(&str, &str)] = &[
    ("canonical", include_str!("../../library/canonical.json")),
    ("polar", include_str!("../../library/polar.json")),
    ("polar_perturbed", include_str!("../../library/polar_perturbed.json")),
    ("sphere", include_str!("../../library/sphere.json")),
    ("sphere_affinor", include_str!("../../library/sphere_affinor.json")),
    ("ferapontov_mutant", include_str!("../../library/ferapontov_mutant.json")),
    ("nonconst_curvature", include_str!("../../library/nonconst_curvature.json")),
    ("liouville", include_str!("../../library/liouville.json")),
    ("so3", include_str!("../../library/so3.json")),
    ("shallow_water_physical", include_str!("../../library/shallow_water_physical.json")),
    ("shallow_water", include_str!("../../library/shallow_water.json")),
    ("generic3", include_str!("../../library/generic3.json")),
    ("hopf", include_str!("../../library/hopf.json")),
    ("eps_system", include_str!("../../library/eps_system.json")),
    ("coupled3", include_str!("../../library/coupled3.json")),
];

/// Names and sources of the built-in configs, in listing order.
pub fn library() -> impl Iterator<Item = (&'static str, &'static str)> {
    LIBRARY.iter().copied()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    LIBRARY.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// One problem in a config, located in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    /// JSON pointer to the offending value (`""` for the document).
    pub pointer: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// File path or `builtin:<name>`.
    pub origin: String,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(
                f,
                "{}:{}:{}: {}",
                self.origin, issue.line, issue.column, issue.message
            )?;
            if !issue.pointer.is_empty() {
                write!(f, " (at {})", issue.pointer)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Expression entry: a DSL string or a bare number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprSource {
    Number(f64),
    Text(String),
}

impl ExprSource {
    pub fn text(&self) -> String {
        match self {
            ExprSource::Number(x) => x.to_string(),
            ExprSource::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSource {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinorSource {
    pub sign: f64,
    pub matrix: Vec<Vec<ExprSource>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesSource {
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub extra: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatSection {
    /// Defaults to the box centre.
    pub basepoint: Option<Vec<f64>>,
    pub resolution: Option<usize>,
    pub substeps: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSource {
    /// Defaults to the box centre.
    pub base: Option<Vec<f64>>,
    /// Defaults to a quarter of the smallest box extent.
    pub amplitude: Option<f64>,
    pub harmonics: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacobiSection {
    pub grid: Option<usize>,
    pub triples: Option<usize>,
    pub seed: Option<u64>,
    pub h_step: Option<f64>,
    /// Largest accepted Jacobi residual.
    pub tol: Option<f64>,
    pub stencil: Stencil,
    pub mix: BracketMix,
    pub field: FieldSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSource {
    ClosedForm {
        w: Vec<ExprSource>,
    },
    Goursat {
        basepoint: Vec<f64>,
        boundary: Vec<ExprSource>,
        cells: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HodographSection {
    pub flow: FlowSource,
    pub window: Window,
    pub seed: Vec<f64>,
    #[serde(default)]
    pub newton: NewtonOptions,
    pub tol_goursat: Option<f64>,
    /// Cross-derivative consistency of an integrated flow.
    pub tol_mixed: Option<f64>,
    pub tol_residual: Option<f64>,
}

/// The document as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub coords: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub g_upper: Option<Vec<Vec<ExprSource>>>,
    pub b: Option<Vec<Vec<Vec<ExprSource>>>>,
    #[serde(rename = "V")]
    pub v: Option<Vec<Vec<ExprSource>>>,
    pub v_diag: Option<Vec<ExprSource>>,
    pub affinors: Option<Vec<AffinorSource>>,
    pub h_ultra: Option<Vec<Vec<ExprSource>>>,
    pub gamma: Option<Vec<Vec<ExprSource>>>,
    pub curvature_const: Option<f64>,
    #[serde(rename = "box")]
    pub bounds: BoxSource,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub samples: SamplesSource,
    #[serde(default)]
    pub flat: FlatSection,
    #[serde(default)]
    pub jacobi: JacobiSection,
    pub hodograph: Option<HodographSection>,
}

/// Jacobi sweep settings with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiPlan {
    pub grid: usize,
    pub triples: usize,
    pub seed: u64,
    pub h_step: f64,
    pub tol: f64,
    pub stencil: Stencil,
    pub mix: BracketMix,
    pub base: Vec<f64>,
    pub amplitude: f64,
    pub harmonics: usize,
    pub field_seed: u64,
}

impl JacobiPlan {
    pub fn field(&self) -> Result<GridField, FieldError> {
        GridField::smooth_random(
            &self.base,
            self.amplitude,
            self.harmonics,
            self.grid,
            self.field_seed,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowPlan {
    ClosedForm(Vec<Expr>),
    Goursat {
        basepoint: Vec<f64>,
        boundary: Vec<Expr>,
        cells: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HodographPlan {
    pub flow: FlowPlan,
    pub window: Window,
    pub seed: Vec<f64>,
    pub newton: NewtonOptions,
    pub tol_goursat: f64,
    pub tol_mixed: f64,
    pub tol_residual: f64,
}

/// A validated config: the document plus the objects it defines.
#[derive(Clone, Debug)]
pub struct Config {
    pub origin: String,
    pub file: ConfigFile,
    pub system: SystemDef,
    pub bounds: CoordBox,
    pub hodograph: Option<HodographPlan>,
}

fn schema() -> &'static JSONSchema {
    static COMPILED: std::sync::OnceLock<JSONSchema> = std::sync::OnceLock::new();
    COMPILED.get_or_init(|| {
        let doc: Value = serde_json::from_str(SCHEMA).expect("embedded schema is valid JSON");
        JSONSchema::options()
            .with_draft(Draft::Draft7)
            .compile(&doc)
            .expect("embedded schema compiles")
    })
}

/// Collects located issues against one source text.
struct Issues<'a> {
    text: &'a str,
    list: Vec<Issue>,
}

impl Issues<'_> {
    fn push(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        let pointer = pointer.into();
        let (line, column) = locate::locate(self.text, &pointer);
        self.list.push(Issue {
            pointer,
            line,
            column,
            message: message.into(),
        });
    }

    fn expr(&mut self, pointer: String, source: &ExprSource, symbols: &Symbols) -> Option<Expr> {
        match parse(&source.text(), symbols) {
            Ok(e) => Some(e),
            Err(e) => {
                self.push(pointer, format!("cannot parse expression: {e}"));
                None
            }
        }
    }

    fn vector(
        &mut self,
        pointer: &str,
        entries: &[ExprSource],
        n: usize,
        symbols: &Symbols,
    ) -> Option<Vec<Expr>> {
        if entries.len() != n {
            self.push(pointer, format!("expected {n} entries, found {}", entries.len()));
            return None;
        }
        let parsed: Vec<Option<Expr>> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| self.expr(format!("{pointer}/{i}"), e, symbols))
            .collect();
        parsed.into_iter().collect()
    }

    fn matrix(
        &mut self,
        pointer: &str,
        rows: &[Vec<ExprSource>],
        n: usize,
        symbols: &Symbols,
    ) -> Option<Vec<Vec<Expr>>> {
        if rows.len() != n {
            self.push(pointer, format!("expected {n} rows, found {}", rows.len()));
            return None;
        }
        let parsed: Vec<Option<Vec<Expr>>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.vector(&format!("{pointer}/{i}"), r, n, symbols))
            .collect();
        parsed.into_iter().collect()
    }

    fn point(&mut self, pointer: &str, p: &[f64], n: usize) -> bool {
        if p.len() != n {
            self.push(pointer, format!("expected {n} coordinates, found {}", p.len()));
            return false;
        }
        true
    }
}

fn strings(rows: &[Vec<Expr>]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| r.iter().map(Expr::to_string).collect())
        .collect()
}

impl Config {
    /// Parses, schema-validates and semantically checks `text`. All
    /// problems found in one pass are reported together.
    pub fn from_str(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let fail = |issues: Vec<Issue>| ConfigError {
            origin: origin.to_string(),
            issues,
        };
        let value: Value = serde_json::from_str(text).map_err(|e| {
            fail(vec![Issue {
                pointer: String::new(),
                line: e.line(),
                column: e.column(),
                message: format!("invalid JSON: {e}"),
            }])
        })?;
        let mut issues = Issues {
            text,
            list: Vec::new(),
        };
        if let Err(errors) = schema().validate(&value) {
            for e in errors {
                issues.push(e.instance_path.to_string(), e.to_string());
            }
            return Err(fail(issues.list));
        }
        let file: ConfigFile = match serde_json::from_value(value) {
            Ok(f) => f,
            Err(e) => {
                issues.push("", e.to_string());
                return Err(fail(issues.list));
            }
        };
        match Config::build(file, &mut issues) {
            Some(mut config) if issues.list.is_empty() => {
                config.origin = origin.to_string();
                Ok(config)
            }
            _ => Err(fail(issues.list)),
        }
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            issues: vec![Issue {
                pointer: String::new(),
                line: 0,
                column: 0,
                message: format!("cannot read file: {e}"),
            }],
        })?;
        Config::from_str(&text, &origin)
    }

    /// A built-in library entry; `None` if no entry has this name.
    pub fn builtin(name: &str) -> Option<Result<Config, ConfigError>> {
        builtin_source(name).map(|text| Config::from_str(text, &format!("builtin:{name}")))
    }

    fn build(file: ConfigFile, issues: &mut Issues<'_>) -> Option<Config> {
        let n = file.n;
        if file.coords.len() != n {
            issues.push(
                "/coords",
                format!("N = {n} but {} coordinates are declared", file.coords.len()),
            );
            return None;
        }
        let params: Vec<(&str, f64)> = file.params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let mut system = match SystemDef::new(
            file.name.clone(),
            &file.coords.iter().map(String::as_str).collect::<Vec<_>>(),
            &params,
        ) {
            Ok(s) => s,
            Err(e) => {
                issues.push("/params", e.to_string());
                return None;
            }
        };
        let symbols = system.symbols.clone();

        let bounds_ok = issues.point("/box/min", &file.bounds.min, n)
            & issues.point("/box/max", &file.bounds.max, n);
        if bounds_ok {
            for k in 0..n {
                if !(file.bounds.min[k] < file.bounds.max[k]) {
                    issues.push(format!("/box/max/{k}"), "box max must exceed box min");
                }
            }
        }
        let bounds =
            bounds_ok.then(|| CoordBox::new(file.bounds.min.clone(), file.bounds.max.clone()));

        let attach = |result: Result<SystemDef, crate::tensor::SystemError>,
                          pointer: &str,
                          issues: &mut Issues<'_>|
         -> Option<SystemDef> {
            result
                .map_err(|e| issues.push(pointer, e.to_string()))
                .ok()
        };
        if let Some(rows) = &file.g_upper {
            if let Some(m) = issues.matrix("/g_upper", rows, n, &symbols) {
                system = attach(system.clone().with_g_upper(&strings(&m)), "/g_upper", issues)?;
            }
        }
        if let Some(b) = &file.b {
            if b.len() != n {
                issues.push("/b", format!("expected {n} slices, found {}", b.len()));
            } else {
                let slices: Vec<Option<Vec<Vec<Expr>>>> = b
                    .iter()
                    .enumerate()
                    .map(|(nu, s)| issues.matrix(&format!("/b/{nu}"), s, n, &symbols))
                    .collect();
                if let Some(slices) = slices.into_iter().collect::<Option<Vec<_>>>() {
                    let flat: Vec<String> = slices
                        .iter()
                        .flatten()
                        .flatten()
                        .map(Expr::to_string)
                        .collect();
                    system = attach(system.clone().with_b(&flat), "/b", issues)?;
                }
            }
        }
        if let Some(rows) = &file.v {
            if let Some(m) = issues.matrix("/V", rows, n, &symbols) {
                system = attach(system.clone().with_v_matrix(&strings(&m)), "/V", issues)?;
            }
        }
        if let Some(v) = &file.v_diag {
            if let Some(v) = issues.vector("/v_diag", v, n, &symbols) {
                let v: Vec<String> = v.iter().map(Expr::to_string).collect();
                system = attach(system.clone().with_v_diag(&v), "/v_diag", issues)?;
            }
        }
        if let Some(list) = &file.affinors {
            system = system.with_no_affinors();
            for (k, a) in list.iter().enumerate() {
                let pointer = format!("/affinors/{k}/matrix");
                if let Some(m) = issues.matrix(&pointer, &a.matrix, n, &symbols) {
                    system = attach(
                        system.clone().with_affinor(a.sign, &strings(&m)),
                        &format!("/affinors/{k}"),
                        issues,
                    )?;
                }
            }
        }
        if let Some(rows) = &file.h_ultra {
            if let Some(m) = issues.matrix("/h_ultra", rows, n, &symbols) {
                system = attach(system.clone().with_h_ultra(&strings(&m)), "/h_ultra", issues)?;
            }
        }
        if let Some(rows) = &file.gamma {
            if let Some(m) = issues.matrix("/gamma", rows, n, &symbols) {
                system = attach(system.clone().with_gamma(&strings(&m)), "/gamma", issues)?;
            }
        }
        if let Some(c) = file.curvature_const {
            system = system.with_curvature_const(c);
        }

        for (k, p) in file.samples.extra.iter().enumerate() {
            issues.point(&format!("/samples/extra/{k}"), p, n);
        }
        if let Some(p) = &file.flat.basepoint {
            if issues.point("/flat/basepoint", p, n) && bounds.as_ref().is_some_and(|b| !b.contains(p)) {
                issues.push("/flat/basepoint", "basepoint lies outside the box");
            }
        }
        if let Some(p) = &file.jacobi.field.base {
            issues.point("/jacobi/field/base", p, n);
        }
        if let Some(m) = file.jacobi.grid {
            if !m.is_power_of_two() {
                issues.push("/jacobi/grid", format!("grid size {m} is not a power of two"));
            }
        }

        let hodograph = file
            .hodograph
            .as_ref()
            .and_then(|h| Config::hodograph_plan(h, &file, &symbols, issues));

        Some(Config {
            origin: String::new(),
            system,
            bounds: bounds?,
            hodograph,
            file,
        })
    }

    fn hodograph_plan(
        h: &HodographSection,
        file: &ConfigFile,
        symbols: &Symbols,
        issues: &mut Issues<'_>,
    ) -> Option<HodographPlan> {
        let n = file.n;
        if file.v_diag.is_none() {
            issues.push("/hodograph", "a hodograph section needs diagonal velocities v_diag");
        }
        let seed_ok = issues.point("/hodograph/seed", &h.seed, n);
        let flow = match &h.flow {
            FlowSource::ClosedForm { w } => {
                FlowPlan::ClosedForm(issues.vector("/hodograph/flow/closed_form/w", w, n, symbols)?)
            }
            FlowSource::Goursat {
                basepoint,
                boundary,
                cells,
            } => {
                if n != 2 {
                    issues.push(
                        "/hodograph/flow/goursat",
                        format!("Goursat integration needs N = 2, got N = {n}"),
                    );
                    return None;
                }
                let base_ok = issues.point("/hodograph/flow/goursat/basepoint", basepoint, n);
                let boundary =
                    issues.vector("/hodograph/flow/goursat/boundary", boundary, n, symbols)?;
                if !base_ok {
                    return None;
                }
                FlowPlan::Goursat {
                    basepoint: basepoint.clone(),
                    boundary,
                    cells: *cells,
                }
            }
        };
        for (axis, r) in [("x", h.window.x), ("t", h.window.t)] {
            if !(r[0] <= r[1]) {
                issues.push(format!("/hodograph/window/{axis}"), "range must be [min, max]");
            }
        }
        if !seed_ok {
            return None;
        }
        Some(HodographPlan {
            flow,
            window: h.window.clone(),
            seed: h.seed.clone(),
            newton: h.newton,
            tol_goursat: h.tol_goursat.unwrap_or(DEFAULT_TOL_GOURSAT),
            tol_mixed: h.tol_mixed.unwrap_or(DEFAULT_TOL_MIXED),
            tol_residual: h.tol_residual.unwrap_or(1e-5),
        })
    }

    pub fn name(&self) -> &str {
        &self.system.name
    }

    pub fn settings(&self) -> Settings {
        Settings {
            tolerances: self.file.tolerances,
            plan: SamplePlan {
                count: self.file.samples.count.unwrap_or(DEFAULT_SAMPLES),
                seed: self.file.samples.seed.unwrap_or(0),
                extra: self.file.samples.extra.clone(),
            },
        }
    }

    pub fn flat_basepoint(&self) -> Vec<f64> {
        self.file
            .flat
            .basepoint
            .clone()
            .unwrap_or_else(|| self.bounds.center())
    }

    pub fn flat_options(&self) -> FlatOptions {
        let defaults = FlatOptions::default();
        FlatOptions {
            resolution: self.file.flat.resolution.unwrap_or(defaults.resolution),
            substeps: self.file.flat.substeps.unwrap_or(DEFAULT_SUBSTEPS),
            tol_flat: self.file.tolerances.tol_flat,
        }
    }

    pub fn jacobi_plan(&self) -> JacobiPlan {
        let j = &self.file.jacobi;
        let min_extent = (0..self.bounds.dim())
            .map(|k| self.bounds.extent(k))
            .fold(f64::INFINITY, f64::min);
        JacobiPlan {
            grid: j.grid.unwrap_or(DEFAULT_M),
            triples: j.triples.unwrap_or(20),
            seed: j.seed.unwrap_or(0),
            h_step: j.h_step.unwrap_or(DEFAULT_H_STEP),
            tol: j.tol.unwrap_or(DEFAULT_TOL_JACOBI),
            stencil: j.stencil,
            mix: j.mix,
            base: j.field.base.clone().unwrap_or_else(|| self.bounds.center()),
            amplitude: j.field.amplitude.unwrap_or(0.25 * min_extent),
            harmonics: j.field.harmonics.unwrap_or(3),
            field_seed: j.field.seed.unwrap_or(1),
        }
    }

    /// The system in Riemann invariants, over the config box.
    pub fn diagonal(&self) -> Result<DiagonalSystem, HodographError> {
        DiagonalSystem::new(&self.system, self.bounds.clone())
    }

    /// Builds the configured commuting flow (integrating it when the
    /// config asks for Goursat data).
    pub fn commuting_flow(
        plan: &HodographPlan,
        sys: &DiagonalSystem,
        tol_gap: f64,
    ) -> Result<CommutingFlow, HodographError> {
        match &plan.flow {
            FlowPlan::ClosedForm(w) => CommutingFlow::closed_form(sys, w.clone()),
            FlowPlan::Goursat {
                basepoint,
                boundary,
                cells,
            } => integrate_commuting_flow(sys, basepoint, boundary, *cells, tol_gap),
        }
    }
}
