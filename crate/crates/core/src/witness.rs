//! Counterexample witnesses: a generated `main` replays the trace inputs
//! against the instrumented unit, and the run decides whether the reported
//! violation is real.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::bmc::{self, Counterexample, TypedValue, ValueKind};
use crate::csrc::{self, ItemKind};
use crate::injector::{self, InjectError, InstrumentedUnit, HEADER_NAME};

pub const CC_ENV: &str = "SPECVERIFY_CC";
pub const RUN_LIMIT: Duration = Duration::from_secs(10);
const SENTINEL: &str = "SV_FAIL:";

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("counterexample identifier `{0}` matches no input of the unit")]
    InputUnmappable(String),
    #[error("unsupported step function: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Anchor(#[from] InjectError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessHarness {
    pub requirement_id: String,
    pub harness_text: String,
    pub expected_failure: String,
    /// Number of step calls in `harness_text`.
    pub steps: usize,
    pub driven_inputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessOutcome {
    Confirmed,
    Spurious,
    BuildFailed,
    InputUnmappable,
    /// Abnormal exit without the expected assertion message.
    Crashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessResult {
    pub requirement_id: String,
    pub outcome: WitnessOutcome,
    pub observed_output: String,
    pub exit_code: i32,
}

/// `SPECVERIFY_CC` if set, else `cc`.
pub fn default_compiler() -> PathBuf {
    std::env::var_os(CC_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cc"))
}

/// Names the solver invents, never present in the source.
pub fn is_solver_internal(name: &str) -> bool {
    name.starts_with("__") || ["$", "#", "!", "::", "@"].iter().any(|m| name.contains(m))
}

fn root_of(path: &str) -> &str {
    let end = path.find(['.', '[']).unwrap_or(path.len());
    &path[..end]
}

#[derive(Debug, Clone)]
struct Global {
    name: String,
    scalar: Option<ValueKind>,
}

struct UnitView {
    preprocessor: Vec<String>,
    type_defs: Vec<String>,
    /// Stripped declaration text and the globals it declares.
    globals: Vec<(String, Vec<Global>)>,
    statics: BTreeSet<String>,
}

fn scalar_kind(type_text: &str) -> Option<ValueKind> {
    let t = type_text.split_whitespace().last()?;
    match t {
        "float" | "real32_T" => Some(ValueKind::Float32),
        "double" | "real_T" | "real64_T" | "time_T" => Some(ValueKind::Float64),
        "boolean_T" | "_Bool" | "bool" => Some(ValueKind::Bool),
        "int" | "char" | "short" | "long" | "unsigned" | "signed" | "int_T" | "uint_T" => {
            Some(ValueKind::Int)
        }
        _ if t.starts_with("int") || t.starts_with("uint") => Some(ValueKind::Int),
        _ => None,
    }
}

fn view(text: &str) -> UnitView {
    let mut v = UnitView {
        preprocessor: Vec::new(),
        type_defs: Vec::new(),
        globals: Vec::new(),
        statics: BTreeSet::new(),
    };
    for item in csrc::top_level_items(text) {
        let t = item.text(text);
        match &item.kind {
            ItemKind::Preprocessor => {
                if !t.contains(HEADER_NAME) {
                    v.preprocessor.push(t.trim_end().to_string());
                }
            }
            ItemKind::Declaration => {
                let first = t.split_whitespace().next().unwrap_or("");
                let Some(names) = csrc::declared_names(t) else {
                    if first == "typedef" || (t.contains('{') && !t.contains('(')) {
                        v.type_defs.push(t.to_string());
                    }
                    continue;
                };
                if first == "static" {
                    v.statics.extend(names);
                    continue;
                }
                if first == "extern" {
                    continue;
                }
                let stripped = csrc::strip_initializers(t);
                let spans = csrc::identifier_spans(&stripped);
                let span_of = |name: &str| spans.iter().find(|r| stripped[(*r).clone()] == *name).cloned();
                // base type is the text before the first declarator
                let base = span_of(&names[0]).map(|r| stripped[..r.start].to_string()).unwrap_or_default();
                let base_kind = if base.contains('{') { None } else { scalar_kind(base.trim_end_matches('*')) };
                let globals = names
                    .into_iter()
                    .map(|name| {
                        let scalar = span_of(&name).and_then(|r| {
                            let plain = !stripped[r.end..].trim_start().starts_with('[')
                                && !stripped[..r.start].trim_end().ends_with('*');
                            if plain { base_kind } else { None }
                        });
                        Global { name, scalar }
                    })
                    .collect();
                v.globals.push((stripped, globals));
            }
            ItemKind::Function(_) => {}
        }
    }
    v
}

fn zero_literal(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Float32 => "0.0f",
        ValueKind::Float64 => "0.0",
        _ => "0",
    }
}

fn assign(out: &mut String, target: &str, v: &TypedValue) {
    match (v.kind, v.bits()) {
        (ValueKind::Float32, Some(b)) => {
            let _ = writeln!(
                out,
                "  {{ uint32_t sv_bits = {b:#010x}u; memcpy(&{target}, &sv_bits, sizeof sv_bits); }}"
            );
        }
        (ValueKind::Float64, Some(b)) => {
            let _ = writeln!(
                out,
                "  {{ uint64_t sv_bits = {b:#018x}ull; memcpy(&{target}, &sv_bits, sizeof sv_bits); }}"
            );
        }
        (ValueKind::Float32, None) => {
            let _ = writeln!(out, "  {target} = {:e}f;", v.value as f32);
        }
        (ValueKind::Float64, None) => {
            let _ = writeln!(out, "  {target} = {:e};", v.value);
        }
        (ValueKind::Int | ValueKind::Bool, _) => {
            let _ = writeln!(out, "  {target} = {};", v.value as i64);
        }
    }
}

fn print_stmt(out: &mut String, step: usize, name: &str, kind: ValueKind) {
    let (fmt, cast) = match kind {
        ValueKind::Float32 => ("%.9g", "(double)"),
        ValueKind::Float64 => ("%.17g", "(double)"),
        _ => ("%lld", "(long long)"),
    };
    let _ = writeln!(
        out,
        "  printf(\"step {step} {name}={fmt}\\n\", {cast}({name}));"
    );
}

/// Builds a `main` that replays `cex` against the step function of `unit`.
///
/// Solver-internal names, `sv_` aux state and static variables of the unit
/// are not driven; any other identifier must be a non-static file-scope
/// variable. Inputs a step does not mention are set to zero.
pub fn generate_harness(
    requirement_id: &str,
    cex: &Counterexample,
    unit: &InstrumentedUnit,
) -> Result<WitnessHarness, WitnessError> {
    let text = &unit.instrumented_text;
    let step = injector::resolve_anchor(text, &unit.plan.anchor.step_function_name)?;
    if !step.takes_no_args() {
        return Err(WitnessError::Unsupported(format!("`{}` takes arguments", step.name)));
    }
    if step.is_static() {
        return Err(WitnessError::Unsupported(format!("`{}` is static", step.name)));
    }
    let v = view(text);
    let globals: BTreeMap<&str, &Global> = v
        .globals
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|g| (g.name.as_str(), g))
        .collect();

    // identifier path -> kind, in first-seen order
    let mut driven: Vec<(String, ValueKind)> = Vec::new();
    for s in &cex.steps {
        for (name, val) in &s.assignments {
            if is_solver_internal(name) || name.starts_with("sv_") {
                continue;
            }
            let root = root_of(name);
            if v.statics.contains(root) {
                continue;
            }
            if !globals.contains_key(root) {
                return Err(WitnessError::InputUnmappable(name.clone()));
            }
            if !driven.iter().any(|(n, _)| n == name) {
                driven.push((name.clone(), val.kind));
            }
        }
    }
    if driven.is_empty() {
        let first = cex
            .steps
            .iter()
            .flat_map(|s| s.assignments.keys())
            .next()
            .cloned()
            .unwrap_or_else(|| "<empty trace>".into());
        return Err(WitnessError::InputUnmappable(first));
    }
    let driven_roots: BTreeSet<&str> = driven.iter().map(|(n, _)| root_of(n)).collect();

    let prefix = step.name.strip_suffix("_step").unwrap_or(&step.name);
    let init_name = format!("{prefix}_initialize");
    let has_init = csrc::top_level_items(text).iter().any(|i| {
        i.function()
            .is_some_and(|f| f.name == init_name && f.takes_no_args() && !f.is_static())
    });

    let mut h = format!("/* witness for {requirement_id} */\n");
    for p in &v.preprocessor {
        h.push_str(p);
        h.push('\n');
    }
    h.push_str("#include <stdio.h>\n#include <stdint.h>\n#include <string.h>\n\n");
    for t in &v.type_defs {
        h.push_str(t);
        h.push('\n');
    }
    let mut monitored: Vec<(String, ValueKind)> = Vec::new();
    for (decl, gs) in &v.globals {
        if gs.iter().any(|g| driven_roots.contains(g.name.as_str()) || g.scalar.is_some()) {
            let _ = writeln!(h, "extern {}", decl.trim());
        }
        for g in gs {
            if let Some(k) = g.scalar {
                monitored.push((g.name.clone(), k));
            }
        }
    }
    for (name, kind) in &driven {
        if !monitored.iter().any(|(m, _)| m == name) {
            monitored.push((name.clone(), *kind));
        }
    }
    let ret = step.return_type.trim();
    let _ = writeln!(h, "{ret} {}(void);", step.name);
    if has_init {
        let _ = writeln!(h, "void {init_name}(void);");
    }
    h.push_str("\nint main(void)\n{\n  setvbuf(stdout, NULL, _IONBF, 0);\n");
    if has_init {
        let _ = writeln!(h, "  {init_name}();");
    }
    for (k, s) in cex.steps.iter().enumerate() {
        let _ = writeln!(h, "  /* step {k} */");
        for (name, kind) in &driven {
            match s.assignments.get(name) {
                Some(val) => assign(&mut h, name, val),
                None => {
                    let _ = writeln!(h, "  {name} = {};", zero_literal(*kind));
                }
            }
        }
        let _ = writeln!(h, "  {}();", step.name);
        for (name, kind) in &monitored {
            print_stmt(&mut h, k, name, *kind);
        }
    }
    h.push_str("  return 0;\n}\n");
    debug!(requirement_id, steps = cex.steps.len(), "generated harness");
    Ok(WitnessHarness {
        requirement_id: requirement_id.to_string(),
        harness_text: h,
        expected_failure: cex.failed_assertion.clone(),
        steps: cex.steps.len(),
        driven_inputs: driven.into_iter().map(|(n, _)| n).collect(),
    })
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// True when `output` carries the failure sentinel for `expected` (any
/// condition of this requirement when `expected` is empty).
pub fn sentinel_matches(output: &str, requirement_id: &str, expected: &str) -> bool {
    let prefix = format!("{SENTINEL}{requirement_id}:");
    output.lines().any(|l| {
        l.trim()
            .strip_prefix(&prefix)
            .is_some_and(|cond| expected.trim().is_empty() || squash(cond) == squash(expected))
    })
}

/// Compiles the harness with the unit in a private directory and runs it.
/// The directory of `unit.original_path` is on the include path.
pub fn execute_witness(
    h: &WitnessHarness,
    unit: &InstrumentedUnit,
    compiler: &Path,
) -> Result<WitnessResult, WitnessError> {
    let dir = tempfile::tempdir()?;
    std::fs::write(dir.path().join("harness.c"), &h.harness_text)?;
    std::fs::write(dir.path().join("unit.c"), &unit.instrumented_text)?;
    std::fs::write(
        dir.path().join(HEADER_NAME),
        injector::witness_header(&h.requirement_id, false),
    )?;
    let bin = dir.path().join("witness");
    let mut cc = Command::new(compiler);
    cc.current_dir(dir.path()).arg("-O0");
    if let Some(parent) = unit.original_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        cc.arg(format!("-I{}", std::path::absolute(parent)?.display()));
    }
    cc.args(["-o", "witness", "harness.c", "unit.c", "-lm"]);
    let build = bmc::run_with_timeout(cc, Duration::from_secs(60))?;
    let result = |outcome, observed_output, exit_code| WitnessResult {
        requirement_id: h.requirement_id.clone(),
        outcome,
        observed_output,
        exit_code,
    };
    if build.timed_out || build.exit_code != Some(0) || !bin.exists() {
        return Ok(result(
            WitnessOutcome::BuildFailed,
            build.output,
            build.exit_code.unwrap_or(-1),
        ));
    }
    let mut run = Command::new(&bin);
    run.current_dir(dir.path());
    let r = bmc::run_with_timeout(run, RUN_LIMIT)?;
    let code = r.exit_code.unwrap_or(-1);
    let outcome = if r.timed_out {
        WitnessOutcome::Crashed
    } else if code == 0 {
        WitnessOutcome::Spurious
    } else if sentinel_matches(&r.output, &h.requirement_id, &h.expected_failure) {
        WitnessOutcome::Confirmed
    } else {
        WitnessOutcome::Crashed
    };
    Ok(result(outcome, r.output, code))
}

/// Harness generation plus execution, folding mapping failures into the
/// `InputUnmappable` outcome.
pub fn validate_counterexample(
    requirement_id: &str,
    cex: &Counterexample,
    unit: &InstrumentedUnit,
    compiler: &Path,
) -> Result<(Option<WitnessHarness>, WitnessResult), WitnessError> {
    match generate_harness(requirement_id, cex, unit) {
        Ok(h) => {
            let r = execute_witness(&h, unit, compiler)?;
            Ok((Some(h), r))
        }
        Err(WitnessError::InputUnmappable(name)) => Ok((
            None,
            WitnessResult {
                requirement_id: requirement_id.to_string(),
                outcome: WitnessOutcome::InputUnmappable,
                observed_output: format!("unmappable identifier `{name}`"),
                exit_code: -1,
            },
        )),
        Err(e) => Err(e),
    }
}
