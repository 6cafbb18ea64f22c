//! Assertion plans and their injection into C translation units.
//!
//! Injection works on whole lines: every added line carries the
//! [`MARKER`] comment and the original lines are copied byte for byte, so
//! the original unit can always be recovered.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csrc::{self, ItemKind};
use crate::formalizer::HoareTriple;
use crate::llm::{Gateway, LlmError, PromptExchange, Stage};
use crate::prompts::{self, PromptTemplates};
use crate::requirements::DEFAULT_STEP_PATTERN;

pub const MARKER: &str = "/* sv:injected */";
pub const ASSERT_MACRO: &str = "SV_ASSERT";
pub const HEADER_NAME: &str = "sv_assert.h";

/// Math library names assertions may call without the unit declaring them.
pub const LIBM_ALLOWLIST: &[&str] = &[
    "fabs", "fabsf", "fmin", "fminf", "fmax", "fmaxf", "sqrt", "sqrtf", "sin", "sinf", "cos",
    "cosf", "tan", "tanf", "floor", "floorf", "ceil", "ceilf", "round", "roundf", "trunc",
    "truncf", "fmod", "fmodf", "isnan", "isinf", "isfinite", "INFINITY", "NAN", "FLT_EPSILON",
    "DBL_EPSILON", "FLT_MAX", "DBL_MAX",
];

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("unknown identifier `{name}` in `{statement}`")]
    IdentifierUnknown { name: String, statement: String },
    #[error("more than one assertion in `{0}`")]
    MultipleAssertionsPerStatement(String),
    #[error("aux declaration `{0}` must declare only `sv_` prefixed variables")]
    InvalidAuxDeclaration(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InjectError {
    #[error("no function matches `{pattern}`")]
    AnchorNotFound { pattern: String },
    #[error("`{pattern}` matches several functions: {}", candidates.join(", "))]
    AnchorAmbiguous {
        pattern: String,
        candidates: Vec<String>,
    },
    #[error("line {line}: {reason}")]
    UnsupportedLayout { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionMode {
    EntryOfStep,
    #[default]
    ExitOfStep,
    BothEntryExit,
}

impl InsertionMode {
    fn at_entry(self) -> bool {
        matches!(self, Self::EntryOfStep | Self::BothEntryExit)
    }

    fn at_exit(self) -> bool {
        matches!(self, Self::ExitOfStep | Self::BothEntryExit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorSpec {
    /// Name pattern, `*` allowed at either end.
    pub step_function_name: String,
    pub insertion_mode: InsertionMode,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            step_function_name: DEFAULT_STEP_PATTERN.into(),
            insertion_mode: InsertionMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssertionPlan {
    pub requirement_id: String,
    pub aux_declarations: Vec<String>,
    pub pre_step_statements: Vec<String>,
    pub post_step_assertions: Vec<String>,
    /// Run after the assertions at every exit, e.g. `sv_prev_x = x;`.
    pub post_step_updates: Vec<String>,
    pub anchor: AnchorSpec,
}

impl AssertionPlan {
    pub fn is_empty(&self) -> bool {
        self.aux_declarations.is_empty()
            && self.pre_step_statements.is_empty()
            && self.post_step_assertions.is_empty()
            && self.post_step_updates.is_empty()
    }

    /// Names introduced by the aux declarations.
    pub fn aux_names(&self) -> Vec<String> {
        self.aux_declarations
            .iter()
            .filter_map(|d| csrc::declared_names(d))
            .flatten()
            .collect()
    }

    /// The plan in the response grammar read by [`parse_plan`].
    pub fn to_grammar(&self) -> String {
        let mut out = String::new();
        for (tag, lines) in [
            ("AUX:", &self.aux_declarations),
            ("ENTRY:", &self.pre_step_statements),
            ("ASSERT:", &self.post_step_assertions),
            ("UPDATE:", &self.post_step_updates),
        ] {
            out.push_str(tag);
            out.push('\n');
            for l in lines {
                out.push_str(l);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentedUnit {
    pub original_path: PathBuf,
    pub instrumented_text: String,
    pub plan: AssertionPlan,
    /// 1-based `(original_line, instrumented_line)` for every original line.
    pub line_map: Vec<(usize, usize)>,
}

pub fn build_exchange(
    triple: &HoareTriple,
    code_context: &str,
    anchor: &AnchorSpec,
    templates: &PromptTemplates,
) -> PromptExchange {
    let step = resolve_anchor(code_context, &anchor.step_function_name)
        .map(|f| f.name)
        .unwrap_or_else(|_| anchor.step_function_name.clone());
    let spec = triple.to_grammar();
    let user = prompts::fill(
        &templates.assertions_user,
        &[
            ("requirement_id", &triple.requirement_id),
            ("specification", &spec),
            ("step_function", &step),
            ("code", code_context),
        ],
    );
    PromptExchange::new(
        Stage::SynthesizeAssertions,
        templates.assertions_system.clone(),
        user,
    )
}

pub fn synthesize_plan(
    triple: &HoareTriple,
    code_context: &str,
    gateway: &Gateway,
    anchor: &AnchorSpec,
    templates: &PromptTemplates,
) -> Result<AssertionPlan, PlanError> {
    let exchange = gateway.complete(build_exchange(triple, code_context, anchor, templates))?;
    let mut plan = parse_plan(&triple.requirement_id, &exchange.response_text)?;
    plan.anchor = anchor.clone();
    validate_plan(&plan, code_context)?;
    Ok(plan)
}

/// Parses the `AUX:/ENTRY:/ASSERT:/UPDATE:` grammar. Code fences and blank
/// lines are ignored; text before the first header is ignored.
pub fn parse_plan(requirement_id: &str, text: &str) -> Result<AssertionPlan, PlanError> {
    let bad = |m: String| PlanError::UnparseableResponse(m);
    let tags = ["AUX:", "ENTRY:", "ASSERT:", "UPDATE:"];
    let mut sections: [Option<Vec<String>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            continue;
        }
        if let Some((idx, rest)) = tags
            .iter()
            .enumerate()
            .find_map(|(i, tag)| t.strip_prefix(tag).map(|r| (i, r.trim())))
        {
            if sections[idx].is_some() {
                return Err(bad(format!("duplicate {} section", tags[idx])));
            }
            sections[idx] = Some(Vec::new());
            current = Some(idx);
            if !rest.is_empty() {
                sections[idx].as_mut().unwrap().push(rest.to_string());
            }
            continue;
        }
        if let (Some(idx), false) = (current, t.is_empty()) {
            sections[idx].as_mut().unwrap().push(t.to_string());
        }
    }
    let [aux, entry, asserts, update] = sections;
    let post_step_assertions = asserts.ok_or_else(|| bad("missing ASSERT: section".into()))?;
    if post_step_assertions.is_empty() {
        return Err(bad("ASSERT: section is empty".into()));
    }
    Ok(AssertionPlan {
        requirement_id: requirement_id.to_string(),
        aux_declarations: aux.unwrap_or_default(),
        pre_step_statements: entry.unwrap_or_default(),
        post_step_assertions,
        post_step_updates: update.unwrap_or_default(),
        anchor: AnchorSpec::default(),
    })
}

/// Checks the plan invariants and that every identifier it uses is known.
pub fn validate_plan(plan: &AssertionPlan, code_context: &str) -> Result<(), PlanError> {
    let mut known: BTreeSet<String> = csrc::identifiers(code_context);
    for decl in &plan.aux_declarations {
        let names = csrc::declared_names(decl)
            .filter(|n| !n.is_empty() && n.iter().all(|n| n.starts_with("sv_")))
            .ok_or_else(|| PlanError::InvalidAuxDeclaration(decl.clone()))?;
        known.extend(names);
    }
    known.insert(ASSERT_MACRO.to_string());
    known.extend(LIBM_ALLOWLIST.iter().map(|s| s.to_string()));

    for stmt in &plan.post_step_assertions {
        let calls = csrc::identifier_spans(stmt)
            .into_iter()
            .filter(|r| &stmt[r.clone()] == ASSERT_MACRO)
            .count();
        match calls {
            0 => {
                return Err(PlanError::UnparseableResponse(format!(
                    "`{stmt}` is not an {ASSERT_MACRO} statement"
                )))
            }
            1 => {}
            _ => return Err(PlanError::MultipleAssertionsPerStatement(stmt.clone())),
        }
    }
    let all = plan
        .aux_declarations
        .iter()
        .chain(&plan.pre_step_statements)
        .chain(&plan.post_step_assertions)
        .chain(&plan.post_step_updates);
    for stmt in all {
        for id in csrc::identifiers(stmt) {
            if !csrc::is_keyword(&id) && !known.contains(&id) {
                return Err(PlanError::IdentifierUnknown {
                    name: id,
                    statement: stmt.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Finds the single function definition whose name matches `pattern`.
pub fn resolve_anchor(unit_text: &str, pattern: &str) -> Result<csrc::FunctionDef, InjectError> {
    let mut found: Vec<csrc::FunctionDef> = csrc::top_level_items(unit_text)
        .into_iter()
        .filter_map(|i| match i.kind {
            ItemKind::Function(f) if csrc::name_matches(pattern, &f.name) => Some(f),
            _ => None,
        })
        .collect();
    match found.len() {
        0 => Err(InjectError::AnchorNotFound {
            pattern: pattern.to_string(),
        }),
        1 => Ok(found.remove(0)),
        _ => Err(InjectError::AnchorAmbiguous {
            pattern: pattern.to_string(),
            candidates: found.into_iter().map(|f| f.name).collect(),
        }),
    }
}

fn indentation(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

fn marked(indent: &str, stmt: &str) -> Vec<String> {
    stmt.lines()
        .map(|l| format!("{indent}{} {MARKER}\n", l.trim()))
        .collect()
}

pub fn inject(
    unit_text: &str,
    original_path: impl Into<PathBuf>,
    plan: &AssertionPlan,
) -> Result<InstrumentedUnit, InjectError> {
    let step = resolve_anchor(unit_text, &plan.anchor.step_function_name)?;
    let starts = csrc::line_starts(unit_text);
    let lines: Vec<&str> = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| &unit_text[s..starts.get(i + 1).copied().unwrap_or(unit_text.len())])
        .collect();
    let layout = |line: usize, reason: &str| InjectError::UnsupportedLayout {
        line: line + 1,
        reason: reason.to_string(),
    };

    // inserts[i] goes before original line i; inserts[n] at the very end
    let mut inserts: BTreeMap<usize, Vec<String>> = BTreeMap::new();

    let last_include = csrc::top_level_items(unit_text)
        .into_iter()
        .filter(|i| {
            i.kind == ItemKind::Preprocessor
                && i.text(unit_text)[1..].trim_start().starts_with("include")
        })
        .map(|i| csrc::line_of(&starts, i.span.end.saturating_sub(1)))
        .last();
    let top = last_include.map_or(0, |l| l + 1);
    let mut head = marked("", &format!("#include \"{HEADER_NAME}\""));
    for d in &plan.aux_declarations {
        head.extend(marked("", d));
    }
    if top == lines.len() && !unit_text.ends_with('\n') && !unit_text.is_empty() {
        return Err(layout(top - 1, "last include has no trailing newline"));
    }
    inserts.entry(top).or_default().extend(head);

    let open_line = csrc::line_of(&starts, step.open_brace);
    if !lines[open_line][step.open_brace - starts[open_line] + 1..].trim().is_empty() {
        return Err(layout(open_line, "step function `{` must end its line"));
    }
    let close_line = csrc::line_of(&starts, step.close_brace);
    let body_indent = lines[open_line + 1..close_line]
        .iter()
        .find(|l| !l.trim().is_empty())
        .map(|l| indentation(l).to_string())
        .unwrap_or_else(|| format!("{}  ", indentation(lines[open_line])));

    let mut entry = Vec::new();
    for s in &plan.pre_step_statements {
        entry.extend(marked(&body_indent, s));
    }
    if plan.anchor.insertion_mode.at_entry() {
        for a in &plan.post_step_assertions {
            entry.extend(marked(&body_indent, a));
        }
    }
    inserts.entry(open_line + 1).or_default().extend(entry);

    let exit_block = |indent: &str| {
        let mut v = Vec::new();
        if plan.anchor.insertion_mode.at_exit() {
            for a in &plan.post_step_assertions {
                v.extend(marked(indent, a));
            }
        }
        for u in &plan.post_step_updates {
            v.extend(marked(indent, u));
        }
        v
    };
    for &r in &step.returns {
        let l = csrc::line_of(&starts, r);
        if !unit_text[starts[l]..r].trim().is_empty() {
            return Err(layout(l, "`return` must be the first token on its line"));
        }
        inserts
            .entry(l)
            .or_default()
            .extend(exit_block(indentation(lines[l])));
    }
    if step.returns_void() {
        if !unit_text[starts[close_line]..step.close_brace].trim().is_empty() {
            return Err(layout(close_line, "step function `}` must start its line"));
        }
        inserts
            .entry(close_line)
            .or_default()
            .extend(exit_block(&body_indent));
    }

    let mut text = String::with_capacity(unit_text.len() + 256);
    let mut line_map = Vec::with_capacity(lines.len());
    let mut out_line = 0;
    for (i, line) in lines.iter().enumerate() {
        for ins in inserts.get(&i).into_iter().flatten() {
            text.push_str(ins);
            out_line += 1;
        }
        text.push_str(line);
        out_line += 1;
        line_map.push((i + 1, out_line));
    }
    for ins in inserts.get(&lines.len()).into_iter().flatten() {
        text.push_str(ins);
    }
    Ok(InstrumentedUnit {
        original_path: original_path.into(),
        instrumented_text: text,
        plan: plan.clone(),
        line_map,
    })
}

/// Recovers the original text through the line map.
pub fn strip(unit: &InstrumentedUnit) -> String {
    let keep: BTreeSet<usize> = unit.line_map.iter().map(|&(_, i)| i).collect();
    unit.instrumented_text
        .split_inclusive('\n')
        .enumerate()
        .filter(|(i, _)| keep.contains(&(i + 1)))
        .map(|(_, l)| l)
        .collect()
}

/// Removes every marked line. Idempotent.
pub fn strip_marked(text: &str) -> String {
    text.split_inclusive('\n')
        .filter(|l| !l.trim_end().ends_with(MARKER))
        .collect()
}

/// The assertion header. `SV_ASSERT` maps to `assert()` by default, to
/// `SV_ASSERT_INTRINSIC(cond)` when that macro is defined, and to a
/// sentinel message plus `abort()` when `SV_WITNESS` is defined.
/// Defining `SV_TRACE_EVAL` in witness builds reports every evaluation.
pub const SV_ASSERT_HEADER: &str = r#"#ifndef SV_ASSERT_H
#define SV_ASSERT_H
#include <math.h>
#include <float.h>
#if defined(SV_WITNESS)
#include <stdio.h>
#include <stdlib.h>
#ifndef SV_REQ_ID
#define SV_REQ_ID "unknown"
#endif
#ifdef SV_TRACE_EVAL
#define SV_EVAL_NOTE(text) fprintf(stderr, "SV_EVAL:%s:%s\n", SV_REQ_ID, text)
#else
#define SV_EVAL_NOTE(text) ((void)0)
#endif
#define SV_ASSERT(cond) do { SV_EVAL_NOTE(#cond); if (!(cond)) { \
    fprintf(stderr, "SV_FAIL:%s:%s\n", SV_REQ_ID, #cond); fflush(stderr); abort(); } } while (0)
#elif defined(SV_ASSERT_INTRINSIC)
#define SV_ASSERT(cond) SV_ASSERT_INTRINSIC(cond)
#else
#include <assert.h>
#define SV_ASSERT(cond) assert(cond)
#endif
#endif
"#;

/// Header for witness builds: the default header preceded by the witness
/// switches for `requirement_id`.
pub fn witness_header(requirement_id: &str, trace_eval: bool) -> String {
    let mut out = String::from("#define SV_WITNESS 1\n");
    out.push_str(&format!(
        "#define SV_REQ_ID \"{}\"\n",
        requirement_id.replace('\\', "\\\\").replace('"', "\\\"")
    ));
    if trace_eval {
        out.push_str("#define SV_TRACE_EVAL 1\n");
    }
    out.push_str(SV_ASSERT_HEADER);
    out
}

/// Extracts the condition of an `SV_ASSERT(cond);` statement.
pub fn assertion_condition(stmt: &str) -> Option<&str> {
    let start = stmt.find(ASSERT_MACRO)? + ASSERT_MACRO.len();
    let rest = stmt[start..].trim_start().strip_prefix('(')?;
    let close = rest.rfind(')')?;
    Some(rest[..close].trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: &str = "#include <math.h>\n#include \"rtwtypes.h\"\n\nfloat x, y;\n\nvoid M_step(void)\n{\n  y = x;\n}\n";

    fn plan(asserts: &[&str]) -> AssertionPlan {
        AssertionPlan {
            requirement_id: "R-1".into(),
            post_step_assertions: asserts.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn exit_assertion_before_closing_brace() {
        let u = inject(UNIT, "u.c", &plan(&["SV_ASSERT(y == x);"])).unwrap();
        let lines: Vec<&str> = u.instrumented_text.lines().collect();
        let close = lines.iter().rposition(|l| *l == "}").unwrap();
        assert_eq!(lines[close - 1], "  SV_ASSERT(y == x); /* sv:injected */");
        assert_eq!(lines[2], "#include \"sv_assert.h\" /* sv:injected */");
        assert_eq!(strip(&u), UNIT);
    }

    #[test]
    fn returns_each_get_exit_block() {
        let unit = "int f_step(void)\n{\n  if (a) {\n    return 1;\n  }\n  return 0;\n}\n";
        let mut p = plan(&["SV_ASSERT(a >= 0);"]);
        p.post_step_updates.push("sv_prev_a = a;".into());
        let u = inject(unit, "f.c", &p).unwrap();
        assert_eq!(u.instrumented_text.matches("SV_ASSERT(a >= 0);").count(), 2);
        assert!(u
            .instrumented_text
            .contains("    SV_ASSERT(a >= 0); /* sv:injected */\n    sv_prev_a = a; /* sv:injected */\n    return 1;"));
        assert_eq!(strip(&u), unit);
        assert_eq!(strip_marked(&u.instrumented_text), unit);
    }

    #[test]
    fn ambiguity_and_absence() {
        let unit = "void a_step(void)\n{\n}\nvoid b_step(void)\n{\n}\n";
        let err = inject(unit, "u.c", &plan(&[])).unwrap_err();
        assert!(matches!(err, InjectError::AnchorAmbiguous { candidates, .. } if candidates == ["a_step", "b_step"]));
        let err = inject("int x;\n", "u.c", &plan(&[])).unwrap_err();
        assert!(matches!(err, InjectError::AnchorNotFound { .. }));
    }

    #[test]
    fn inline_brace_is_unsupported() {
        let unit = "void a_step(void) { x = 1; }\n";
        assert!(matches!(
            inject(unit, "u.c", &plan(&[])),
            Err(InjectError::UnsupportedLayout { line: 1, .. })
        ));
    }

    #[test]
    fn strip_marked_is_idempotent() {
        let u = inject(UNIT, "u.c", &plan(&["SV_ASSERT(1);"])).unwrap();
        let once = strip_marked(&u.instrumented_text);
        assert_eq!(strip_marked(&once), once);
        assert_eq!(once, UNIT);
    }

    #[test]
    fn parse_plan_sections() {
        let p = parse_plan(
            "R",
            "```c\nAUX:\nstatic float sv_prev_x = 0.0F;\nENTRY:\nASSERT: SV_ASSERT(x == sv_prev_x);\nUPDATE:\nsv_prev_x = x;\n```",
        )
        .unwrap();
        assert_eq!(p.aux_declarations, ["static float sv_prev_x = 0.0F;"]);
        assert!(p.pre_step_statements.is_empty());
        assert_eq!(p.post_step_assertions, ["SV_ASSERT(x == sv_prev_x);"]);
        assert_eq!(p.post_step_updates, ["sv_prev_x = x;"]);
        assert_eq!(parse_plan("R", &p.to_grammar()).unwrap(), p);
        assert!(parse_plan("R", "AUX:\n").is_err());
    }

    #[test]
    fn validation_rules() {
        let code = "float x, y; void M_step(void) { y = fabsf(x); }";
        let mut p = plan(&["SV_ASSERT(y >= 0.0F);"]);
        validate_plan(&p, code).unwrap();

        p.post_step_assertions = vec!["SV_ASSERT(ghost_var == 1);".into()];
        assert!(matches!(validate_plan(&p, code), Err(PlanError::IdentifierUnknown { name, .. }) if name == "ghost_var"));

        p.post_step_assertions = vec!["SV_ASSERT(x > 0); SV_ASSERT(y > 0);".into()];
        assert!(matches!(validate_plan(&p, code), Err(PlanError::MultipleAssertionsPerStatement(_))));

        p.post_step_assertions = vec!["y = 1;".into()];
        assert!(matches!(validate_plan(&p, code), Err(PlanError::UnparseableResponse(_))));

        p.post_step_assertions = vec!["SV_ASSERT(prev_x == x);".into()];
        p.aux_declarations = vec!["static float prev_x;".into()];
        assert!(matches!(validate_plan(&p, code), Err(PlanError::InvalidAuxDeclaration(_))));

        p.aux_declarations = vec!["static float sv_prev_x;".into()];
        p.post_step_assertions = vec!["SV_ASSERT(sv_prev_x == x);".into()];
        validate_plan(&p, code).unwrap();
        assert_eq!(p.aux_names(), ["sv_prev_x"]);
    }

    #[test]
    fn assertion_condition_extraction() {
        assert_eq!(assertion_condition("SV_ASSERT(f(a) == (b));"), Some("f(a) == (b)"));
        assert_eq!(assertion_condition("x = 1;"), None);
    }
}
