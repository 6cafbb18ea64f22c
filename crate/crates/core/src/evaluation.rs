//! Scoring: verdicts against ground truth, per-task metrics, tool set
//! differences and specification equivalence tallies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::bmc::{Counterexample, TraceStep, Verdict, VerdictReason, VerdictStatus};
use crate::formalizer::HoareTriple;
use crate::witness::{WitnessOutcome, WitnessResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record ids differ: verdict `{verdict}` vs truth `{truth}`")]
    IdMismatch { verdict: String, truth: String },
    #[error("no records to tabulate")]
    NoRecords,
    #[error("requirement sets differ: {0}")]
    UniverseMismatch(String),
    #[error("triples describe different requirements: `{0}` vs `{1}`")]
    RequirementMismatch(String, String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no ground truth for `{0}`")]
    MissingTruth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Truth {
    Provable,
    Falsifiable,
    Undetermined,
}

impl FromStr for Truth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "provable" | "verified" | "valid" => Ok(Self::Provable),
            "falsifiable" | "invalid" => Ok(Self::Falsifiable),
            "undetermined" | "unknown" => Ok(Self::Undetermined),
            other => Err(format!("unknown truth value `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub requirement_id: String,
    pub truth: Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Classification {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub requirement_id: String,
    pub task: String,
    pub verdict: Verdict,
    pub truth: GroundTruth,
    pub witness: Option<WitnessResult>,
    /// False when no checkable property was produced for the requirement.
    pub property_formed: bool,
    pub classification: Classification,
    pub note: Option<String>,
}

/// Task label of a requirement id: the text before the first `-` or `_`.
pub fn task_of(id: &str) -> String {
    id.split(['-', '_']).next().unwrap_or(id).to_string()
}

/// Classifies a formed property.
///
/// Undetermined verdicts are inconclusive. For falsifiable verdicts a
/// spurious witness means FP and a confirmed witness means TP, even against
/// the recorded truth (the disagreement is kept in `note`); otherwise the
/// truth decides. Verified verdicts are FN on falsifiable truth and TN on
/// provable truth.
pub fn classify(
    verdict: Verdict,
    truth: GroundTruth,
    witness: Option<WitnessResult>,
) -> Result<EvaluationRecord, EvalError> {
    if verdict.requirement_id != truth.requirement_id {
        return Err(EvalError::IdMismatch {
            verdict: verdict.requirement_id,
            truth: truth.requirement_id,
        });
    }
    let mut note = None;
    let outcome = witness.as_ref().map(|w| w.outcome);
    let classification = match verdict.status {
        VerdictStatus::Undetermined => Classification::Inconclusive,
        VerdictStatus::Falsifiable => match (outcome, truth.truth) {
            (Some(WitnessOutcome::Spurious), t) => {
                if t == Truth::Falsifiable {
                    note = Some("spurious witness overrides falsifiable ground truth".into());
                }
                Classification::FalsePositive
            }
            (Some(WitnessOutcome::Confirmed), t) => {
                if t != Truth::Falsifiable {
                    note = Some(format!("confirmed witness overrides {t:?} ground truth"));
                }
                Classification::TruePositive
            }
            (_, Truth::Provable) => Classification::FalsePositive,
            (_, Truth::Falsifiable) => Classification::TruePositive,
            (_, Truth::Undetermined) => Classification::Inconclusive,
        },
        VerdictStatus::Verified => match truth.truth {
            Truth::Falsifiable => Classification::FalseNegative,
            Truth::Provable => Classification::TrueNegative,
            Truth::Undetermined => Classification::Inconclusive,
        },
    };
    if let Some(n) = &note {
        info!(requirement_id = %truth.requirement_id, conflict = %n, "witness overrides ground truth");
    }
    Ok(EvaluationRecord {
        requirement_id: truth.requirement_id.clone(),
        task: task_of(&truth.requirement_id),
        verdict,
        truth,
        witness,
        property_formed: true,
        classification,
        note,
    })
}

/// Record for a requirement whose property could not be formed.
pub fn not_formed(truth: GroundTruth, note: impl Into<String>) -> EvaluationRecord {
    EvaluationRecord {
        requirement_id: truth.requirement_id.clone(),
        task: task_of(&truth.requirement_id),
        verdict: Verdict::undetermined(&truth.requirement_id, VerdictReason::ToolError, String::new()),
        truth,
        witness: None,
        property_formed: false,
        classification: Classification::Inconclusive,
        note: Some(note.into()),
    }
}

/// `num / den` as a percentage rounded half-up to `decimals` places,
/// computed in integers.
pub fn percent(num: u64, den: u64, decimals: u32) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let scale = 10u128.pow(decimals);
    let (n, d) = (num as u128 * 100 * scale, den as u128);
    let rounded = (2 * n + d) / (2 * d);
    rounded as f64 / scale as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    /// Formed properties with a decisive (verified or falsifiable) verdict.
    pub verified: u32,
    pub formed: u32,
    pub total: u32,
    pub false_positives: u32,
    pub false_negatives: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub total: MetricsRow,
    /// Percent, one decimal, half-up.
    pub verification_rate: f64,
    pub fp_count: u32,
    pub fn_count: u32,
}

/// Per-task rows (sorted by task) plus the aggregate.
pub fn tabulate(records: &[EvaluationRecord]) -> Result<MetricsTable, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut rows: BTreeMap<&str, MetricsRow> = BTreeMap::new();
    let blank = |task: &str| MetricsRow {
        task: task.to_string(),
        verified: 0,
        formed: 0,
        total: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    let mut total = blank("total");
    for r in records {
        let row = rows.entry(&r.task).or_insert_with(|| blank(&r.task));
        for row in [row, &mut total] {
            row.total += 1;
            if r.property_formed {
                row.formed += 1;
                if r.verdict.status != VerdictStatus::Undetermined {
                    row.verified += 1;
                }
            }
            match r.classification {
                Classification::FalsePositive => row.false_positives += 1,
                Classification::FalseNegative => row.false_negatives += 1,
                _ => {}
            }
        }
    }
    Ok(MetricsTable {
        rows: rows.into_values().collect(),
        verification_rate: percent(total.verified.into(), total.total.into(), 1),
        fp_count: total.false_positives,
        fn_count: total.false_negatives,
        total,
    })
}

/// Requirements a tool correctly reported as falsifiable.
pub fn detected(records: &[EvaluationRecord]) -> BTreeSet<String> {
    records
        .iter()
        .filter(|r| r.classification == Classification::TruePositive)
        .map(|r| r.requirement_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VennSummary {
    pub only_ours: BTreeSet<String>,
    pub only_baseline: BTreeSet<String>,
    pub both: BTreeSet<String>,
}

fn universe(records: &[EvaluationRecord]) -> BTreeSet<&str> {
    records.iter().map(|r| r.requirement_id.as_str()).collect()
}

/// Partitions detections of `ours` against the union of the baselines'.
pub fn diff_tools(
    ours: &[EvaluationRecord],
    baselines: &[&[EvaluationRecord]],
) -> Result<VennSummary, EvalError> {
    let u = universe(ours);
    let mut base = BTreeSet::new();
    for b in baselines {
        let bu = universe(b);
        if bu != u {
            let diff: Vec<&str> = u.symmetric_difference(&bu).copied().take(5).collect();
            return Err(EvalError::UniverseMismatch(diff.join(", ")));
        }
        base.extend(detected(b));
    }
    let ours = detected(ours);
    Ok(VennSummary {
        only_ours: ours.difference(&base).cloned().collect(),
        only_baseline: base.difference(&ours).cloned().collect(),
        both: ours.intersection(&base).cloned().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EquivalenceCategory {
    LogicEquivalent,
    Misunderstanding,
    LackingAssumption,
    BenchmarkSkipped,
    SequenceReversal,
    OverVerificationOurs,
    OverVerificationBaseline,
}

impl EquivalenceCategory {
    pub const ALL: [Self; 7] = [
        Self::LogicEquivalent,
        Self::Misunderstanding,
        Self::LackingAssumption,
        Self::BenchmarkSkipped,
        Self::SequenceReversal,
        Self::OverVerificationOurs,
        Self::OverVerificationBaseline,
    ];
}

impl fmt::Display for EquivalenceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for EquivalenceCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.to_string().to_ascii_lowercase() == key)
            .ok_or_else(|| format!("unknown equivalence category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceRecord {
    pub requirement_id: String,
    /// What the structural comparison proposes; `None` when it found a
    /// difference it cannot categorize.
    pub proposed: Option<EquivalenceCategory>,
    /// Final category; `None` until a reviewer supplies one.
    pub category: Option<EquivalenceCategory>,
    pub note: String,
}

/// Splits `s` at top-level occurrences of `op`.
fn split_top(s: &str, op: &str) -> Vec<String> {
    let b = s.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            _ => {}
        }
        if depth == 0 && s[i..].starts_with(op) {
            // `==` must not be part of `!==`, `<==` etc.
            let prev = if i > 0 { b[i - 1] } else { b' ' };
            if !(op == "==" && matches!(prev, b'!' | b'<' | b'>' | b'=')) {
                parts.push(s[start..i].to_string());
                i += op.len();
                start = i;
                continue;
            }
        }
        i += 1;
    }
    parts.push(s[start..].to_string());
    parts
}

fn strip_outer_parens(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        if !(s.starts_with('(') && s.ends_with(')')) {
            return s;
        }
        // only strip when the opening paren closes at the very end
        let mut depth = 0;
        for (i, c) in s.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 && i != s.len() - 1 {
                        return s;
                    }
                }
                _ => {}
            }
        }
        s = s[1..s.len() - 1].trim();
    }
}

/// Canonical text of a condition: whitespace removed, operands of top-level
/// `||`, `&&` and `==` sorted. Other operators are left as written.
pub fn canonicalize(expr: &str) -> String {
    let squashed: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    canon(&squashed)
}

fn canon(s: &str) -> String {
    let s = strip_outer_parens(s);
    for op in ["||", "&&", "=="] {
        let parts = split_top(s, op);
        if parts.len() > 1 {
            let mut c: Vec<String> = parts.iter().map(|p| canon(p)).collect();
            c.sort();
            return format!("({})", c.join(op));
        }
    }
    s.to_string()
}

fn structurally_equal(a: &HoareTriple, b: &HoareTriple) -> bool {
    let defs = |t: &HoareTriple| -> BTreeSet<(String, String)> {
        t.definitions
            .iter()
            .map(|d| (canonicalize(&d.name), canonicalize(&d.meaning)))
            .collect()
    };
    canonicalize(&a.precondition) == canonicalize(&b.precondition)
        && canonicalize(&a.postcondition) == canonicalize(&b.postcondition)
        && defs(a) == defs(b)
}

/// Compares two specifications of one requirement. A reviewer override,
/// when given, always decides the final category.
pub fn categorize_equivalence(
    ours: &HoareTriple,
    baseline: &HoareTriple,
    review: Option<&ReviewOverride>,
) -> Result<EquivalenceRecord, EvalError> {
    if ours.requirement_id != baseline.requirement_id {
        return Err(EvalError::RequirementMismatch(
            ours.requirement_id.clone(),
            baseline.requirement_id.clone(),
        ));
    }
    let proposed = structurally_equal(ours, baseline).then_some(EquivalenceCategory::LogicEquivalent);
    let (category, note) = match review {
        Some(r) => (Some(r.category), r.note.clone()),
        None if proposed.is_some() => (proposed, "structurally equal".into()),
        None => (None, "structural difference, needs review".into()),
    };
    Ok(EquivalenceRecord {
        requirement_id: ours.requirement_id.clone(),
        proposed,
        category,
        note,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewOverride {
    pub requirement_id: String,
    pub category: EquivalenceCategory,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceTally {
    /// Every category, including those with zero entries.
    pub counts: BTreeMap<EquivalenceCategory, u32>,
    pub reviewed: u32,
    pub pending: u32,
    /// Share of each category among reviewed records, two decimals.
    pub percentages: BTreeMap<EquivalenceCategory, f64>,
}

pub fn tally_equivalence(records: &[EquivalenceRecord]) -> EquivalenceTally {
    let mut counts: BTreeMap<EquivalenceCategory, u32> =
        EquivalenceCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut pending = 0;
    for r in records {
        match r.category {
            Some(c) => *counts.get_mut(&c).unwrap() += 1,
            None => pending += 1,
        }
    }
    let reviewed: u32 = counts.values().sum();
    let percentages = counts
        .iter()
        .map(|(c, n)| (*c, percent((*n).into(), reviewed.into(), 2)))
        .collect();
    EquivalenceTally {
        counts,
        reviewed,
        pending,
        percentages,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSummary {
    pub provable: u32,
    pub falsifiable: u32,
    pub undetermined: u32,
    pub total: u32,
    pub provable_pct: f64,
    pub falsifiable_pct: f64,
    pub undetermined_pct: f64,
}

pub fn summarize_truth(truth: &[GroundTruth]) -> GroundTruthSummary {
    let count = |t: Truth| truth.iter().filter(|g| g.truth == t).count() as u32;
    let (p, f, u) = (count(Truth::Provable), count(Truth::Falsifiable), count(Truth::Undetermined));
    let total = truth.len() as u32;
    GroundTruthSummary {
        provable: p,
        falsifiable: f,
        undetermined: u,
        total,
        provable_pct: percent(p.into(), total.into(), 1),
        falsifiable_pct: percent(f.into(), total.into(), 1),
        undetermined_pct: percent(u.into(), total.into(), 1),
    }
}

// Line-oriented inputs. `#` starts a comment line; fields are tab separated.

fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim_end_matches('\r');
        if t.trim().is_empty() || t.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, t.split('\t').map(str::trim).collect()))
        }
    })
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>, EvalError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text) {
        let bad = |message: String| EvalError::Parse { line, message };
        if f.len() != 2 {
            return Err(bad(format!("expected `id<TAB>status`, got {} fields", f.len())));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(bad(format!("duplicate id `{}`", f[0])));
        }
        out.push(GroundTruth {
            requirement_id: f[0].to_string(),
            truth: f[1].parse().map_err(bad)?,
        });
    }
    Ok(out)
}

/// Verdict status as listed for an external tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolStatus {
    Verified,
    Falsifiable,
    Undetermined,
    NotFormed,
}

impl FromStr for ToolStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "verified" => Ok(Self::Verified),
            "falsifiable" => Ok(Self::Falsifiable),
            "undetermined" => Ok(Self::Undetermined),
            "notformed" | "not_formed" | "not-formed" => Ok(Self::NotFormed),
            other => Err(format!("unknown tool status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRow {
    pub requirement_id: String,
    pub status: ToolStatus,
    pub witness: Option<WitnessOutcome>,
}

/// `id<TAB>status[<TAB>Confirmed|Spurious]`.
pub fn parse_tool_results(text: &str) -> Result<Vec<ToolRow>, EvalError> {
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text) {
        let bad = |message: String| EvalError::Parse { line, message };
        if !(2..=3).contains(&f.len()) {
            return Err(bad("expected `id<TAB>status[<TAB>witness]`".into()));
        }
        let witness = match f.get(2).map(|w| w.to_ascii_lowercase()) {
            None => None,
            Some(w) if w == "confirmed" => Some(WitnessOutcome::Confirmed),
            Some(w) if w == "spurious" => Some(WitnessOutcome::Spurious),
            Some(w) => return Err(bad(format!("unknown witness outcome `{w}`"))),
        };
        out.push(ToolRow {
            requirement_id: f[0].to_string(),
            status: f[1].parse().map_err(bad)?,
            witness,
        });
    }
    Ok(out)
}

pub fn parse_overrides(text: &str) -> Result<Vec<ReviewOverride>, EvalError> {
    let mut out = Vec::new();
    for (line, f) in tsv_rows(text) {
        let bad = |message: String| EvalError::Parse { line, message };
        if !(2..=3).contains(&f.len()) {
            return Err(bad("expected `id<TAB>category<TAB>note`".into()));
        }
        out.push(ReviewOverride {
            requirement_id: f[0].to_string(),
            category: f[1].parse().map_err(bad)?,
            note: f.get(2).unwrap_or(&"").to_string(),
        });
    }
    Ok(out)
}

/// Builds evaluation records for an external tool's listed results.
pub fn records_from_tool(rows: &[ToolRow], truth: &[GroundTruth]) -> Result<Vec<EvaluationRecord>, EvalError> {
    let by_id: BTreeMap<&str, &GroundTruth> =
        truth.iter().map(|g| (g.requirement_id.as_str(), g)).collect();
    rows.iter()
        .map(|row| {
            let t = (*by_id
                .get(row.requirement_id.as_str())
                .ok_or_else(|| EvalError::MissingTruth(row.requirement_id.clone()))?)
            .clone();
            let id = &row.requirement_id;
            let verdict = match row.status {
                ToolStatus::NotFormed => return Ok(not_formed(t, "no property formed")),
                ToolStatus::Undetermined => {
                    Verdict::undetermined(id, VerdictReason::ToolError, String::new())
                }
                ToolStatus::Verified => Verdict {
                    requirement_id: id.clone(),
                    status: VerdictStatus::Verified,
                    reason: VerdictReason::Proved,
                    counterexample: None,
                    wall_time: Duration::ZERO,
                    raw_output: String::new(),
                },
                ToolStatus::Falsifiable => Verdict {
                    requirement_id: id.clone(),
                    status: VerdictStatus::Falsifiable,
                    reason: VerdictReason::CounterexampleFound,
                    counterexample: Some(Counterexample {
                        failed_assertion: String::new(),
                        steps: vec![TraceStep {
                            step_index: 0,
                            assignments: BTreeMap::new(),
                        }],
                        raw_trace: "external result".into(),
                    }),
                    wall_time: Duration::ZERO,
                    raw_output: String::new(),
                },
            };
            let witness = row.witness.map(|outcome| WitnessResult {
                requirement_id: id.clone(),
                outcome,
                observed_output: String::new(),
                exit_code: if outcome == WitnessOutcome::Confirmed { 134 } else { 0 },
            });
            classify(verdict, t, witness)
        })
        .collect()
}

/// Reads an external tool's results file and classifies every row.
pub fn load_tool_records(path: &Path, truth: &[GroundTruth]) -> Result<Vec<EvaluationRecord>, EvalError> {
    records_from_tool(&parse_tool_results(&std::fs::read_to_string(path)?)?, truth)
}

/// Equivalence records straight from reviewer verdicts.
pub fn records_from_overrides(overrides: &[ReviewOverride]) -> Vec<EquivalenceRecord> {
    overrides
        .iter()
        .map(|o| EquivalenceRecord {
            requirement_id: o.requirement_id.clone(),
            proposed: None,
            category: Some(o.category),
            note: o.note.clone(),
        })
        .collect()
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>, EvalError> {
    parse_ground_truth(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolReport {
    pub tool: String,
    pub metrics: MetricsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tools: Vec<ToolReport>,
    pub ground_truth: Option<GroundTruthSummary>,
    pub venn: Option<VennSummary>,
    pub equivalence: Option<EquivalenceTally>,
    /// Requirement id -> classification for the first tool.
    pub classifications: BTreeMap<String, Classification>,
}

fn fmt_rate(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

pub fn render_markdown(report: &EvaluationReport) -> String {
    let mut md = String::from("# Verification report\n\n");
    if !report.tools.is_empty() {
        md.push_str("## Verified / formed / total\n\n| Task |");
        for t in &report.tools {
            let _ = write!(md, " {} |", t.tool);
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(report.tools.len()));
        md.push('\n');
        let tasks: BTreeSet<&str> = report
            .tools
            .iter()
            .flat_map(|t| t.metrics.rows.iter().map(|r| r.task.as_str()))
            .collect();
        let cell = |r: Option<&MetricsRow>| {
            r.map(|r| format!("{}/{}/{}", r.verified, r.formed, r.total))
                .unwrap_or_else(|| "-".into())
        };
        for task in tasks {
            let _ = write!(md, "| {task} |");
            for t in &report.tools {
                let _ = write!(md, " {} |", cell(t.metrics.rows.iter().find(|r| r.task == task)));
            }
            md.push('\n');
        }
        let mut line = |label: &str, f: &dyn Fn(&MetricsTable) -> String| {
            let _ = write!(md, "| **{label}** |");
            for t in &report.tools {
                let _ = write!(md, " {} |", f(&t.metrics));
            }
            md.push('\n');
        };
        line("Total", &|m| cell(Some(&m.total)));
        line("Verification rate (%)", &|m| fmt_rate(m.verification_rate, 1));
        line("False positives", &|m| m.fp_count.to_string());
        line("False negatives", &|m| m.fn_count.to_string());
        md.push('\n');
    }
    if let Some(g) = &report.ground_truth {
        let _ = writeln!(
            md,
            "## Ground truth\n\n- provable: {} ({}%)\n- falsifiable: {} ({}%)\n- undetermined: {} ({}%)\n- total: {}\n",
            g.provable,
            fmt_rate(g.provable_pct, 1),
            g.falsifiable,
            fmt_rate(g.falsifiable_pct, 1),
            g.undetermined,
            fmt_rate(g.undetermined_pct, 1),
            g.total
        );
    }
    if let Some(v) = &report.venn {
        let list = |s: &BTreeSet<String>| {
            if s.is_empty() {
                "(none)".to_string()
            } else {
                s.iter().cloned().collect::<Vec<_>>().join(", ")
            }
        };
        let _ = writeln!(
            md,
            "## Detected falsifiable requirements\n\n- only ours ({}): {}\n- only baseline ({}): {}\n- both ({}): {}\n",
            v.only_ours.len(),
            list(&v.only_ours),
            v.only_baseline.len(),
            list(&v.only_baseline),
            v.both.len(),
            list(&v.both)
        );
    }
    if let Some(e) = &report.equivalence {
        md.push_str("## Specification equivalence\n\n| Category | Count | % |\n|---|---|---|\n");
        for (c, n) in &e.counts {
            let _ = writeln!(md, "| {c} | {n} | {} |", fmt_rate(e.percentages[c], 2));
        }
        let _ = writeln!(md, "\nreviewed: {}, pending review: {}\n", e.reviewed, e.pending);
    }
    if !report.classifications.is_empty() {
        md.push_str("## Requirements\n\n| Requirement | Classification |\n|---|---|\n");
        for (id, c) in &report.classifications {
            let _ = writeln!(md, "| {id} | {c:?} |");
        }
    }
    md
}
