//! End-to-end orchestration: formalize, inject, verify, witness, evaluate.
//!
//! Requirements are processed by a bounded worker pool; within one
//! requirement the stages run in order and a failure stops only that
//! requirement. All artifacts are written in requirement order after the
//! pool finishes, so output bytes do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::bmc::{self, BmcConfig, BmcError, Verdict, VerdictReason};
use crate::evaluation::{self, EvaluationRecord, EvaluationReport, ToolReport};
use crate::formalizer::{self, HoareTriple};
use crate::injector::{self, AnchorSpec, AssertionPlan, InstrumentedUnit};
use crate::llm::{Gateway, HttpProvider, LlmError, ProviderConfig, ScriptedProvider};
use crate::prompts::PromptTemplates;
use crate::requirements::{self, Requirement, RequirementSet};
use crate::witness::{self, WitnessResult};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing external tool for stage {stage}: {detail}")]
    MissingExternalTool { stage: PipelineStage, detail: String },
    #[error(transparent)]
    Requirements(#[from] requirements::RequirementError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
    #[error("writing {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Formalize,
    Inject,
    Verify,
    Witness,
    Evaluate,
}

impl PipelineStage {
    pub const ALL: [Self; 5] = [
        Self::Formalize,
        Self::Inject,
        Self::Verify,
        Self::Witness,
        Self::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Formalize => "formalize",
            Self::Inject => "inject",
            Self::Verify => "verify",
            Self::Witness => "witness",
            Self::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Stages must form a prefix of the pipeline order.
pub fn check_stages(stages: &[PipelineStage]) -> Result<Vec<PipelineStage>, PipelineError> {
    let mut s = stages.to_vec();
    s.sort();
    s.dedup();
    if s.is_empty() {
        return Err(PipelineError::ConfigInvalid("no stages selected".into()));
    }
    if s[..] != PipelineStage::ALL[..s.len()] {
        let names: Vec<&str> = s.iter().map(|st| st.as_str()).collect();
        return Err(PipelineError::ConfigInvalid(format!(
            "stages {} are not a prefix of formalize,inject,verify,witness,evaluate",
            names.join(",")
        )));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    #[default]
    Replay,
    /// Hand-written responses from `script_dir`.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub requirements_path: PathBuf,
    pub provider: ProviderKind,
    pub provider_config: ProviderConfig,
    pub replay_store: PathBuf,
    pub script_dir: Option<PathBuf>,
    /// Record completed exchanges into `replay_store`.
    pub record: bool,
    pub bmc: BmcConfig,
    pub compiler: PathBuf,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub stages: Vec<PipelineStage>,
    pub ground_truth: Option<PathBuf>,
    /// External tool results, `id<TAB>status[<TAB>witness]`.
    pub baselines: Vec<PathBuf>,
    pub overrides: Option<PathBuf>,
    /// Directory of `<id>.spec.md` review documents to compare against.
    pub baseline_specs: Option<PathBuf>,
    pub anchor: AnchorSpec,
    pub templates: PromptTemplates,
    pub token_budget: usize,
    /// Label for this pipeline's column in reports.
    pub tool_name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            requirements_path: PathBuf::from("requirements.txt"),
            provider: ProviderKind::Replay,
            provider_config: ProviderConfig::default(),
            replay_store: PathBuf::from("replay"),
            script_dir: None,
            record: false,
            bmc: BmcConfig::default(),
            compiler: PathBuf::from("cc"),
            workers: 1,
            output_dir: PathBuf::from("out"),
            stages: PipelineStage::ALL.to_vec(),
            ground_truth: None,
            baselines: Vec::new(),
            overrides: None,
            baseline_specs: None,
            anchor: AnchorSpec::default(),
            templates: PromptTemplates::default(),
            token_budget: 6000,
            tool_name: "specverify".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementOutcome {
    pub requirement_id: String,
    pub triple: Option<HoareTriple>,
    pub plan: Option<AssertionPlan>,
    pub verdict: Option<Verdict>,
    pub witness: Option<WitnessResult>,
    pub failed_stage: Option<PipelineStage>,
    pub error: Option<String>,
    #[serde(skip)]
    instrumented: Option<InstrumentedUnit>,
    #[serde(skip)]
    harness: Option<String>,
    #[serde(skip)]
    log: Vec<String>,
}

impl RequirementOutcome {
    fn new(id: &str) -> Self {
        Self {
            requirement_id: id.to_string(),
            triple: None,
            plan: None,
            verdict: None,
            witness: None,
            failed_stage: None,
            error: None,
            instrumented: None,
            harness: None,
            log: Vec::new(),
        }
    }

    fn event(&mut self, stage: PipelineStage, event: &str, detail: Option<&str>) {
        let mut line = format!("req={} stage={stage} event={event}", self.requirement_id);
        if let Some(d) = detail {
            line.push_str(&format!(" detail={}", logfmt_value(d)));
        }
        info!(target: "specverify::pipeline", "{line}");
        self.log.push(line);
    }

    fn fail(&mut self, stage: PipelineStage, err: impl fmt::Display) {
        let msg = err.to_string();
        warn!(requirement_id = %self.requirement_id, %stage, error = %msg, "stage failed");
        self.event(stage, "failed", Some(&msg));
        self.failed_stage = Some(stage);
        self.error = Some(msg);
    }

    /// Short status for summaries.
    pub fn status(&self) -> String {
        if let Some(s) = self.failed_stage {
            return format!("failed:{s}");
        }
        if let Some(w) = &self.witness {
            return format!("{:?}/{:?}", self.verdict.as_ref().map(|v| v.status).unwrap(), w.outcome);
        }
        if let Some(v) = &self.verdict {
            return format!("{:?}", v.status);
        }
        if self.plan.is_some() {
            return "instrumented".into();
        }
        if self.triple.is_some() {
            return "formalized".into();
        }
        "pending".into()
    }
}

fn logfmt_value(s: &str) -> String {
    let one_line = s.replace('\n', " ");
    if one_line.chars().any(|c| c.is_whitespace() || c == '"' || c == '=') {
        format!("\"{}\"", one_line.replace('\\', "\\\\").replace('"', "\\\""))
    } else {
        one_line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub requirement_id: String,
    pub status: String,
    pub failed_stage: Option<PipelineStage>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub requirements: Vec<SummaryEntry>,
    /// Relative to the output directory.
    pub reports: Vec<PathBuf>,
}

/// Checks everything the selected stages need before any side effect.
pub fn preflight(cfg: &RunConfig) -> Result<(Vec<PipelineStage>, RequirementSet), PipelineError> {
    let stages = check_stages(&cfg.stages)?;
    if cfg.workers == 0 {
        return Err(PipelineError::ConfigInvalid("workers must be at least 1".into()));
    }
    if cfg.token_budget == 0 {
        return Err(PipelineError::ConfigInvalid("token budget must be positive".into()));
    }
    let has = |s| stages.contains(&s);
    if has(PipelineStage::Verify) {
        cfg.bmc
            .validate()
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        bmc::resolve_tool(&cfg.bmc.tool_path).map_err(|e| PipelineError::MissingExternalTool {
            stage: PipelineStage::Verify,
            detail: e.to_string(),
        })?;
    }
    if has(PipelineStage::Witness) {
        bmc::resolve_tool(&cfg.compiler).map_err(|e| PipelineError::MissingExternalTool {
            stage: PipelineStage::Witness,
            detail: format!("compiler: {e}"),
        })?;
    }
    match cfg.provider {
        ProviderKind::Replay if !cfg.replay_store.is_dir() => {
            return Err(PipelineError::ConfigInvalid(format!(
                "replay store {} is not a directory",
                cfg.replay_store.display()
            )))
        }
        ProviderKind::Http => {
            cfg.provider_config
                .validate()
                .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            if std::env::var_os(crate::llm::ENV_API_KEY).is_none() {
                return Err(PipelineError::ConfigInvalid(format!(
                    "{} is not set",
                    crate::llm::ENV_API_KEY
                )));
            }
        }
        ProviderKind::Scripted if !cfg.script_dir.as_ref().is_some_and(|d| d.is_dir()) => {
            return Err(PipelineError::ConfigInvalid(
                "the scripted provider needs an existing script directory".into(),
            ))
        }
        _ => {}
    }
    if has(PipelineStage::Evaluate) && cfg.ground_truth.is_none() {
        return Err(PipelineError::ConfigInvalid(
            "the evaluate stage needs a ground truth file".into(),
        ));
    }
    for p in cfg
        .ground_truth
        .iter()
        .chain(&cfg.baselines)
        .chain(cfg.overrides.iter())
    {
        if !p.is_file() {
            return Err(PipelineError::ConfigInvalid(format!("{} does not exist", p.display())));
        }
    }
    let set = requirements::load_requirement_set(&cfg.requirements_path)?;
    set.check_sources()?;
    Ok((stages, set))
}

fn build_gateway(cfg: &RunConfig) -> Result<Gateway, LlmError> {
    let gw = match cfg.provider {
        ProviderKind::Replay => Gateway::replay(&cfg.replay_store),
        ProviderKind::Scripted => {
            let dir = cfg.script_dir.clone().unwrap_or_default();
            Gateway::new(Box::new(ScriptedProvider::new(dir)))
        }
        ProviderKind::Http => {
            let p = HttpProvider::from_env(cfg.provider_config.clone())?;
            Gateway::new(Box::new(p)).with_rate_limit(cfg.provider_config.requests_per_minute)
        }
    };
    Ok(if cfg.record {
        gw.recording_to(&cfg.replay_store)
    } else {
        gw
    })
}

fn process(req: &Requirement, stages: &[PipelineStage], cfg: &RunConfig, gw: &Gateway) -> RequirementOutcome {
    use PipelineStage as S;
    let mut o = RequirementOutcome::new(&req.id);
    let has = |s| stages.contains(&s);

    o.event(S::Formalize, "start", None);
    let source = match req.read_source() {
        Ok(s) => s,
        Err(e) => {
            o.fail(S::Formalize, e);
            return o;
        }
    };
    let context = match requirements::slice_text(&source, cfg.token_budget, &cfg.anchor.step_function_name) {
        Ok(c) => c,
        Err(e) => {
            o.fail(S::Formalize, e);
            return o;
        }
    };
    let triple = match formalizer::formalize(req, &context, gw, &cfg.templates) {
        Ok(t) => t,
        Err(e) => {
            o.fail(S::Formalize, e);
            return o;
        }
    };
    o.triple = Some(triple.clone());
    o.event(S::Formalize, "done", None);
    if !has(S::Inject) {
        return o;
    }

    o.event(S::Inject, "start", None);
    let plan = match injector::synthesize_plan(&triple, &context, gw, &cfg.anchor, &cfg.templates) {
        Ok(p) => p,
        Err(e) => {
            o.fail(S::Inject, e);
            return o;
        }
    };
    // the full unit may declare more than the sliced context showed
    if let Err(e) = injector::validate_plan(&plan, &source) {
        o.fail(S::Inject, e);
        return o;
    }
    o.plan = Some(plan.clone());
    let unit = match injector::inject(&source, &req.source_unit, &plan) {
        Ok(u) => u,
        Err(e) => {
            o.fail(S::Inject, e);
            return o;
        }
    };
    o.instrumented = Some(unit.clone());
    o.event(S::Inject, "done", None);
    if !has(S::Verify) {
        return o;
    }

    o.event(S::Verify, "start", None);
    // the verifier needs the file on disk next to its header
    let dir = cfg.output_dir.join("instrumented");
    let path = dir.join(format!("{}.c", file_stem(&req.id)));
    if let Err(e) = write_file(&path, &unit.instrumented_text) {
        o.fail(S::Verify, e);
        return o;
    }
    let mut bmc_cfg = cfg.bmc.clone();
    if let Some(parent) = req.source_unit.parent().filter(|p| !p.as_os_str().is_empty()) {
        bmc_cfg.extra_flags.push("-I".into());
        bmc_cfg.extra_flags.push(parent.display().to_string());
    }
    let verdict = match bmc::run_verifier(&req.id, &path, &bmc_cfg) {
        Ok(v) => v,
        Err(BmcError::ToolCrashed { exit_code, output }) => {
            warn!(requirement_id = %req.id, ?exit_code, "verifier crashed");
            Verdict::undetermined(&req.id, VerdictReason::ToolError, output)
        }
        Err(e) => {
            o.fail(S::Verify, e);
            return o;
        }
    };
    o.event(
        S::Verify,
        "done",
        Some(&format!("{:?}/{:?}", verdict.status, verdict.reason)),
    );
    o.verdict = Some(verdict.clone());
    if !has(S::Witness) {
        return o;
    }

    if let Some(cex) = &verdict.counterexample {
        o.event(S::Witness, "start", None);
        match witness::validate_counterexample(&req.id, cex, &unit, &cfg.compiler) {
            Ok((h, r)) => {
                o.event(S::Witness, "done", Some(&format!("{:?}", r.outcome)));
                o.harness = h.map(|h| h.harness_text);
                o.witness = Some(r);
            }
            Err(e) => o.fail(S::Witness, e),
        }
    }
    o
}

/// Filesystem-safe name for per-requirement artifacts.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<(), PipelineError> {
    let err = |source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, content).map_err(err)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

/// Runs the pool; results come back in requirement order.
pub fn run_requirements(
    set: &RequirementSet,
    stages: &[PipelineStage],
    cfg: &RunConfig,
    gw: &Gateway,
) -> Vec<RequirementOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RequirementOutcome>>> =
        set.requirements.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.workers.clamp(1, set.requirements.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = set.requirements.get(i) else { break };
                let outcome = process(req, stages, cfg, gw);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every requirement processed"))
        .collect()
}

/// Full run: preflight, per-requirement stages, artifacts, reports.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let (stages, set) = preflight(cfg)?;
    let gw = build_gateway(cfg).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    info!(requirements = set.len(), workers = cfg.workers, "starting run");
    if stages.contains(&PipelineStage::Verify) {
        let header = cfg.output_dir.join("instrumented").join(injector::HEADER_NAME);
        write_file(&header, injector::SV_ASSERT_HEADER)?;
    }
    let outcomes = run_requirements(&set, &stages, cfg, &gw);
    write_artifacts(cfg, &set, &outcomes)?;

    let mut reports = Vec::new();
    if stages.contains(&PipelineStage::Evaluate) {
        reports = evaluate(cfg, &outcomes)?
            .into_iter()
            .map(|p| p.strip_prefix(&cfg.output_dir).map(Path::to_path_buf).unwrap_or(p))
            .collect();
    }
    let summary = RunSummary {
        requirements: outcomes
            .iter()
            .map(|o| SummaryEntry {
                requirement_id: o.requirement_id.clone(),
                status: o.status(),
                failed_stage: o.failed_stage,
                error: o.error.clone(),
            })
            .collect(),
        reports,
    };
    write_file(&cfg.output_dir.join("summary.json"), &to_json(&summary))?;
    Ok(summary)
}

fn write_artifacts(
    cfg: &RunConfig,
    set: &RequirementSet,
    outcomes: &[RequirementOutcome],
) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let mut log = String::new();
    for o in outcomes {
        let stem = file_stem(&o.requirement_id);
        for l in &o.log {
            log.push_str(l);
            log.push('\n');
        }
        if let (Some(t), Some(req)) = (&o.triple, set.get(&o.requirement_id)) {
            write_file(
                &out.join("specs").join(format!("{stem}.spec.md")),
                &formalizer::render_for_review(t, &req.text),
            )?;
        }
        if let Some(u) = &o.instrumented {
            let dir = out.join("instrumented");
            write_file(&dir.join(format!("{stem}.c")), &u.instrumented_text)?;
            if !dir.join(injector::HEADER_NAME).exists() {
                write_file(&dir.join(injector::HEADER_NAME), injector::SV_ASSERT_HEADER)?;
            }
            write_file(&dir.join(format!("{stem}.plan.json")), &to_json(&u.plan))?;
        }
        if let Some(v) = &o.verdict {
            write_file(&out.join("traces").join(format!("{stem}.txt")), &v.raw_output)?;
            write_file(&out.join("traces").join(format!("{stem}.verdict.json")), &to_json(v))?;
        }
        if let Some(w) = &o.witness {
            let dir = out.join("witness").join(&stem);
            if let Some(h) = &o.harness {
                write_file(&dir.join("harness.c"), h)?;
            }
            write_file(&dir.join("run.log"), &w.observed_output)?;
            write_file(&dir.join("result.json"), &to_json(w))?;
        }
    }
    write_file(&out.join("run.log"), &log)
}

fn evaluate(cfg: &RunConfig, outcomes: &[RequirementOutcome]) -> Result<Vec<PathBuf>, PipelineError> {
    let truth_path = cfg.ground_truth.as_ref().expect("checked in preflight");
    let truth = evaluation::load_ground_truth(truth_path)?;
    let by_id: BTreeMap<&str, &evaluation::GroundTruth> =
        truth.iter().map(|g| (g.requirement_id.as_str(), g)).collect();
    let mut records: Vec<EvaluationRecord> = Vec::new();
    for o in outcomes {
        let t = (*by_id
            .get(o.requirement_id.as_str())
            .ok_or_else(|| evaluation::EvalError::MissingTruth(o.requirement_id.clone()))?)
        .clone();
        records.push(match &o.verdict {
            Some(v) => evaluation::classify(v.clone(), t, o.witness.clone())?,
            None => evaluation::not_formed(
                t,
                o.error.clone().unwrap_or_else(|| "no verdict".into()),
            ),
        });
    }

    let mut tools = vec![ToolReport {
        tool: cfg.tool_name.clone(),
        metrics: evaluation::tabulate(&records)?,
    }];
    let ours_ids: Vec<&str> = records.iter().map(|r| r.requirement_id.as_str()).collect();
    let mut baseline_records = Vec::new();
    for b in &cfg.baselines {
        let text = fs::read_to_string(b).map_err(evaluation::EvalError::from)?;
        let rows: Vec<_> = evaluation::parse_tool_results(&text)?
            .into_iter()
            .filter(|r| ours_ids.contains(&r.requirement_id.as_str()))
            .collect();
        let recs = evaluation::records_from_tool(&rows, &truth)?;
        tools.push(ToolReport {
            tool: tool_name(b),
            metrics: evaluation::tabulate(&recs)?,
        });
        baseline_records.push(recs);
    }
    let venn = if baseline_records.is_empty() {
        None
    } else {
        let refs: Vec<&[EvaluationRecord]> = baseline_records.iter().map(|v| v.as_slice()).collect();
        Some(evaluation::diff_tools(&records, &refs)?)
    };

    let overrides = match &cfg.overrides {
        Some(p) => evaluation::parse_overrides(&fs::read_to_string(p).map_err(evaluation::EvalError::from)?)?,
        None => Vec::new(),
    };
    let equivalence = equivalence_records(cfg, outcomes, &overrides)?
        .map(|recs| evaluation::tally_equivalence(&recs));

    let report = EvaluationReport {
        tools,
        ground_truth: Some(evaluation::summarize_truth(
            &truth
                .iter()
                .filter(|g| ours_ids.contains(&g.requirement_id.as_str()))
                .cloned()
                .collect::<Vec<_>>(),
        )),
        venn,
        equivalence,
        classifications: records
            .iter()
            .map(|r| (r.requirement_id.clone(), r.classification))
            .collect(),
    };
    let dir = cfg.output_dir.join("report");
    let paths = vec![dir.join("report.json"), dir.join("report.md"), dir.join("records.json")];
    write_file(&paths[0], &to_json(&report))?;
    write_file(&paths[1], &evaluation::render_markdown(&report))?;
    write_file(&paths[2], &to_json(&records))?;
    Ok(paths)
}

/// Equivalence records from baseline specs and/or reviewer overrides.
fn equivalence_records(
    cfg: &RunConfig,
    outcomes: &[RequirementOutcome],
    overrides: &[evaluation::ReviewOverride],
) -> Result<Option<Vec<evaluation::EquivalenceRecord>>, PipelineError> {
    let review: BTreeMap<&str, &evaluation::ReviewOverride> =
        overrides.iter().map(|r| (r.requirement_id.as_str(), r)).collect();
    let Some(dir) = &cfg.baseline_specs else {
        if overrides.is_empty() {
            return Ok(None);
        }
        return Ok(Some(evaluation::records_from_overrides(overrides)));
    };
    let mut out = Vec::new();
    for o in outcomes {
        let Some(ours) = &o.triple else { continue };
        let path = dir.join(format!("{}.spec.md", file_stem(&o.requirement_id)));
        let Ok(text) = fs::read_to_string(&path) else { continue };
        let base = formalizer::parse_review(&text)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        out.push(evaluation::categorize_equivalence(
            ours,
            &base,
            review.get(o.requirement_id.as_str()).copied(),
        )?);
    }
    Ok(Some(out))
}

/// Re-tabulates saved records (the `report` subcommand).
pub fn report_from_records(records_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let text = fs::read_to_string(records_path).map_err(evaluation::EvalError::from)?;
    let records: Vec<EvaluationRecord> = serde_json::from_str(&text)
        .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", records_path.display())))?;
    let report = EvaluationReport {
        tools: vec![ToolReport {
            tool: "records".into(),
            metrics: evaluation::tabulate(&records)?,
        }],
        ground_truth: Some(evaluation::summarize_truth(
            &records.iter().map(|r| r.truth.clone()).collect::<Vec<_>>(),
        )),
        venn: None,
        equivalence: None,
        classifications: records
            .iter()
            .map(|r| (r.requirement_id.clone(), r.classification))
            .collect(),
    };
    write_report(&report, out_dir)
}


fn tool_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tool".into())
}

/// Inputs for a report built only from listed tool results.
#[derive(Debug, Clone, Default)]
pub struct TabulateInput {
    pub ground_truth: PathBuf,
    /// Results of the tool under evaluation; its file stem names the column.
    pub ours: PathBuf,
    pub baselines: Vec<PathBuf>,
    /// Baseline names (file stems) compared against in the detection diff.
    /// Empty means every baseline.
    pub venn_against: Vec<String>,
    pub overrides: Option<PathBuf>,
}

/// Report over external tool result files, without running anything.
pub fn tabulate_tool_results(input: &TabulateInput) -> Result<EvaluationReport, PipelineError> {
    let truth = evaluation::load_ground_truth(&input.ground_truth)?;
    let ours = evaluation::load_tool_records(&input.ours, &truth)?;
    let mut tools = vec![ToolReport {
        tool: tool_name(&input.ours),
        metrics: evaluation::tabulate(&ours)?,
    }];
    let mut compared = Vec::new();
    for b in &input.baselines {
        let recs = evaluation::load_tool_records(b, &truth)?;
        let name = tool_name(b);
        tools.push(ToolReport {
            tool: name.clone(),
            metrics: evaluation::tabulate(&recs)?,
        });
        if input.venn_against.is_empty() || input.venn_against.contains(&name) {
            compared.push(recs);
        }
    }
    for name in &input.venn_against {
        if !input.baselines.iter().any(|b| &tool_name(b) == name) {
            return Err(PipelineError::ConfigInvalid(format!("no baseline named `{name}`")));
        }
    }
    let venn = if compared.is_empty() {
        None
    } else {
        let refs: Vec<&[EvaluationRecord]> = compared.iter().map(|v| v.as_slice()).collect();
        Some(evaluation::diff_tools(&ours, &refs)?)
    };
    let equivalence = match &input.overrides {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(evaluation::EvalError::from)?;
            let recs = evaluation::records_from_overrides(&evaluation::parse_overrides(&text)?);
            Some(evaluation::tally_equivalence(&recs))
        }
        None => None,
    };
    Ok(EvaluationReport {
        tools,
        ground_truth: Some(evaluation::summarize_truth(&truth)),
        venn,
        equivalence,
        classifications: ours
            .iter()
            .map(|r| (r.requirement_id.clone(), r.classification))
            .collect(),
    })
}

/// Writes `report.json` and `report.md` for [`tabulate_tool_results`].
pub fn write_report(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let paths = vec![out_dir.join("report.json"), out_dir.join("report.md")];
    write_file(&paths[0], &to_json(report))?;
    write_file(&paths[1], &evaluation::render_markdown(report))?;
    Ok(paths)
}
