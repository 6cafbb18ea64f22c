use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;

use specverify_core::bmc::{self, VerdictStatus};
use specverify_core::fp_medsel::{self, Triple32};
use specverify_core::injector::{AssertionPlan, InstrumentedUnit};
use specverify_core::pipeline::{self, PipelineStage, ProviderKind, RunConfig};
use specverify_core::requirements;
use specverify_core::witness;

#[derive(Parser)]
#[command(name = "specverify", version, about = "Requirement formalization and bounded model checking pipeline")]
struct Cli {
    /// Log filter, e.g. `info` or `specverify_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a requirement set.
    Run(RunArgs),
    /// Compare the two mid-value selectors on single precision inputs.
    FpDemo(FpDemoArgs),
    /// Re-run witnesses from saved traces of a previous run.
    Witness(WitnessArgs),
    /// Re-tabulate saved evaluation records.
    Report(ReportArgs),
    /// Score listed tool results against ground truth.
    Tabulate(TabulateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    requirements: Option<PathBuf>,
    /// `http`, `replay` or `scripted`.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    replay_store: Option<PathBuf>,
    /// Response files for the scripted provider.
    #[arg(long)]
    script_dir: Option<PathBuf>,
    /// Store completed LLM exchanges in the replay store.
    #[arg(long)]
    record: bool,
    #[arg(long)]
    bmc_path: Option<PathBuf>,
    #[arg(long)]
    unwind: Option<u32>,
    /// Verifier timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma separated prefix of formalize,inject,verify,witness,evaluate.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// External tool results to compare against; repeatable.
    #[arg(long)]
    baseline: Vec<PathBuf>,
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Directory of reference `<id>.spec.md` documents.
    #[arg(long)]
    baseline_specs: Option<PathBuf>,
    #[arg(long)]
    compiler: Option<PathBuf>,
    #[arg(long)]
    tool_name: Option<String>,
}

#[derive(Args)]
struct FpDemoArgs {
    /// Comma separated a,b,c.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    triple: Option<Vec<f32>>,
    /// Sample this many triples and list the ones where the selectors differ.
    #[arg(long)]
    search: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Print at most this many divergent triples.
    #[arg(long, default_value_t = 20)]
    show: usize,
}

#[derive(Args)]
struct WitnessArgs {
    /// Output directory of a previous run.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    requirements: PathBuf,
    #[arg(long)]
    compiler: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// `records.json` written by a previous run.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "out/report")]
    out: PathBuf,
}

#[derive(Args)]
struct TabulateArgs {
    #[arg(long)]
    ground_truth: PathBuf,
    /// Results of the tool under evaluation (`id<TAB>status[<TAB>witness]`).
    #[arg(long)]
    ours: PathBuf,
    #[arg(long)]
    baseline: Vec<PathBuf>,
    /// Restrict the detection diff to these baselines (file stems).
    #[arg(long, value_delimiter = ',')]
    venn_against: Vec<String>,
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Also write report.json and report.md here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::FpDemo(a) => fp_demo(a),
        Command::Witness(a) => rerun_witnesses(a),
        Command::Report(a) => report(a),
        Command::Tabulate(a) => tabulate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Config file, then environment, then flags.
fn build_config(a: RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.bmc = cfg.bmc.with_env_override();
    if let Some(cc) = std::env::var_os(witness::CC_ENV).filter(|v| !v.is_empty()) {
        cfg.compiler = cc.into();
    }
    if let Some(v) = a.requirements {
        cfg.requirements_path = v;
    }
    if let Some(p) = a.provider {
        cfg.provider = match p.as_str() {
            "http" => ProviderKind::Http,
            "replay" => ProviderKind::Replay,
            "scripted" => ProviderKind::Scripted,
            other => bail!("unknown provider `{other}` (expected http, replay or scripted)"),
        };
    }
    if let Some(v) = a.replay_store {
        cfg.replay_store = v;
    }
    if let Some(v) = a.script_dir {
        cfg.script_dir = Some(v);
    }
    cfg.record |= a.record;
    if let Some(v) = a.bmc_path {
        cfg.bmc.tool_path = v;
    }
    if let Some(v) = a.unwind {
        cfg.bmc.unwind_bound = v;
    }
    if let Some(v) = a.timeout {
        cfg.bmc.timeout_secs = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = a.out {
        cfg.output_dir = v;
    }
    if let Some(v) = a.stages {
        cfg.stages = v
            .iter()
            .map(|s| s.parse::<PipelineStage>())
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::msg)?;
    }
    if let Some(v) = a.ground_truth {
        cfg.ground_truth = Some(v);
    }
    if !a.baseline.is_empty() {
        cfg.baselines = a.baseline;
    }
    if let Some(v) = a.overrides {
        cfg.overrides = Some(v);
    }
    if let Some(v) = a.baseline_specs {
        cfg.baseline_specs = Some(v);
    }
    if let Some(v) = a.compiler {
        cfg.compiler = v;
    }
    if let Some(v) = a.tool_name {
        cfg.tool_name = v;
    }
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let cfg = build_config(a)?;
    let summary = pipeline::run_pipeline(&cfg)?;
    for e in &summary.requirements {
        match &e.error {
            Some(err) => println!("{}\t{}\t{}", e.requirement_id, e.status, err.replace('\n', " ")),
            None => println!("{}\t{}", e.requirement_id, e.status),
        }
    }
    println!("summary: {}", cfg.output_dir.join("summary.json").display());
    for p in &summary.reports {
        println!("report: {}", cfg.output_dir.join(p).display());
    }
    Ok(ExitCode::SUCCESS)
}

fn describe(label: &str, v: f32) {
    println!("{label:>8}: {v:e}  [{}]", fp_medsel::bits_grouped(v));
}

fn fp_demo(a: FpDemoArgs) -> Result<ExitCode> {
    if let Some(n) = a.search {
        if n == 0 {
            bail!("--search needs a positive count");
        }
        let found = fp_medsel::divergence_search(n, a.seed);
        println!("sampled {n} triples (seed {}), {} divergent", a.seed, found.len());
        for t in found.iter().take(a.show) {
            println!(
                "a={:e} b={:e} c={:e} mean-based={:e} minmax={:e}",
                t.a(),
                t.b(),
                t.c(),
                fp_medsel::mid_by_mean(t),
                fp_medsel::mid_by_minmax(t)
            );
        }
        return Ok(if found.is_empty() { ExitCode::FAILURE } else { ExitCode::SUCCESS });
    }
    let (t, canonical) = match a.triple {
        Some(v) if v.len() == 3 => (Triple32::new(v[0], v[1], v[2])?, false),
        Some(v) => bail!("--triple needs exactly three values, got {}", v.len()),
        None => (Triple32::absorption_case(), true),
    };
    describe("a", t.a());
    describe("b", t.b());
    describe("c", t.c());
    describe("sum", fp_medsel::sum32(&t));
    describe("mean", fp_medsel::mean32(&t));
    let mean = fp_medsel::mid_by_mean(&t);
    let minmax = fp_medsel::mid_by_minmax(&t);
    describe("by-mean", mean);
    describe("minmax", minmax);
    let agree = mean.to_bits() == minmax.to_bits();
    println!("selectors {}", if agree { "agree" } else { "disagree" });
    if canonical {
        let expected = mean.to_bits() == t.b().to_bits() && minmax.to_bits() == t.c().to_bits();
        return Ok(if expected { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    Ok(ExitCode::SUCCESS)
}

fn rerun_witnesses(a: WitnessArgs) -> Result<ExitCode> {
    let set = requirements::load_requirement_set(&a.requirements)?;
    let compiler = a.compiler.unwrap_or_else(witness::default_compiler);
    bmc::resolve_tool(&compiler)?;
    let mut ran = 0;
    for req in &set.requirements {
        let stem = pipeline::file_stem(&req.id);
        let verdict_path = a.out.join("traces").join(format!("{stem}.verdict.json"));
        let Ok(text) = std::fs::read_to_string(&verdict_path) else { continue };
        let verdict: bmc::Verdict = serde_json_from(&text, &verdict_path)?;
        let Some(cex) = verdict.counterexample.filter(|_| verdict.status == VerdictStatus::Falsifiable) else {
            continue;
        };
        let dir = a.out.join("instrumented");
        let instrumented_text = std::fs::read_to_string(dir.join(format!("{stem}.c")))?;
        let plan_path = dir.join(format!("{stem}.plan.json"));
        let plan: AssertionPlan = serde_json_from(&std::fs::read_to_string(&plan_path)?, &plan_path)?;
        let unit = InstrumentedUnit {
            original_path: req.source_unit.clone(),
            instrumented_text,
            plan,
            line_map: Vec::new(),
        };
        let (h, r) = witness::validate_counterexample(&req.id, &cex, &unit, &compiler)?;
        let wdir = a.out.join("witness").join(&stem);
        std::fs::create_dir_all(&wdir)?;
        if let Some(h) = h {
            std::fs::write(wdir.join("harness.c"), h.harness_text)?;
        }
        std::fs::write(wdir.join("run.log"), &r.observed_output)?;
        info!(requirement_id = %req.id, outcome = ?r.outcome, "witness");
        println!("{}\t{:?}\texit {}", req.id, r.outcome, r.exit_code);
        ran += 1;
    }
    if ran == 0 {
        println!("no falsifiable verdicts with counterexamples under {}", a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn serde_json_from<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).with_context(|| format!("parsing {}", path.display()))
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    for p in pipeline::report_from_records(&a.records, &a.out)? {
        println!("report: {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn tabulate(a: TabulateArgs) -> Result<ExitCode> {
    let report = pipeline::tabulate_tool_results(&pipeline::TabulateInput {
        ground_truth: a.ground_truth,
        ours: a.ours,
        baselines: a.baseline,
        venn_against: a.venn_against,
        overrides: a.overrides,
    })?;
    println!("tool\tverified/formed/total\trate\tfp\tfn");
    for t in &report.tools {
        let m = &t.metrics;
        println!(
            "{}\t{}/{}/{}\t{:.1}\t{}\t{}",
            t.tool, m.total.verified, m.total.formed, m.total.total, m.verification_rate, m.fp_count, m.fn_count
        );
    }
    if let Some(g) = &report.ground_truth {
        println!(
            "ground truth: {} provable, {} falsifiable, {} undetermined, {} total",
            g.provable, g.falsifiable, g.undetermined, g.total
        );
    }
    if let Some(v) = &report.venn {
        let ids: Vec<&str> = v.only_ours.iter().map(String::as_str).collect();
        println!("only ours: {} [{}]", ids.len(), ids.join(", "));
        println!("both: {}, only baseline: {}", v.both.len(), v.only_baseline.len());
    }
    if let Some(e) = &report.equivalence {
        for (c, n) in &e.counts {
            println!("{c:?}\t{n}\t{:.2}%", e.percentages[c]);
        }
    }
    if let Some(out) = &a.out {
        for p in pipeline::write_report(&report, out)? {
            println!("report: {}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
