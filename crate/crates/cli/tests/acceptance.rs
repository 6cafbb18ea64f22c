//! Acceptance checks, one line per criterion.
//!
//! Exits 0 when every criterion passes except those listed in
//! `KNOWN_FAILURES`, which are explained in the decisions ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specverify_core::bmc::{self, BmcConfig, BmcError, VerdictReason, VerdictStatus, KILL_GRACE};
use specverify_core::evaluation::{self, EquivalenceCategory, MetricsTable};
use specverify_core::fp_medsel::{self, Triple32, ABSORPTION_BITS};
use specverify_core::injector;
use specverify_core::requirements;
use specverify_core::witness::{self, WitnessOutcome};

/// Rate tolerance for the metrics criterion, in percentage points.
const RATE_TOL: f64 = 0.05;
/// Percentage tolerance for the equivalence criterion.
const PCT_TOL: f64 = 0.01;
const KNOWN_FAILURES: [u32; 1] = [3];

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn pipeline_dir() -> PathBuf {
    root().join("fixtures/pipeline")
}

fn table_dir() -> PathBuf {
    root().join("fixtures/table")
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure!(elapsed < limit, "took {elapsed:?}, limit {limit:?}");
    Ok(())
}

fn c1_absorption() -> Check {
    let started = Instant::now();
    let t = Triple32::absorption_case();
    let [a, b, c] = t.values();
    ensure!(
        (a.to_bits(), b.to_bits(), c.to_bits()) == (ABSORPTION_BITS[0], ABSORPTION_BITS[1], ABSORPTION_BITS[2]),
        "inputs are not the canonical encodings"
    );
    for (v, want) in [(a, 1.813356e24f64), (b, 2.328307e-10), (c, 1.999512)] {
        ensure!((f64::from(v) / want - 1.0).abs() < 1e-6, "{v:e} is not near {want:e}");
    }
    let by_mean = fp_medsel::mid_by_mean(&t);
    let minmax = fp_medsel::mid_by_minmax(&t);
    ensure!(by_mean.to_bits() == b.to_bits(), "mid_by_mean gave {by_mean:e}");
    ensure!(minmax.to_bits() == c.to_bits(), "mid_by_minmax gave {minmax:e}");
    let sum = fp_medsel::sum32(&t);
    ensure!(sum.to_bits() == a.to_bits(), "sum {sum:e} did not absorb b and c");
    let mu = fp_medsel::mean32(&t);
    // a/3 rounded once from the exact quotient
    let third = (f64::from(a) / 3.0) as f32;
    let ulps = fp_medsel::ulp_distance(mu, third);
    ensure!(ulps <= 1, "mean {mu:e} is {ulps} ulp from a/3 {third:e}");
    ensure!((f64::from(mu) / 6.044520e23 - 1.0).abs() < 1e-6, "mean {mu:e}");
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok(format!("by-mean=b, minmax=c, sum=a, mean {mu:e} ({ulps} ulp from a/3)"))
}

/// Middle element after a total-order sort; equal values compare equal.
fn sort_middle(v: [f32; 3]) -> f32 {
    let mut s = v;
    s.sort_by(|x, y| x.partial_cmp(y).unwrap());
    s[1]
}

fn adversarial() -> Vec<[f32; 3]> {
    let spread = [
        f32::MAX,
        -f32::MAX,
        f32::MIN_POSITIVE,
        -f32::MIN_POSITIVE,
        f32::from_bits(1),
        -f32::from_bits(1),
        0.0,
        -0.0,
        1.0,
        -1.0,
        1e30,
        -1e30,
        1e-30,
        f32::EPSILON,
        16_777_216.0,
        16_777_217.0,
        f32::from_bits(ABSORPTION_BITS[0]),
        f32::from_bits(ABSORPTION_BITS[1]),
        f32::from_bits(ABSORPTION_BITS[2]),
    ];
    let mut out = Vec::new();
    for &x in &spread {
        for &y in &spread {
            for &z in &spread {
                out.push([x, y, z]);
            }
        }
    }
    out
}

fn c2_minmax_oracle() -> Check {
    const RANDOM: usize = 1_000_000;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut draw = || loop {
        let v = f32::from_bits(rng.gen::<u32>());
        if v.is_finite() {
            break v;
        }
    };
    let mut cases: Vec<[f32; 3]> = (0..RANDOM).map(|_| [draw(), draw(), draw()]).collect();
    cases.extend(adversarial());
    let mut mismatches = 0usize;
    let mut first = None;
    for v in &cases {
        let t = Triple32::new(v[0], v[1], v[2]).map_err(|e| e.to_string())?;
        let got = fp_medsel::mid_by_minmax(&t);
        if got != sort_middle(*v) {
            mismatches += 1;
            first.get_or_insert(*v);
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches, first {first:?}");
    within(started.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{} triples, 0 mismatches, {:.1?}", cases.len(), started.elapsed()))
}

fn metrics(tool: &str) -> Result<MetricsTable, String> {
    let truth = evaluation::load_ground_truth(&table_dir().join("ground_truth.tsv")).map_err(|e| e.to_string())?;
    let recs = evaluation::load_tool_records(&table_dir().join(format!("{tool}.tsv")), &truth)
        .map_err(|e| e.to_string())?;
    evaluation::tabulate(&recs).map_err(|e| e.to_string())
}

/// (tool, verified, formed, total, fp, fn, reference rate)
const TABLE: [(&str, u32, u32, u32, u32, u32, f64); 3] = [
    ("claude", 27, 58, 58, 0, 2, 46.5),
    ("chatgpt", 15, 35, 58, 8, 2, 25.9),
    ("cocosim", 27, 54, 58, 2, 6, 46.5),
];

/// Exact integer cells of the metrics criterion.
fn c3_counts() -> Check {
    let mut seen = Vec::new();
    for (tool, v, f, t, fp, fn_, _) in TABLE {
        let m = metrics(tool)?;
        let got = (m.total.verified, m.total.formed, m.total.total, m.fp_count, m.fn_count);
        ensure!(got == (v, f, t, fp, fn_), "{tool}: got {got:?}");
        seen.push(format!("{tool} {v}/{f}/{t} fp {fp} fn {fn_}"));
    }
    Ok(seen.join("; "))
}

fn c3_metrics() -> Check {
    let counts = c3_counts()?;
    let mut off = Vec::new();
    for (tool, .., rate) in TABLE {
        let m = metrics(tool)?;
        if (m.verification_rate - rate).abs() > RATE_TOL {
            off.push(format!("{tool} rate {:.1} vs {rate}+-{RATE_TOL}", m.verification_rate));
        }
    }
    ensure!(off.is_empty(), "integers match; {}", off.join("; "));
    Ok(counts)
}

fn c4_equivalence() -> Check {
    let text = fs::read_to_string(table_dir().join("equivalence_review.tsv")).map_err(|e| e.to_string())?;
    let overrides = evaluation::parse_overrides(&text).map_err(|e| e.to_string())?;
    let tally = evaluation::tally_equivalence(&evaluation::records_from_overrides(&overrides));
    use EquivalenceCategory::*;
    let want = [
        (LogicEquivalent, 46),
        (Misunderstanding, 2),
        (LackingAssumption, 2),
        (BenchmarkSkipped, 4),
        (SequenceReversal, 2),
        (OverVerificationOurs, 1),
        (OverVerificationBaseline, 1),
    ];
    ensure!(tally.reviewed == 58, "reviewed {}", tally.reviewed);
    for (c, n) in want {
        ensure!(tally.counts[&c] == n, "{c:?}: {} != {n}", tally.counts[&c]);
    }
    let pct = tally.percentages[&LogicEquivalent];
    ensure!((pct - 79.31).abs() <= PCT_TOL, "LogicEquivalent {pct}%");
    Ok(format!("46/58 LogicEquivalent = {pct:.2}%, others 2,2,4,2,1,1"))
}

fn c5_ground_truth() -> Check {
    let truth = evaluation::load_ground_truth(&table_dir().join("ground_truth.tsv")).map_err(|e| e.to_string())?;
    let g = evaluation::summarize_truth(&truth);
    ensure!(
        (g.provable, g.falsifiable, g.undetermined) == (12, 17, 29),
        "split {}/{}/{}",
        g.provable,
        g.falsifiable,
        g.undetermined
    );
    ensure!(g.provable + g.falsifiable + g.undetermined == g.total && g.total == 58, "total {}", g.total);
    for (tool, ..) in TABLE {
        let total = metrics(tool)?.total.total;
        ensure!(total == g.total, "{tool} total {total}");
    }
    Ok("12 + 17 + 29 = 58, equal to every tool's total".into())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c6_determinism() -> Check {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_specverify"))
            .current_dir(root())
            .env_remove("SPECVERIFY_BMC")
            .env_remove("SPECVERIFY_CC")
            .args(["run", "--config", "fixtures/pipeline/run.toml", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "{name} run failed: {}", String::from_utf8_lossy(&o.stderr));
        trees.push(tree(&out));
    }
    let n = requirements::load_requirement_set(&pipeline_dir().join("requirements.req"))
        .map_err(|e| e.to_string())?
        .len();
    ensure!(n >= 5, "only {n} requirements");
    let (a, b) = (&trees[0], &trees[1]);
    ensure!(a.keys().eq(b.keys()), "file sets differ");
    for (k, v) in a {
        ensure!(b[k] == *v, "{} differs", k.display());
    }
    let reports = a.keys().filter(|k| k.starts_with("report")).count();
    let instrumented = a.keys().filter(|k| k.starts_with("instrumented")).count();
    ensure!(reports >= 2 && instrumented > n, "reports {reports}, instrumented {instrumented}");
    within(started.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{n} requirements, {} files identical, {:.1?}", a.len(), started.elapsed()))
}

fn plan(id: &str) -> Result<injector::AssertionPlan, String> {
    let text = fs::read_to_string(pipeline_dir().join(format!("script/{id}.synthesize_assertions.txt")))
        .map_err(|e| e.to_string())?;
    injector::parse_plan(id, &text).map_err(|e| e.to_string())
}

fn c7_reversibility() -> Check {
    let set = requirements::load_requirement_set(&pipeline_dir().join("requirements.req")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join(injector::HEADER_NAME), injector::SV_ASSERT_HEADER).map_err(|e| e.to_string())?;
    for req in &set.requirements {
        let src = req.read_source().map_err(|e| e.to_string())?;
        let unit = injector::inject(&src, &req.source_unit, &plan(&req.id)?).map_err(|e| e.to_string())?;
        ensure!(injector::strip(&unit) == src, "{}: strip differs", req.id);
        ensure!(injector::strip_marked(&unit.instrumented_text) == src, "{}: marker strip differs", req.id);
        let path = dir.path().join(format!("{}.c", req.id));
        fs::write(&path, &unit.instrumented_text).map_err(|e| e.to_string())?;
        let o = Command::new(witness::default_compiler())
            .args(["-fsyntax-only", "-Wall", "-I"])
            .arg(dir.path())
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "{} does not compile: {}", req.id, String::from_utf8_lossy(&o.stderr));
    }
    Ok(format!("{} units round-trip and compile", set.len()))
}

fn c8_witness() -> Check {
    let raw = fs::read_to_string(pipeline_dir().join("bmc/FIX-001.out")).map_err(|e| e.to_string())?;
    let cex = bmc::parse_counterexample(&raw).map_err(|e| e.to_string())?;
    let bits: Vec<u32> = ["ia", "ib", "ic"]
        .iter()
        .map(|n| cex.steps[0].assignments[*n].f32_value().to_bits())
        .collect();
    ensure!(bits == ABSORPTION_BITS, "trace inputs {bits:x?}");
    let p = plan("FIX-001")?;
    let mut outcomes = Vec::new();
    for unit_name in ["medsel_mean.c", "medsel_minmax.c"] {
        let text = fs::read_to_string(pipeline_dir().join("units").join(unit_name)).map_err(|e| e.to_string())?;
        let unit = injector::inject(&text, unit_name, &p).map_err(|e| e.to_string())?;
        let h = witness::generate_harness("FIX-001", &cex, &unit).map_err(|e| e.to_string())?;
        let r = witness::execute_witness(&h, &unit, &witness::default_compiler()).map_err(|e| e.to_string())?;
        outcomes.push((r.outcome, r.observed_output.contains("SV_FAIL:FIX-001:"), r.exit_code));
    }
    ensure!(
        outcomes[0].0 == WitnessOutcome::Confirmed && outcomes[0].1,
        "mean unit: {:?}",
        outcomes[0]
    );
    ensure!(
        outcomes[1].0 == WitnessOutcome::Spurious && outcomes[1].2 == 0,
        "minmax unit: {:?}",
        outcomes[1]
    );
    Ok("mean unit aborts with SV_FAIL (Confirmed), minmax completes (Spurious)".into())
}

fn c9_normalization() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stub = pipeline_dir().join("stub_bmc.sh");
    let run = |stem: &str, tool: &Path, timeout_secs: u64| {
        let file = dir.path().join(format!("{stem}.c"));
        fs::write(&file, "void X_step(void) {}\n").unwrap();
        let cfg = BmcConfig {
            tool_path: tool.to_path_buf(),
            timeout_secs,
            ..BmcConfig::default()
        };
        let started = Instant::now();
        (bmc::run_verifier(stem, &file, &cfg), started.elapsed())
    };
    let mut seen = Vec::new();

    let (v, _) = run("FIX-002", &stub, 5);
    let v = v.map_err(|e| format!("success: {e}"))?;
    ensure!((v.status, v.reason) == (VerdictStatus::Verified, VerdictReason::Proved), "success: {v:?}");
    seen.push("success->Verified");

    let (v, _) = run("FIX-001", &stub, 5);
    let v = v.map_err(|e| format!("failure: {e}"))?;
    ensure!(
        v.status == VerdictStatus::Falsifiable && v.counterexample.is_some(),
        "failure: {:?}",
        v.status
    );
    seen.push("trace->Falsifiable");

    let garbage = dir.path().join("garbage.sh");
    fs::write(&garbage, "#!/bin/sh\necho 'no recognizable verdict'\n").map_err(|e| e.to_string())?;
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(&garbage, fs::Permissions::from_mode(0o755)).map_err(|e| e.to_string())?;
    let (v, _) = run("G-1", &garbage, 5);
    let v = v.map_err(|e| format!("garbage: {e}"))?;
    ensure!(
        (v.status, v.reason) == (VerdictStatus::Undetermined, VerdictReason::ToolError),
        "garbage: {v:?}"
    );
    seen.push("garbage->Undetermined/ToolError");

    let (r, _) = run("FIX-005", &stub, 5);
    ensure!(
        matches!(r, Err(BmcError::ToolCrashed { exit_code: Some(134), .. })),
        "crash: {r:?}"
    );
    seen.push("crash->ToolCrashed");

    let (v, wall) = run("FIX-006", &stub, 1);
    let v = v.map_err(|e| format!("timeout: {e}"))?;
    ensure!(
        (v.status, v.reason) == (VerdictStatus::Undetermined, VerdictReason::Timeout),
        "timeout: {v:?}"
    );
    ensure!(
        wall >= Duration::from_secs(1) && wall < Duration::from_secs(1) + KILL_GRACE,
        "timeout wall {wall:?}, grace {KILL_GRACE:?}"
    );
    seen.push("timeout->Undetermined/Timeout");
    Ok(format!("{}; killed after {wall:.2?}", seen.join(", ")))
}

fn c10_venn() -> Check {
    let truth = evaluation::load_ground_truth(&table_dir().join("ground_truth.tsv")).map_err(|e| e.to_string())?;
    let load = |tool: &str| {
        evaluation::load_tool_records(&table_dir().join(format!("{tool}.tsv")), &truth).map_err(|e| e.to_string())
    };
    let (ours, coco, sldv) = (load("claude")?, load("cocosim")?, load("sldv")?);
    let venn = evaluation::diff_tools(&ours, &[&coco, &sldv]).map_err(|e| e.to_string())?;
    ensure!(venn.only_ours.len() == 2, "only ours: {:?}", venn.only_ours);
    Ok(format!(
        "only ours {:?}, both {}, only baseline {}",
        venn.only_ours,
        venn.both.len(),
        venn.only_baseline.len()
    ))
}

fn guarded(f: fn() -> Check) -> Check {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let criteria: [(u32, &str, fn() -> Check); 10] = [
        (1, "fp median bug reproduction", c1_absorption),
        (2, "minmax matches sort-middle oracle", c2_minmax_oracle),
        (3, "metrics reproduction", c3_metrics),
        (4, "equivalence tally", c4_equivalence),
        (5, "ground-truth consistency", c5_ground_truth),
        (6, "deterministic end-to-end run", c6_determinism),
        (7, "injection reversibility", c7_reversibility),
        (8, "witness confirmation", c8_witness),
        (9, "verdict normalization totality", c9_normalization),
        (10, "detection diff", c10_venn),
    ];
    let mut failed = BTreeSet::new();
    for (n, name, f) in criteria {
        let started = Instant::now();
        let (tag, detail) = match guarded(f) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.insert(n);
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail} ({:.2?})", started.elapsed());
    }
    let counts = guarded(c3_counts);
    println!(
        "criterion  3 integer cells [{}] {}",
        if counts.is_ok() { "PASS" } else { "FAIL" },
        counts.as_ref().unwrap_or_else(|e| e)
    );
    let known: BTreeSet<u32> = KNOWN_FAILURES.into();
    println!(
        "summary: {} passed, {} failed {:?}, known {:?}",
        10 - failed.len(),
        failed.len(),
        failed,
        known
    );
    if failed.is_subset(&known) && counts.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
