use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn specverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specverify"))
        .current_dir(repo_root())
        .env_remove("SPECVERIFY_BMC")
        .env_remove("SPECVERIFY_CC")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path -> bytes for every file under `root`.
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

fn run_fixture(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", "fixtures/pipeline/run.toml", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    specverify(&args)
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run_fixture(&a, &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = run_fixture(&b, &[]);
    assert!(second.status.success(), "{}", stderr(&second));

    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
    for want in ["summary.json", "report/report.json", "report/report.md", "instrumented/FIX-001.c"] {
        assert!(ta.contains_key(Path::new(want)), "missing {want}");
    }

    let status: BTreeMap<String, String> = stdout(&first)
        .lines()
        .filter(|l| l.starts_with("FIX-"))
        .map(|l| {
            let mut f = l.split('\t');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    assert_eq!(status.len(), 6);
    assert_eq!(status["FIX-001"], "Falsifiable/Confirmed");
    assert_eq!(status["FIX-003"], "Falsifiable/Spurious");
    assert_eq!(status["FIX-002"], "Verified");
    assert_eq!(status["FIX-006"], "Undetermined");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run_fixture(&out, &["--stages", "formalize,inject", "--bmc-path", "/nonexistent/esbmc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("instrumented/FIX-003.c").exists());
    assert!(!out.join("traces").exists());
    assert!(!out.join("report").exists());
}

#[test]
fn missing_verifier_fails_preflight() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_fixture(&tmp.path().join("o"), &["--bmc-path", "/nonexistent/esbmc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing external tool for stage verify"), "{}", stderr(&o));
}

#[test]
fn environment_variable_overrides_the_config_verifier() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_specverify"))
        .current_dir(repo_root())
        .env("SPECVERIFY_BMC", "/nonexistent/esbmc")
        .args(["run", "--config", "fixtures/pipeline/run.toml", "--out"])
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_stage_is_rejected() {
    let o = specverify(&["run", "--config", "fixtures/pipeline/run.toml", "--stages", "formalize,dance"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn fp_demo_shows_the_divergent_canonical_triple() {
    let o = specverify(&["fp-demo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("selectors disagree"), "{text}");
    assert!(text.contains("by-mean: 2.328307e-10  [00101111 10000000 00000000 00000010]"), "{text}");
}

#[test]
fn fp_demo_accepts_a_triple_and_reports_agreement() {
    let o = specverify(&["fp-demo", "--triple", "1,2,3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("selectors agree"));

    let bad = specverify(&["fp-demo", "--triple", "1,2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fp_demo_search_finds_divergent_triples() {
    let o = specverify(&["fp-demo", "--search", "20000", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("sampled "))
        .unwrap()
        .to_string();
    let found: usize = line.rsplit(", ").next().unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(found > 0, "{line}");
}

#[test]
fn witness_and_report_rerun_from_saved_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert!(run_fixture(&out, &[]).status.success());
    let before = fs::read(out.join("witness/FIX-001/harness.c")).unwrap();

    let o = specverify(&[
        "witness",
        "--out",
        out.to_str().unwrap(),
        "--requirements",
        "fixtures/pipeline/requirements.req",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FIX-001\tConfirmed")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("FIX-003\tSpurious")), "{text}");
    assert_eq!(fs::read(out.join("witness/FIX-001/harness.c")).unwrap(), before);

    let report_dir = tmp.path().join("r");
    let o = specverify(&[
        "report",
        "--records",
        out.join("report/records.json").to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(report_dir.join("report.json")).unwrap()).unwrap();
    let total = &json["tools"][0]["metrics"]["total"];
    assert_eq!((total["verified"].as_u64(), total["total"].as_u64()), (Some(4), Some(6)));
}

#[test]
fn tabulate_scores_listed_results() {
    let tmp = tempfile::tempdir().unwrap();
    let o = specverify(&[
        "tabulate",
        "--ground-truth",
        "fixtures/table/ground_truth.tsv",
        "--ours",
        "fixtures/table/claude.tsv",
        "--baseline",
        "fixtures/table/cocosim.tsv",
        "--baseline",
        "fixtures/table/sldv.tsv",
        "--venn-against",
        "cocosim,sldv",
        "--overrides",
        "fixtures/table/equivalence_review.tsv",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("claude\t27/58/58\t"), "{text}");
    assert!(text.contains("sldv\t21/54/58\t36.2\t0\t0"), "{text}");
    assert!(text.contains("only ours: 2 [NLG-001, REG-003]"), "{text}");
    assert!(text.contains("LogicEquivalent\t46\t79.31%"), "{text}");
    assert!(tmp.path().join("report.md").exists());

    let bad = specverify(&[
        "tabulate",
        "--ground-truth",
        "fixtures/table/ground_truth.tsv",
        "--ours",
        "fixtures/table/claude.tsv",
        "--venn-against",
        "nobody",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
