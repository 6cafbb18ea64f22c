#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specverify_core::injector::{self, AssertionPlan};
use specverify_core::requirements::{self, RequirementSet};
use specverify_core::witness;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn pipeline_fixtures() -> PathBuf {
    repo_root().join("fixtures/pipeline")
}

pub fn fixture_set() -> RequirementSet {
    requirements::load_requirement_set(&pipeline_fixtures().join("requirements.req")).unwrap()
}

pub fn scripted(id: &str, stage: &str) -> String {
    fs::read_to_string(pipeline_fixtures().join(format!("script/{id}.{stage}.txt"))).unwrap()
}

pub fn fixture_plan(id: &str) -> AssertionPlan {
    injector::parse_plan(id, &scripted(id, "synthesize_assertions")).unwrap()
}

pub fn unit_text(name: &str) -> String {
    fs::read_to_string(pipeline_fixtures().join("units").join(name)).unwrap()
}

pub fn cc() -> PathBuf {
    witness::default_compiler()
}

/// Step function and optional initializer of an instrumented or plain unit.
pub fn entry_points(text: &str) -> (String, Option<String>) {
    let step = injector::resolve_anchor(text, "*_step").unwrap().name;
    let init = format!("{}_initialize", step.strip_suffix("_step").unwrap());
    let has_init = text.contains(&format!("void {init}(void)"));
    (step, has_init.then_some(init))
}

/// Builds `unit` + `driver` against `header` (written as sv_assert.h) and
/// runs the result.
pub fn build_and_run(dir: &Path, unit: &str, driver: &str, header: &str) -> Output {
    fs::write(dir.join(injector::HEADER_NAME), header).unwrap();
    fs::write(dir.join("unit.c"), unit).unwrap();
    fs::write(dir.join("driver.c"), driver).unwrap();
    let exe = dir.join("prog");
    let build = Command::new(cc())
        .current_dir(dir)
        .args(["-O0", "-I."])
        .arg("-o")
        .arg(&exe)
        .args(["driver.c", "unit.c", "-lm"])
        .output()
        .unwrap();
    assert!(
        build.status.success(),
        "build failed:\n{}",
        String::from_utf8_lossy(&build.stderr)
    );
    Command::new(&exe).output().unwrap()
}
