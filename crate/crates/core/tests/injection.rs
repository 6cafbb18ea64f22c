mod common;

use std::fs;
use std::process::Command;

use proptest::prelude::*;
use specverify_core::injector::{self, AnchorSpec, AssertionPlan, InsertionMode, MARKER};

use common::*;

#[test]
fn fixture_plans_strip_back_to_the_original_and_compile() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(injector::HEADER_NAME), injector::SV_ASSERT_HEADER).unwrap();
    for req in &fixture_set().requirements {
        let src = req.read_source().unwrap();
        let plan = fixture_plan(&req.id);
        injector::validate_plan(&plan, &src).unwrap();
        let unit = injector::inject(&src, &req.source_unit, &plan).unwrap();
        assert_eq!(injector::strip(&unit), src, "{}", req.id);
        assert_eq!(injector::strip_marked(&unit.instrumented_text), src, "{}", req.id);

        let path = dir.path().join(format!("{}.c", req.id));
        fs::write(&path, &unit.instrumented_text).unwrap();
        for defines in [&[][..], &["-DSV_WITNESS"][..]] {
            let out = Command::new(cc())
                .args(["-fsyntax-only", "-Wall", "-Werror=implicit-function-declaration"])
                .args(defines)
                .arg("-I")
                .arg(dir.path())
                .arg(&path)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{} {:?}: {}",
                req.id,
                defines,
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
}

#[test]
fn line_map_points_at_identical_lines() {
    let src = unit_text("fsm_controller.c");
    let unit = injector::inject(&src, "fsm_controller.c", &fixture_plan("FIX-005")).unwrap();
    let orig: Vec<&str> = src.lines().collect();
    let inst: Vec<&str> = unit.instrumented_text.lines().collect();
    assert_eq!(unit.line_map.len(), orig.len());
    for &(o, i) in &unit.line_map {
        assert_eq!(orig[o - 1], inst[i - 1]);
    }
    let injected = inst.iter().filter(|l| l.ends_with(MARKER)).count();
    assert_eq!(injected, inst.len() - orig.len());
}

/// Driver that runs the hold unit over `inputs`, printing after each step.
fn hold_driver(inputs: &[f32]) -> String {
    let mut d = String::from("#include <stdio.h>\nextern float hold_in;\nvoid HOLD_step(void);\nint main(void)\n{\n  setvbuf(stdout, NULL, _IONBF, 0);\n");
    for (k, v) in inputs.iter().enumerate() {
        d.push_str(&format!("  hold_in = {v:?}f;\n  HOLD_step();\n  printf(\"ok {k}\\n\");\n"));
    }
    d.push_str("  return 0;\n}\n");
    d
}

#[test]
fn previous_value_assertion_holds_for_constant_input_and_fails_on_change() {
    let plan = fixture_plan("FIX-006");
    assert!(plan.aux_names().iter().any(|n| n == "sv_prev_hold_out"));
    assert!(plan.post_step_updates.iter().any(|s| s.starts_with("sv_prev_hold_out =")));
    assert!(plan.post_step_assertions[0].contains("sv_prev_hold_out"));

    let src = unit_text("hold.c");
    let unit = injector::inject(&src, "hold.c", &plan).unwrap();
    let header = injector::witness_header("FIX-006", false);

    for inputs in [vec![1.5f32, 1.5, 1.5], vec![1.5, 1.5, 1.5, 2.0, 2.0]] {
        // oracle: the first step whose input differs from the one before
        let first_change = (1..inputs.len()).find(|&k| inputs[k] != inputs[k - 1]);
        let dir = tempfile::tempdir().unwrap();
        let out = build_and_run(dir.path(), &unit.instrumented_text, &hold_driver(&inputs), &header);
        let stdout = String::from_utf8_lossy(&out.stdout);
        let stderr = String::from_utf8_lossy(&out.stderr);
        let completed = stdout.lines().filter(|l| l.starts_with("ok ")).count();
        match first_change {
            None => {
                assert!(out.status.success(), "{stderr}");
                assert_eq!(completed, inputs.len());
            }
            Some(k) => {
                assert!(!out.status.success());
                assert_eq!(completed, k);
                assert!(stderr.contains("SV_FAIL:FIX-006:"), "{stderr}");
            }
        }
    }
}

#[test]
fn every_assertion_is_evaluated_in_one_step() {
    for req in &fixture_set().requirements {
        let src = req.read_source().unwrap();
        let plan = fixture_plan(&req.id);
        let unit = injector::inject(&src, &req.source_unit, &plan).unwrap();
        let (step, init) = entry_points(&src);
        let mut driver = format!("void {step}(void);\n");
        if let Some(i) = &init {
            driver.push_str(&format!("void {i}(void);\n"));
        }
        driver.push_str("int main(void)\n{\n");
        if let Some(i) = &init {
            driver.push_str(&format!("  {i}();\n"));
        }
        driver.push_str(&format!("  {step}();\n  return 0;\n}}\n"));

        let dir = tempfile::tempdir().unwrap();
        let header = injector::witness_header(&req.id, true);
        let out = build_and_run(dir.path(), &unit.instrumented_text, &driver, &header);
        let stderr = String::from_utf8_lossy(&out.stderr);
        for stmt in &plan.post_step_assertions {
            let cond = injector::assertion_condition(stmt).unwrap();
            let hits = stderr
                .lines()
                .filter(|l| *l == format!("SV_EVAL:{}:{cond}", req.id))
                .count();
            assert!(hits >= 1, "{}: `{cond}` never evaluated\n{stderr}", req.id);
        }
    }
}

fn arb_plan() -> impl Strategy<Value = AssertionPlan> {
    let mode = prop_oneof![
        Just(InsertionMode::EntryOfStep),
        Just(InsertionMode::ExitOfStep),
        Just(InsertionMode::BothEntryExit),
    ];
    (0usize..3, 0usize..3, 1usize..4, 0usize..3, mode, -50i32..50).prop_map(
        |(aux, entry, asserts, updates, insertion_mode, k)| AssertionPlan {
            requirement_id: "P-1".into(),
            aux_declarations: (0..aux).map(|i| format!("static int sv_p{i};")).collect(),
            pre_step_statements: (0..entry).map(|i| format!("sv_e{i} = {k};")).collect(),
            post_step_assertions: (0..asserts).map(|i| format!("SV_ASSERT({k} + {i} >= -100);")).collect(),
            post_step_updates: (0..updates).map(|i| format!("sv_u{i} = {k};")).collect(),
            anchor: AnchorSpec {
                step_function_name: "*_step".into(),
                insertion_mode,
            },
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn injection_is_reversible_on_fixture_units(
        plan in arb_plan(),
        name in prop::sample::select(vec![
            "medsel_mean.c", "medsel_minmax.c", "reg_counter.c", "fsm_controller.c", "hold.c",
        ]),
    ) {
        let src = unit_text(name);
        let unit = injector::inject(&src, name, &plan).unwrap();
        prop_assert_eq!(injector::strip(&unit), src.clone());
        prop_assert_eq!(injector::strip_marked(&unit.instrumented_text), src.clone());
        let marked = unit.instrumented_text.lines().filter(|l| l.ends_with(MARKER)).count();
        prop_assert!(marked > plan.aux_declarations.len());
        prop_assert_eq!(unit.instrumented_text.lines().count(), src.lines().count() + marked);
    }
}
