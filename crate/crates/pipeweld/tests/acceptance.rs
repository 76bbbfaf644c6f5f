//! Acceptance gate: one test per numbered criterion. Each test prints
//! `criterion N (<name>): pass` on success, or a FAIL line carrying the
//! failing detail before panicking with the same message. Run with
//! `cargo test --test acceptance -- --nocapture` to see every line.

mod common;

use std::process::Command;
use std::time::Duration;

use rand::Rng;

use common::*;
use pipeweld::{
    build_plan, closed_form_interval, partition_run, run_pipeline, simulate, sum_resources,
    DataDescriptor, DeviceBudget, DeviceSet, ExecOptions, FlowGraph, Frame, FuseDecision,
    FuseReject, ModuleDb, PipelinePlan, PlanConfig, ResourceVector, Span, StageKind, StageMode,
    Utilization,
};

fn pass(n: u32, name: &str) {
    println!("criterion {n} ({name}): pass");
}

fn fail(n: u32, name: &str, detail: &str) -> ! {
    println!("criterion {n} ({name}): FAIL - {detail}");
    panic!("criterion {n} ({name}): {detail}");
}

fn case_study_db() -> ModuleDb {
    ModuleDb::load(&fixture_text("hw_modules.json")).expect("valid module fixture")
}

// ── 1: hardware time estimates ───────────────────────────────────────

#[test]
fn criterion_1_hardware_time_estimates() {
    const NAME: &str = "hardware time estimates";
    let db = case_study_db();
    let frame = DataDescriptor::new(1080, 1920, 24, 1).expect("case-study frame");
    let cases = [("cvtColor", 39.7), ("cornerHarris", 13.4), ("convertScaleAbs", 13.0)];
    for (function, want_ms) in cases {
        let desc = db
            .lookup(function)
            .unwrap_or_else(|| fail(1, NAME, &format!("no module for {function}")));
        let got_ms = desc.estimate_time_ms(&frame);
        if (got_ms - want_ms).abs() > 0.1 {
            fail(1, NAME, &format!("{function}: estimated {got_ms:.3} ms, want {want_ms} ± 0.1"));
        }
    }
    pass(1, NAME);
}

// ── 2: case-study plan shape ─────────────────────────────────────────

#[test]
fn criterion_2_case_study_plan_shape() {
    const NAME: &str = "case-study plan shape";
    let graph = case_study_graph();
    let db = case_study_db();
    let config = PlanConfig { threads: 2, token_cap: None, budget: DeviceBudget::default() };
    let outcome = build_plan(&graph, &db, &config)
        .unwrap_or_else(|e| fail(2, NAME, &format!("build_plan failed: {e}")));
    let plan = outcome.plan;
    let want = [
        ("cvtColor", StageKind::Hw, StageMode::SerialInOrder),
        ("cornerHarris", StageKind::Hw, StageMode::Parallel),
        ("normalize", StageKind::Sw, StageMode::Parallel),
        ("convertScaleAbs", StageKind::Hw, StageMode::SerialInOrder),
    ];
    if plan.stages.len() != want.len() {
        fail(2, NAME, &format!("expected {} stages, got {}", want.len(), plan.stages.len()));
    }
    for (stage, (function, kind, mode)) in plan.stages.iter().zip(want) {
        let names: Vec<&str> = stage.tasks.iter().map(|t| t.name.as_str()).collect();
        if names != [function] {
            fail(2, NAME, &format!("stage {}: tasks {names:?}, want [{function}]", stage.index));
        }
        if stage.kind != kind || stage.mode != mode {
            fail(
                2,
                NAME,
                &format!(
                    "stage {} ({function}): kind {:?} mode {:?}, want {kind:?} {mode:?}",
                    stage.index, stage.kind, stage.mode
                ),
            );
        }
    }
    pass(2, NAME);
}

// ── 3: fusion rejection ──────────────────────────────────────────────

#[test]
fn criterion_3_fusion_rejection() {
    const NAME: &str = "fusion rejection";
    let graph = case_study_graph();
    let db = case_study_db();
    let decision = db
        .try_fuse(&["cvtColor", "cornerHarris"], &graph, 58.0)
        .unwrap_or_else(|e| fail(3, NAME, &format!("try_fuse errored: {e}")));
    match decision {
        FuseDecision::Reject(FuseReject::NotFaster { fused_ms, separate_ms }) => {
            if (fused_ms - 53.12).abs() > 0.1 {
                fail(3, NAME, &format!("fused estimate {fused_ms:.3} ms, want 53.12 ± 0.1"));
            }
            if (separate_ms - 53.05).abs() > 0.1 {
                fail(3, NAME, &format!("separate sum {separate_ms:.3} ms, want 53.05 ± 0.1"));
            }
            if fused_ms < separate_ms {
                fail(3, NAME, "rejected although the fused estimate was faster");
            }
        }
        other => fail(3, NAME, &format!("expected a not-faster rejection, got {other:?}")),
    }
    pass(3, NAME);
}

// ── 4: resource accounting ───────────────────────────────────────────

#[test]
fn criterion_4_resource_accounting() {
    const NAME: &str = "resource accounting";
    let db = case_study_db();
    let stages = [
        ("cvtColor", ResourceVector::new(23, 10, 4013, 5550)),
        ("cornerHarris", ResourceVector::new(66, 15, 13596, 17494)),
        ("convertScaleAbs", ResourceVector::new(0, 0, 1195, 2307)),
    ];
    let mut total = ResourceVector::default();
    for (function, want) in stages {
        let desc = db
            .lookup(function)
            .unwrap_or_else(|| fail(4, NAME, &format!("no module for {function}")));
        let subtotal = desc.resources + desc.adapter_resources;
        if subtotal != want {
            fail(4, NAME, &format!("{function}: stage subtotal {subtotal}, want {want}"));
        }
        total += subtotal;
    }
    let want_total = ResourceVector::new(89, 25, 18804, 25351);
    if total != want_total {
        fail(4, NAME, &format!("total {total}, want {want_total}"));
    }
    if sum_resources(db.descriptors()) != total {
        fail(4, NAME, "sum_resources disagrees with the per-stage subtotals");
    }
    let util = DeviceBudget::default().utilization(total);
    let checks = [
        ("bram", util.bram, 31.0),
        ("dsp", util.dsp, 10.0),
        ("ff", util.ff, 16.0),
        ("lut", util.lut, 46.0),
    ];
    for (component, got, want) in checks {
        if (got - want).abs() > 2.0 {
            fail(4, NAME, &format!("{component} utilization {got:.1}%, want {want}% ± 2pp"));
        }
    }
    pass(4, NAME);
}

// ── 5: throughput model ──────────────────────────────────────────────

#[test]
fn criterion_5_throughput_model() {
    const NAME: &str = "throughput model";
    let mut plan = make_plan(
        &[
            (StageMode::SerialInOrder, StageKind::Hw, &[("cvtColor", 39.8)]),
            (StageMode::Parallel, StageKind::Hw, &[("cornerHarris", 13.6)]),
            (StageMode::Parallel, StageKind::Sw, &[("normalize", 80.2)]),
            (StageMode::SerialInOrder, StageKind::Hw, &[("convertScaleAbs", 13.2)]),
        ],
        5,
    );
    plan.sequential_baseline_ms = 1371.1;
    let report = simulate(&plan, 100, 2);
    if (report.steady_interval_ms - 80.2).abs() > 0.5 {
        fail(
            5,
            NAME,
            &format!("steady interval {:.2} ms, want 80.2 ± 0.5", report.steady_interval_ms),
        );
    }
    let floor = 15.36;
    let ceiling = 1.25 * 15.36;
    if report.speedup < floor || report.speedup > ceiling {
        fail(
            5,
            NAME,
            &format!("speedup x{:.2} outside [{floor:.2}, {ceiling:.2}]", report.speedup),
        );
    }
    if (report.speedup - 17.10).abs() > 0.15 {
        fail(5, NAME, &format!("speedup x{:.2}, want x17.10 ± 0.15", report.speedup));
    }
    pass(5, NAME);
}

// ── 6: executor vs sequential oracle ─────────────────────────────────

fn serial_spans_exclusive(plan: &PipelinePlan, spans: &[Span]) -> Result<(), String> {
    for stage in &plan.stages {
        if stage.mode != StageMode::SerialInOrder {
            continue;
        }
        let mut rows: Vec<&Span> =
            spans.iter().filter(|s| s.stage == stage.index as usize).collect();
        rows.sort_by_key(|s| (s.start_us, s.token));
        for pair in rows.windows(2) {
            if pair[1].start_us < pair[0].end_us {
                return Err(format!(
                    "serial stage {} overlapped: token {} [{}, {}) vs token {} [{}, {})",
                    stage.index,
                    pair[0].token,
                    pair[0].start_us,
                    pair[0].end_us,
                    pair[1].token,
                    pair[1].start_us,
                    pair[1].end_us,
                ));
            }
            if pair[1].token < pair[0].token {
                return Err(format!(
                    "serial stage {} ran token {} before token {}",
                    stage.index, pair[0].token, pair[1].token,
                ));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_6_executor_vs_oracle() {
    const NAME: &str = "executor vs sequential oracle";
    let registry = byte_kernels();
    let mut rng6 = rng(601);
    for round in 0..100 {
        let plan = random_exec_plan(&mut rng6);
        let count = rng6.gen_range(4..=9);
        let inputs = random_frames(&mut rng6, count);
        let want = sequential_oracle(&plan, &inputs, &registry);
        for workers in [1usize, 2, 4] {
            let mut devices = DeviceSet::for_plan(&plan, &registry, 0.0)
                .unwrap_or_else(|e| fail(6, NAME, &format!("round {round}: {e}")));
            let opts =
                ExecOptions { workers, poll_interval: Duration::from_micros(50) };
            let out = run_pipeline(&plan, inputs.clone(), &registry, &mut devices, &opts)
                .unwrap_or_else(|e| {
                    fail(6, NAME, &format!("round {round} workers {workers}: {e}"))
                });
            if out.frames != want {
                fail(
                    6,
                    NAME,
                    &format!(
                        "round {round} workers {workers}: output differs from the \
                         sequential composition"
                    ),
                );
            }
            if out.stats.max_in_flight > plan.token_cap as usize {
                fail(
                    6,
                    NAME,
                    &format!(
                        "round {round} workers {workers}: {} tokens in flight, cap {}",
                        out.stats.max_in_flight, plan.token_cap
                    ),
                );
            }
            if let Err(why) = serial_spans_exclusive(&plan, &out.stats.spans) {
                fail(6, NAME, &format!("round {round} workers {workers}: {why}"));
            }
        }
    }

    // Overlap witness: with a slow interior stage, token 1 must clear
    // stage 0 while token 0 still occupies stage 1.
    let mut registry = byte_kernels();
    registry.register("nap_short", |f: &Frame| {
        std::thread::sleep(Duration::from_millis(3));
        Ok(f.clone())
    });
    registry.register("nap_long", |f: &Frame| {
        std::thread::sleep(Duration::from_millis(30));
        Ok(f.clone())
    });
    let plan = make_plan(
        &[
            (StageMode::SerialInOrder, StageKind::Sw, &[("nap_short", 3.0)]),
            (StageMode::Parallel, StageKind::Sw, &[("nap_long", 30.0)]),
            (StageMode::SerialInOrder, StageKind::Sw, &[("nap_short", 3.0)]),
        ],
        4,
    );
    let inputs = random_frames(&mut rng6, 4);
    let mut devices = DeviceSet::new();
    let opts = ExecOptions { workers: 2, poll_interval: Duration::from_micros(100) };
    let out = run_pipeline(&plan, inputs, &registry, &mut devices, &opts)
        .unwrap_or_else(|e| fail(6, NAME, &format!("witness run: {e}")));
    let span = |token: usize, stage: usize| {
        out.stats
            .spans
            .iter()
            .find(|s| s.token == token && s.stage == stage)
            .unwrap_or_else(|| fail(6, NAME, &format!("no span for token {token} stage {stage}")))
    };
    if span(1, 0).end_us >= span(0, 1).end_us {
        fail(
            6,
            NAME,
            &format!(
                "no overlap: token 1 left stage 0 at {} us, token 0 left stage 1 at {} us",
                span(1, 0).end_us,
                span(0, 1).end_us,
            ),
        );
    }
    pass(6, NAME);
}

// ── 7: simulator vs closed form ──────────────────────────────────────

#[test]
fn criterion_7_simulator_vs_closed_form() {
    const NAME: &str = "simulator vs closed form";
    let mut rng7 = rng(701);
    for round in 0..500 {
        let n_stages = rng7.gen_range(1..=8usize);
        let times: Vec<f64> = (0..n_stages).map(|_| rng7.gen_range(0.5..20.0)).collect();
        let token_cap = n_stages as u32 + rng7.gen_range(0..=3);
        let workers = rng7.gen_range(2..=5usize);
        let n_tokens = 400.max(120 * n_stages);
        let plan = timed_plan(&times, token_cap);
        let report = simulate(&plan, n_tokens, workers);
        let expected = closed_form_interval(&times, workers);
        let relative = (report.steady_interval_ms - expected).abs() / expected;
        if relative > 0.01 {
            fail(
                7,
                NAME,
                &format!(
                    "round {round}: stages {times:?} cap {token_cap} workers {workers}: \
                     steady {:.4} ms vs closed form {expected:.4} ms ({:.2}% off)",
                    report.steady_interval_ms,
                    relative * 100.0,
                ),
            );
        }
    }
    pass(7, NAME);
}

// ── 8: partition policy ──────────────────────────────────────────────

#[test]
fn criterion_8_partition_policy() {
    const NAME: &str = "partition policy";
    let canonical = partition_run(&[10.0, 10.0, 10.0, 30.0, 30.0], 30.0);
    let want = vec![vec![10.0, 10.0, 10.0], vec![30.0], vec![30.0]];
    if canonical != want {
        fail(8, NAME, &format!("canonical input split as {canonical:?}, want {want:?}"));
    }

    let mut rng8 = rng(801);
    let mut unique_inputs = 0u32;
    let mut agreements = 0u32;
    let mut first_gap: Option<String> = None;
    for _ in 0..1000 {
        let len = rng8.gen_range(1..=10usize);
        let times: Vec<i64> = (0..len).map(|_| rng8.gen_range(1..=40)).collect();
        let target = rng8.gen_range(10..=60i64);
        let float_times: Vec<f64> = times.iter().map(|&t| t as f64).collect();
        let greedy: Vec<Vec<i64>> = partition_run(&float_times, target as f64)
            .into_iter()
            .map(|group| group.into_iter().map(|t| t as i64).collect())
            .collect();

        let max_task = *times.iter().max().expect("nonempty");
        for group in &greedy {
            let subtotal: i64 = group.iter().sum();
            if subtotal > target + max_task {
                fail(
                    8,
                    NAME,
                    &format!(
                        "balance violated: times {times:?} target {target}: \
                         group {group:?} totals {subtotal} > {}",
                        target + max_task
                    ),
                );
            }
        }

        let (best_cost, winners) = exhaustive_partitions(&times, target);
        if winners.len() == 1 {
            unique_inputs += 1;
            if greedy == winners[0] {
                agreements += 1;
            } else if first_gap.is_none() {
                let greedy_cost: i64 =
                    greedy.iter().map(|g| (g.iter().sum::<i64>() - target).abs()).sum();
                first_gap = Some(format!(
                    "times {times:?} target {target}: greedy {greedy:?} (cost {greedy_cost}) \
                     vs unique optimum {:?} (cost {best_cost})",
                    winners[0],
                ));
            }
        }
    }
    if let Some(gap) = first_gap {
        fail(
            8,
            NAME,
            &format!(
                "one-pass greedy missed {} of {unique_inputs} unique-optimum inputs; first: {gap}",
                unique_inputs - agreements,
            ),
        );
    }
    pass(8, NAME);
}

// ── 9: round trips and determinism ───────────────────────────────────

fn pipeweld_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pipeweld"));
    cmd.env_remove("PIPEWELD_CONFIG");
    cmd
}

fn checked_run(cmd: &mut Command, what: &str) -> Vec<u8> {
    let out = cmd.output().unwrap_or_else(|e| fail(9, "round trips", &format!("{what}: {e}")));
    if !out.status.success() {
        fail(
            9,
            "round trips",
            &format!("{what} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
        );
    }
    out.stdout
}

/// Run analyze -> plan -> report in a fresh directory and collect every
/// produced byte stream.
fn fixture_pipeline_bytes() -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().expect("temp dir");
    let ir = dir.path().join("ir.json");
    let manifest = dir.path().join("plan.json");
    let config = fixture("pipeweld.toml");
    let trace = fixture("case_study_trace.json");
    let modules = fixture("hw_modules.json");

    checked_run(
        pipeweld_cmd().arg("--config").arg(&config).arg("analyze").arg(&trace).arg(&ir),
        "analyze",
    );
    checked_run(
        pipeweld_cmd()
            .arg("--config")
            .arg(&config)
            .arg("plan")
            .arg(&ir)
            .arg(&modules)
            .arg(&manifest),
        "plan",
    );
    let report_json =
        checked_run(pipeweld_cmd().arg("report").arg(&manifest).args(["--format", "json"]), "report json");
    let report_dot =
        checked_run(pipeweld_cmd().arg("report").arg(&ir).args(["--format", "dot"]), "report dot");

    vec![
        std::fs::read(&ir).expect("ir written"),
        std::fs::read(&manifest).expect("manifest written"),
        report_json,
        report_dot,
    ]
}

#[test]
fn criterion_9_round_trips_and_determinism() {
    const NAME: &str = "round trips";
    let mut rng9 = rng(901);
    for round in 0..200 {
        let graph = random_graph(&mut rng9);
        let text = graph.to_ir_json();
        let back = FlowGraph::from_ir_json(&text)
            .unwrap_or_else(|e| fail(9, NAME, &format!("graph round {round}: {e}")));
        if back != graph {
            fail(9, NAME, &format!("graph round {round}: parsed graph differs"));
        }
        if back.to_ir_json() != text {
            fail(9, NAME, &format!("graph round {round}: reserialized bytes differ"));
        }
    }
    for round in 0..200 {
        let mut plan = random_exec_plan(&mut rng9);
        for stage in &mut plan.stages {
            for task in &mut stage.tasks {
                if rng9.gen_bool(0.5) {
                    task.trace_time_ms = Some(rng9.gen_range(0.1..500.0));
                }
            }
        }
        plan.hw_resources = ResourceVector::new(
            rng9.gen_range(0..300),
            rng9.gen_range(0..300),
            rng9.gen_range(0..100_000),
            rng9.gen_range(0..100_000),
        );
        plan.utilization = Utilization {
            bram: rng9.gen_range(0.0..100.0),
            dsp: rng9.gen_range(0.0..100.0),
            ff: rng9.gen_range(0.0..100.0),
            lut: rng9.gen_range(0.0..100.0),
        };
        let text = plan.to_manifest_json();
        let back = PipelinePlan::from_manifest_json(&text)
            .unwrap_or_else(|e| fail(9, NAME, &format!("manifest round {round}: {e}")));
        if back != plan {
            fail(9, NAME, &format!("manifest round {round}: parsed plan differs"));
        }
        if back.to_manifest_json() != text {
            fail(9, NAME, &format!("manifest round {round}: reserialized bytes differ"));
        }
    }

    let first = fixture_pipeline_bytes();
    let second = fixture_pipeline_bytes();
    let outputs = ["ir.json", "plan.json", "report --format json", "report --format dot"];
    for ((a, b), what) in first.iter().zip(&second).zip(outputs) {
        if a != b {
            fail(9, NAME, &format!("{what} differed between two identical runs"));
        }
    }
    pass(9, NAME);
}
