//! Helpers shared by the integration test targets: fixture paths, plan
//! builders, byte-transform kernels, a sequential-composition oracle,
//! an exhaustive partition oracle, and seeded random generators.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use pipeweld::{
    DataDescriptor, FlowGraph, Frame, KernelRegistry, PipelinePlan, Placement, Stage, StageKind,
    StageMode, Task, TraceLog,
};

// ── Fixtures ─────────────────────────────────────────────────────────

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).expect("readable fixture")
}

/// The case-study flow graph: trace parsed with `imread` dropped.
pub fn case_study_graph() -> FlowGraph {
    let log = TraceLog::parse(&fixture_text("case_study_trace.json"))
        .expect("valid trace fixture")
        .without_functions(&["imread".to_string()]);
    FlowGraph::from_trace(&log).expect("valid case-study graph")
}

// ── Plan construction ────────────────────────────────────────────────

pub type OwnedStageSpec = (StageMode, StageKind, Vec<(String, f64)>);
pub type StageSpec<'a> = (StageMode, StageKind, &'a [(&'a str, f64)]);

pub fn build_plan_from(spec: Vec<OwnedStageSpec>, token_cap: u32) -> PipelinePlan {
    let stages = spec
        .into_iter()
        .enumerate()
        .map(|(index, (mode, kind, tasks))| {
            let tasks: Vec<Task> = tasks
                .into_iter()
                .map(|(name, ms)| Task {
                    name,
                    est_time_ms: ms,
                    port_width_bits: match kind {
                        StageKind::Hw => Some(8),
                        StageKind::Sw => None,
                    },
                    trace_time_ms: None,
                })
                .collect();
            let est_time_ms = tasks.iter().map(|t| t.est_time_ms).sum();
            Stage { index: index as u32, mode, kind, tasks, est_time_ms }
        })
        .collect::<Vec<_>>();
    let sequential_baseline_ms = stages.iter().map(|s| s.est_time_ms).sum();
    PipelinePlan {
        threads: 2,
        token_cap,
        sequential_baseline_ms,
        stages,
        hw_resources: Default::default(),
        utilization: Default::default(),
    }
}

pub fn make_plan(spec: &[StageSpec], token_cap: u32) -> PipelinePlan {
    let owned = spec
        .iter()
        .map(|(mode, kind, tasks)| {
            let tasks = tasks.iter().map(|(name, ms)| (name.to_string(), *ms)).collect();
            (*mode, *kind, tasks)
        })
        .collect();
    build_plan_from(owned, token_cap)
}

/// Stage modes for a linear pipeline: serial ends, parallel interior.
pub fn mode_for(index: usize, n_stages: usize) -> StageMode {
    if index == 0 || index + 1 == n_stages {
        StageMode::SerialInOrder
    } else {
        StageMode::Parallel
    }
}

/// A plan whose stages are single software tasks with the given times.
pub fn timed_plan(times: &[f64], token_cap: u32) -> PipelinePlan {
    let spec = times
        .iter()
        .enumerate()
        .map(|(i, &ms)| {
            (mode_for(i, times.len()), StageKind::Sw, vec![(format!("s{i}"), ms)])
        })
        .collect();
    build_plan_from(spec, token_cap)
}

// ── Byte-transform kernels ───────────────────────────────────────────

fn map_bytes(frame: &Frame, f: impl Fn(usize, u8, usize) -> u8) -> Frame {
    let len = frame.bytes().len();
    let bytes = frame.bytes().iter().enumerate().map(|(i, &b)| f(i, b, len)).collect();
    Frame::new(frame.descriptor(), bytes).expect("length preserved")
}

/// Kernels that transform raw bytes and keep the descriptor, so any
/// composition in any order is well-typed. `twist` and `ramp` do not
/// commute, which makes task ordering observable in the output.
pub fn byte_kernels() -> KernelRegistry {
    let mut reg = KernelRegistry::new();
    reg.register("inc", |f: &Frame| Ok(map_bytes(f, |_, b, _| b.wrapping_add(1))));
    reg.register("mask", |f: &Frame| Ok(map_bytes(f, |_, b, _| b ^ 0x5A)));
    reg.register("ramp", |f: &Frame| Ok(map_bytes(f, |i, b, _| b.wrapping_add(i as u8))));
    reg.register("twist", |f: &Frame| {
        let src = f.bytes().to_vec();
        Ok(map_bytes(f, |i, _, len| src[(i + 1) % len]))
    });
    reg
}

pub const BYTE_KERNEL_NAMES: [&str; 4] = ["inc", "mask", "ramp", "twist"];

// ── Sequential-composition oracle ────────────────────────────────────

/// Push each frame through every task of every stage in order, on one
/// thread. The pipeline must produce byte-identical frames.
pub fn sequential_oracle(
    plan: &PipelinePlan,
    inputs: &[Frame],
    registry: &KernelRegistry,
) -> Vec<Frame> {
    inputs
        .iter()
        .map(|frame| {
            let mut current = frame.clone();
            for stage in &plan.stages {
                for task in &stage.tasks {
                    for part in task.name.split('+') {
                        let kernel = registry.get(part).expect("oracle kernel registered");
                        current = kernel(&current).expect("oracle kernel succeeds");
                    }
                }
            }
            current
        })
        .collect()
}

// ── Exhaustive partition oracle ──────────────────────────────────────

/// Every contiguous partition of `times`, scored by total distance of
/// group subtotals from `target`. Returns the minimal cost and all
/// partitions achieving it. Integer times keep the scoring exact.
pub fn exhaustive_partitions(times: &[i64], target: i64) -> (i64, Vec<Vec<Vec<i64>>>) {
    assert!(!times.is_empty() && times.len() <= 16);
    let n = times.len();
    let mut best = i64::MAX;
    let mut winners: Vec<Vec<Vec<i64>>> = Vec::new();
    for mask in 0u32..(1 << (n - 1)) {
        let mut parts: Vec<Vec<i64>> = vec![vec![times[0]]];
        for (i, &t) in times.iter().enumerate().skip(1) {
            if mask & (1 << (i - 1)) != 0 {
                parts.push(Vec::new());
            }
            parts.last_mut().expect("nonempty").push(t);
        }
        let cost: i64 =
            parts.iter().map(|p| (p.iter().sum::<i64>() - target).abs()).sum();
        if cost < best {
            best = cost;
            winners.clear();
        }
        if cost == best {
            winners.push(parts);
        }
    }
    (best, winners)
}

// ── Seeded random generators ─────────────────────────────────────────

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const DESCRIPTOR_SHAPES: [(u32, u32); 6] = [(8, 1), (8, 3), (16, 1), (16, 3), (24, 1), (32, 1)];

pub fn random_descriptor(rng: &mut ChaCha8Rng) -> DataDescriptor {
    let (bit_depth, channels) = DESCRIPTOR_SHAPES[rng.gen_range(0..DESCRIPTOR_SHAPES.len())];
    DataDescriptor::new(rng.gen_range(1..=64), rng.gen_range(1..=64), bit_depth, channels)
        .expect("shape table is valid")
}

/// A random legal trace: events consume live or fresh external ids and
/// produce fresh ids, sometimes rewriting an id produced earlier (which
/// the graph versions). Function names repeat so `name#seq` ids occur.
pub fn random_graph(rng: &mut ChaCha8Rng) -> FlowGraph {
    const NAMES: [&str; 5] = ["load", "blur", "scale", "sum", "emit"];
    let n_events = rng.gen_range(1..=8);
    let mut events = Vec::new();
    let mut data = std::collections::BTreeMap::new();
    let mut live: Vec<String> = Vec::new();
    let mut produced: Vec<String> = Vec::new();
    let mut t = 0u64;
    let mut fresh = 0u32;
    for seq in 0..n_events {
        let mut inputs: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(1..=2usize) {
            let id = if !live.is_empty() && rng.gen_bool(0.7) {
                live[rng.gen_range(0..live.len())].clone()
            } else {
                fresh += 1;
                let id = format!("ext{fresh}");
                live.push(id.clone());
                id
            };
            if !inputs.contains(&id) {
                inputs.push(id);
            }
        }
        let mut outputs: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(1..=2usize) {
            let rewrite: Vec<String> = produced
                .iter()
                .filter(|id| !inputs.contains(id) && !outputs.contains(id))
                .cloned()
                .collect();
            let id = if !rewrite.is_empty() && rng.gen_bool(0.3) {
                rewrite[rng.gen_range(0..rewrite.len())].clone()
            } else {
                fresh += 1;
                format!("out{fresh}")
            };
            if !outputs.contains(&id) {
                outputs.push(id);
            }
        }
        for id in inputs.iter().chain(&outputs) {
            data.entry(id.clone()).or_insert_with(|| random_descriptor(rng));
        }
        for id in &outputs {
            if !live.contains(id) {
                live.push(id.clone());
            }
            if !produced.contains(id) {
                produced.push(id.clone());
            }
        }
        let start = t + rng.gen_range(0..100);
        let end = start + rng.gen_range(1..=50_000);
        t = end;
        events.push(pipeweld::TraceEvent {
            seq,
            function: NAMES[rng.gen_range(0..NAMES.len())].to_string(),
            t_start_us: start,
            t_end_us: end,
            inputs,
            outputs,
        });
    }
    let log = TraceLog { events, data };
    let mut graph = FlowGraph::from_trace(&log).expect("generated trace is legal");
    let ids: Vec<String> = graph.functions.iter().map(|f| f.id.clone()).collect();
    for id in ids {
        if rng.gen_bool(0.3) {
            let placement =
                if rng.gen_bool(0.5) { Placement::ForceCpu } else { Placement::ForceFpga };
            graph = graph.with_placement(&id, placement).expect("id from the graph");
        }
    }
    graph
}

/// A random linear pipeline plan over software byte kernels, shaped
/// like planner output: serial ends, parallel interior, hardware
/// stages hold exactly one task.
pub fn random_exec_plan(rng: &mut ChaCha8Rng) -> PipelinePlan {
    let n_stages = rng.gen_range(1..=5);
    let mut spec: Vec<OwnedStageSpec> = Vec::new();
    for index in 0..n_stages {
        let kind = if rng.gen_bool(0.3) { StageKind::Hw } else { StageKind::Sw };
        let n_tasks = match kind {
            StageKind::Hw => 1,
            StageKind::Sw => rng.gen_range(1..=3usize),
        };
        let tasks: Vec<(String, f64)> = (0..n_tasks)
            .map(|_| {
                let name = BYTE_KERNEL_NAMES[rng.gen_range(0..BYTE_KERNEL_NAMES.len())];
                (name.to_string(), rng.gen_range(0.0..0.3))
            })
            .collect();
        spec.push((mode_for(index, n_stages), kind, tasks));
    }
    let token_cap = rng.gen_range(2..=n_stages as u32 + 2);
    build_plan_from(spec, token_cap)
}

pub fn random_frames(rng: &mut ChaCha8Rng, count: usize) -> Vec<Frame> {
    let desc = DataDescriptor::new(
        rng.gen_range(4..=24),
        rng.gen_range(4..=24),
        8,
        1,
    )
    .expect("valid frame shape");
    (0..count)
        .map(|_| {
            let bytes = (0..desc.byte_size()).map(|_| rng.gen()).collect();
            Frame::new(desc, bytes).expect("sized to descriptor")
        })
        .collect()
}

// ── DOT edge extraction ──────────────────────────────────────────────

/// Edges `"a" -> "b";` from DOT text, in order of appearance.
pub fn parse_dot_edges(dot: &str) -> Vec<(String, String)> {
    dot.lines()
        .filter_map(|line| {
            let line = line.trim().strip_suffix(';')?;
            let (lhs, rhs) = line.split_once("->")?;
            let unquote = |s: &str| s.trim().trim_matches('"').to_string();
            Some((unquote(lhs), unquote(rhs)))
        })
        .collect()
}
