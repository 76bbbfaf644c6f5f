//! Deterministic discrete-event throughput prediction for pipeline plans.
//!
//! The simulator advances virtual time under the executor's scheduling
//! contract: stages are capacity-one lanes, serial stages release tokens
//! in index order, idle workers drain later stages before admitting new
//! tokens, and at most `token_cap` tokens are in flight. Hardware stages
//! hold a worker for their full duration by default; the non-blocking
//! mode charges only a configurable poll overhead instead.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::jsonio;
use crate::planner::{PipelinePlan, StageKind, StageMode};

/// Predicted timing for a run of `n_tokens` tokens on `workers` workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_tokens: usize,
    pub workers: usize,
    pub makespan_ms: f64,
    pub steady_interval_ms: f64,
    pub first_token_latency_ms: f64,
    pub per_stage_busy_ms: Vec<f64>,
    pub speedup: f64,
}

impl SimReport {
    /// Deterministic JSON rendering with sorted keys.
    pub fn to_json(&self) -> String {
        jsonio::to_sorted_pretty(self)
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Hardware stages release their worker while the device runs.
    pub hw_nonblocking: bool,
    /// Worker time charged per hardware job in non-blocking mode.
    pub hw_poll_overhead_ms: f64,
}

impl Default for SimOptions {
    fn default() -> SimOptions {
        SimOptions { hw_nonblocking: false, hw_poll_overhead_ms: 0.0 }
    }
}

/// `max(max_i t_i, sum_i t_i / workers)`: the per-token interval a pipeline
/// can reach once neither a single stage nor total work per worker binds.
pub fn closed_form_interval(stage_times: &[f64], workers: usize) -> f64 {
    assert!(workers >= 1, "closed_form_interval needs at least one worker");
    let longest = stage_times.iter().copied().fold(0.0f64, f64::max);
    let total: f64 = stage_times.iter().sum();
    longest.max(total / workers as f64)
}

pub fn simulate(plan: &PipelinePlan, n_tokens: usize, workers: usize) -> SimReport {
    simulate_with(plan, n_tokens, workers, &SimOptions::default())
}

pub fn simulate_with(
    plan: &PipelinePlan,
    n_tokens: usize,
    workers: usize,
    opts: &SimOptions,
) -> SimReport {
    assert!(n_tokens >= 1, "simulate needs at least one token");
    assert!(workers >= 1, "simulate needs at least one worker");

    let stages = plan.stages.len();
    if stages == 0 {
        return SimReport {
            n_tokens,
            workers,
            makespan_ms: 0.0,
            steady_interval_ms: 0.0,
            first_token_latency_ms: 0.0,
            per_stage_busy_ms: Vec::new(),
            speedup: 0.0,
        };
    }

    let mut sim = Sim {
        durations: plan.stages.iter().map(|s| s.est_time_ms).collect(),
        serial: plan.stages.iter().map(|s| s.mode == StageMode::SerialInOrder).collect(),
        hw: plan.stages.iter().map(|s| s.kind == StageKind::Hw).collect(),
        cap: (plan.token_cap as usize).max(1),
        total: n_tokens,
        ready: vec![BTreeSet::new(); stages],
        next_admit: 0,
        in_flight: 0,
        busy: vec![false; stages],
        next_serial: vec![0; stages],
        free_workers: workers,
        completed: 0,
        completions: vec![0.0; n_tokens],
        busy_ms: vec![0.0; stages],
    };

    let mut heap: BinaryHeap<std::cmp::Reverse<Event>> = BinaryHeap::new();
    let mut now = 0.0f64;
    loop {
        // Start everything startable at the current instant.
        while sim.free_workers > 0 {
            let Some((token, stage)) = sim.take_work() else { break };
            let dur = sim.durations[stage];
            sim.busy_ms[stage] += dur;
            sim.free_workers -= 1;
            heap.push(std::cmp::Reverse(Event {
                at: now + dur,
                kind: EventKind::StageDone,
                stage,
                token,
            }));
            if opts.hw_nonblocking && sim.hw[stage] {
                let hold = opts.hw_poll_overhead_ms.clamp(0.0, dur);
                heap.push(std::cmp::Reverse(Event {
                    at: now + hold,
                    kind: EventKind::WorkerFree,
                    stage,
                    token,
                }));
            }
        }
        if sim.completed == sim.total {
            break;
        }

        // Advance to the next event and apply everything due then. Applying
        // the whole batch before assigning again keeps simultaneous
        // completions from stealing each other's successors.
        let head = heap.peek().expect("simulation stalled with tokens outstanding").0;
        now = head.at;
        while let Some(&std::cmp::Reverse(ev)) = heap.peek() {
            if ev.at > now {
                break;
            }
            heap.pop();
            sim.apply(ev, opts);
        }
    }

    let mut order = sim.completions.clone();
    order.sort_by(f64::total_cmp);
    let makespan_ms = *order.last().unwrap();
    let steady_interval_ms = if n_tokens == 1 {
        order[0]
    } else {
        let gaps: Vec<f64> = order.windows(2).map(|w| w[1] - w[0]).collect();
        let window = n_tokens.div_ceil(2).min(gaps.len());
        gaps[gaps.len() - window..].iter().sum::<f64>() / window as f64
    };
    let speedup = if steady_interval_ms > 0.0 {
        plan.sequential_baseline_ms / steady_interval_ms
    } else {
        0.0
    };
    SimReport {
        n_tokens,
        workers,
        makespan_ms,
        steady_interval_ms,
        first_token_latency_ms: sim.completions[0],
        per_stage_busy_ms: sim.busy_ms,
        speedup,
    }
}

// ── Event machinery ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    at: f64,
    kind: EventKind,
    stage: usize,
    token: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    StageDone,
    WorkerFree,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Event) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then_with(|| self.kind.cmp(&other.kind))
            .then_with(|| self.stage.cmp(&other.stage))
            .then_with(|| self.token.cmp(&other.token))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Event) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Sim {
    durations: Vec<f64>,
    serial: Vec<bool>,
    hw: Vec<bool>,
    cap: usize,
    total: usize,
    ready: Vec<BTreeSet<usize>>,
    next_admit: usize,
    in_flight: usize,
    busy: Vec<bool>,
    next_serial: Vec<usize>,
    free_workers: usize,
    completed: usize,
    completions: Vec<f64>,
    busy_ms: Vec<f64>,
}

impl Sim {
    /// Same policy as the executor: later stages first, oldest eligible
    /// token per stage, fresh admissions last.
    fn take_work(&mut self) -> Option<(usize, usize)> {
        for stage in (0..self.durations.len()).rev() {
            if self.busy[stage] {
                continue;
            }
            let pick = if self.serial[stage] {
                let want = self.next_serial[stage];
                self.ready[stage].contains(&want).then_some(want)
            } else {
                self.ready[stage].first().copied()
            };
            if let Some(token) = pick {
                self.ready[stage].remove(&token);
                self.busy[stage] = true;
                return Some((token, stage));
            }
        }
        if self.next_admit < self.total && self.in_flight < self.cap && !self.busy[0] {
            let token = self.next_admit;
            self.next_admit += 1;
            self.in_flight += 1;
            self.busy[0] = true;
            return Some((token, 0));
        }
        None
    }

    fn apply(&mut self, ev: Event, opts: &SimOptions) {
        match ev.kind {
            EventKind::StageDone => {
                self.busy[ev.stage] = false;
                if self.serial[ev.stage] {
                    self.next_serial[ev.stage] += 1;
                }
                if !(opts.hw_nonblocking && self.hw[ev.stage]) {
                    self.free_workers += 1;
                }
                if ev.stage + 1 == self.durations.len() {
                    self.completions[ev.token] = ev.at;
                    self.completed += 1;
                    self.in_flight -= 1;
                } else {
                    self.ready[ev.stage + 1].insert(ev.token);
                }
            }
            EventKind::WorkerFree => self.free_workers += 1,
        }
    }
}

// ── Report rendering ───────────────────────────────────────────────────

/// A processing-time comparison table plus the headline throughput
/// numbers, byte-deterministic for a given report and plan.
pub fn report_text(report: &SimReport, plan: &PipelinePlan) -> String {
    let name_width = plan
        .stages
        .iter()
        .flat_map(|s| &s.tasks)
        .map(|t| t.name.len())
        .chain(std::iter::once("Function".len()))
        .max()
        .unwrap();
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>10}  {:>10}  Running on\n",
        "Function", "Original", "Pipelined"
    ));
    let mut original_total = 0.0;
    let mut pipelined_total = 0.0;
    for stage in &plan.stages {
        let target = match stage.kind {
            StageKind::Hw => "FPGA",
            StageKind::Sw => "CPU",
        };
        for task in &stage.tasks {
            let original = task.trace_time_ms.unwrap_or(task.est_time_ms);
            original_total += original;
            pipelined_total += task.est_time_ms;
            out.push_str(&format!(
                "{:<name_width$}  {:>10.1}  {:>10.1}  {} (stage {})\n",
                task.name, original, task.est_time_ms, target, stage.index
            ));
        }
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>10.1}  {:>10.1}\n\n",
        "Total", original_total, pipelined_total
    ));
    out.push_str(&format!(
        "Tokens: {}   Workers: {}   Makespan: {:.1} ms\n",
        report.n_tokens, report.workers, report.makespan_ms
    ));
    out.push_str(&format!(
        "Steady-state interval: {:.1} ms per token\n",
        report.steady_interval_ms
    ));
    out.push_str(&format!("Speed-up x{:.2}\n", report.speedup));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwdb::{DeviceBudget, ResourceVector};
    use crate::planner::{Stage, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plan_mixed(spec: &[(f64, StageKind)]) -> PipelinePlan {
        let n = spec.len();
        let stages: Vec<Stage> = spec
            .iter()
            .enumerate()
            .map(|(i, &(t, kind))| Stage {
                index: i as u32,
                mode: if i == 0 || i + 1 == n {
                    StageMode::SerialInOrder
                } else {
                    StageMode::Parallel
                },
                kind,
                tasks: vec![Task {
                    name: format!("t{i}"),
                    est_time_ms: t,
                    port_width_bits: None,
                    trace_time_ms: None,
                }],
                est_time_ms: t,
            })
            .collect();
        PipelinePlan {
            threads: 2,
            token_cap: n as u32 + 1,
            sequential_baseline_ms: spec.iter().map(|s| s.0).sum(),
            stages,
            hw_resources: ResourceVector::default(),
            utilization: DeviceBudget::default().utilization(ResourceVector::default()),
        }
    }

    fn plan_of(times: &[f64]) -> PipelinePlan {
        let spec: Vec<(f64, StageKind)> = times.iter().map(|&t| (t, StageKind::Sw)).collect();
        plan_mixed(&spec)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn single_stage_five_tokens_one_worker() {
        let report = simulate(&plan_of(&[10.0]), 5, 1);
        assert_eq!(report.makespan_ms, 50.0);
        assert_eq!(report.steady_interval_ms, 10.0);
        assert_eq!(report.first_token_latency_ms, 10.0);
        assert_eq!(report.per_stage_busy_ms, vec![50.0]);
    }

    #[test]
    fn one_worker_serializes_everything() {
        let report = simulate(&plan_of(&[3.0, 7.0, 5.0]), 4, 1);
        assert_eq!(report.makespan_ms, 4.0 * 15.0);
        assert_eq!(report.steady_interval_ms, 15.0);
    }

    #[test]
    fn single_token_interval_equals_latency() {
        let report = simulate(&plan_of(&[4.0, 6.0, 2.0]), 1, 3);
        assert_eq!(report.steady_interval_ms, report.first_token_latency_ms);
        assert_eq!(report.makespan_ms, 12.0);
    }

    #[test]
    fn closed_form_examples() {
        assert!(close(closed_form_interval(&[39.8, 13.6, 80.2, 13.2], 2), 80.2, 1e-9));
        assert_eq!(closed_form_interval(&[10.0, 10.0, 10.0], 1), 30.0);
        assert_eq!(closed_form_interval(&[50.0], 8), 50.0);
    }

    #[test]
    fn worker_bound_plans_reach_the_average() {
        let report = simulate(&plan_of(&[10.0, 10.0, 10.0]), 64, 2);
        assert!(close(report.steady_interval_ms, 15.0, 0.15), "{}", report.steady_interval_ms);
    }

    #[test]
    fn case_study_interval_and_speedup() {
        let mut plan = plan_of(&[39.8, 13.6, 80.2, 13.2]);
        plan.sequential_baseline_ms = 1371.1;
        let report = simulate(&plan, 100, 2);
        assert!(close(report.steady_interval_ms, 80.2, 0.5), "{}", report.steady_interval_ms);
        assert!(close(report.speedup, 17.10, 0.15), "{}", report.speedup);
        assert!(report.makespan_ms >= 100.0 * 80.2 - 160.0);
    }

    #[test]
    fn matches_closed_form_on_random_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for round in 0..60 {
            let stages = rng.gen_range(1..=8);
            let times: Vec<f64> =
                (0..stages).map(|_| rng.gen_range(1.0..=100.0)).collect();
            let workers = rng.gen_range(2..=4);
            let mut plan = plan_of(&times);
            plan.token_cap = stages as u32 + rng.gen_range(0..=2);
            let n = (120 * stages).max(400);
            let report = simulate(&plan, n, workers);
            let ideal = closed_form_interval(&times, workers);
            let rel = (report.steady_interval_ms - ideal).abs() / ideal;
            assert!(
                rel <= 0.01,
                "round {round}: {} vs {ideal} ({:.3}%) for {times:?} workers {workers}",
                report.steady_interval_ms,
                rel * 100.0
            );
        }
    }

    #[test]
    fn longer_stages_never_speed_it_up() {
        let base = vec![20.0, 30.0, 10.0];
        let before = simulate(&plan_of(&base), 200, 2).steady_interval_ms;
        for bump in 0..base.len() {
            let mut times = base.clone();
            times[bump] += 15.0;
            let after = simulate(&plan_of(&times), 200, 2).steady_interval_ms;
            assert!(after >= before - 1e-9, "bumping stage {bump}: {after} < {before}");
        }
    }

    #[test]
    fn extra_workers_never_slow_it_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let stages = rng.gen_range(1..=6);
            let times: Vec<f64> =
                (0..stages).map(|_| rng.gen_range(1.0..=100.0)).collect();
            let plan = plan_of(&times);
            let mut last = f64::INFINITY;
            for workers in 1..=4 {
                let interval = simulate(&plan, 200, workers).steady_interval_ms;
                assert!(interval <= last + 1e-9, "workers {workers}: {interval} > {last}");
                last = interval;
            }
        }
    }

    #[test]
    fn nonblocking_hardware_frees_the_worker() {
        let plan = plan_mixed(&[
            (10.0, StageKind::Sw),
            (50.0, StageKind::Hw),
            (10.0, StageKind::Sw),
        ]);
        let blocking = simulate(&plan, 100, 1);
        assert!(close(blocking.steady_interval_ms, 70.0, 0.5), "{}", blocking.steady_interval_ms);
        // One worker: the drain-first policy finishes the 10 ms tail stage
        // before restarting the device, so the cycle is 50 + 10 ms.
        let opts = SimOptions { hw_nonblocking: true, hw_poll_overhead_ms: 0.0 };
        let offloaded = simulate_with(&plan, 100, 1, &opts);
        assert!(close(offloaded.steady_interval_ms, 60.0, 0.5), "{}", offloaded.steady_interval_ms);
        // A second worker restarts the device the moment it finishes.
        let offloaded = simulate_with(&plan, 100, 2, &opts);
        assert!(close(offloaded.steady_interval_ms, 50.0, 0.5), "{}", offloaded.steady_interval_ms);
    }

    #[test]
    fn reports_are_deterministic() {
        let plan = plan_of(&[12.5, 40.0, 7.25]);
        let a = simulate(&plan, 150, 3);
        let b = simulate(&plan, 150, 3);
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(report_text(&a, &plan), report_text(&b, &plan));
    }

    #[test]
    fn empty_plan_reports_zeros() {
        let report = simulate(&plan_of(&[]), 3, 2);
        assert_eq!(report.makespan_ms, 0.0);
        assert_eq!(report.speedup, 0.0);
    }

    #[test]
    fn report_text_mirrors_the_plan() {
        let mut plan = plan_mixed(&[
            (39.7, StageKind::Hw),
            (13.4, StageKind::Hw),
            (108.0, StageKind::Sw),
            (13.0, StageKind::Hw),
        ]);
        plan.stages[0].tasks[0].name = "cvtColor".into();
        plan.stages[0].tasks[0].trace_time_ms = Some(46.3);
        plan.stages[2].tasks[0].name = "normalize".into();
        plan.sequential_baseline_ms = 1371.1;
        let report = simulate(&plan, 100, 2);
        let text = report_text(&report, &plan);
        assert!(text.contains("cvtColor"));
        assert!(text.contains("46.3"));
        assert!(text.contains("FPGA (stage 0)"));
        assert!(text.contains("CPU (stage 2)"));
        assert!(text.contains("Total"));
        assert!(text.ends_with('\n'));
        let speedup_line = text.lines().last().unwrap();
        assert!(speedup_line.starts_with("Speed-up x"), "{speedup_line}");
    }

    #[test]
    #[should_panic(expected = "at least one token")]
    fn zero_tokens_are_rejected() {
        simulate(&plan_of(&[10.0]), 0, 1);
    }

    #[test]
    #[should_panic(expected = "at least one worker")]
    fn zero_workers_are_rejected() {
        simulate(&plan_of(&[10.0]), 5, 0);
    }
}
