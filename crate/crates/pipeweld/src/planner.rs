//! Balanced stage partitioning and plan construction.
//!
//! The planner turns a linear [`FlowGraph`] plus a [`ModuleDb`] into a
//! [`PipelinePlan`]: every function becomes a software or hardware task,
//! hardware chains are considered for fusion, software runs are grouped so
//! each stage's time lands near `total / (threads + 1)`, and the first and
//! last stages run serially in token order while interior stages run in
//! parallel. The plan round-trips through a deterministic JSON manifest.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowgraph::{DataDescriptor, FlowGraph, FunctionNode, Placement};
use crate::hwdb::{
    sum_resources, BudgetCheck, DbError, DeviceBudget, FuseDecision, HwModuleDescriptor, ModuleDb,
    ResourceVector, Utilization,
};
use crate::jsonio;

// ── Errors ───────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("graph is not a linear chain at \"{node}\" ({detail}); edit the IR to remove branches or exclude functions")]
    NotLinear { node: String, detail: String },
    #[error("\"{node}\" is forced to hardware but the module database has no entry for it")]
    NoHardwareFor { node: String },
    #[error("threads must be >= 1")]
    ZeroThreads,
    #[error("total estimated time must be positive")]
    NonPositiveTotal,
    #[error("\"{node}\" has a non-positive time estimate; exclude it or fix its timing")]
    NonPositiveTime { node: String },
    #[error("plan exceeds the device budget: {0}")]
    BudgetOverflow(String),
    #[error("malformed plan manifest: {0}")]
    MalformedManifest(#[source] serde_json::Error),
    #[error("invalid plan manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Db(#[from] DbError),
}

// ── Plan data model ──────────────────────────────────────────────────

/// How a stage consumes tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// One token at a time, in strict token-index order.
    SerialInOrder,
    /// Any ready token, concurrently with other stages.
    Parallel,
}

impl fmt::Display for StageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageMode::SerialInOrder => "serial_in_order",
            StageMode::Parallel => "parallel",
        })
    }
}

/// Whether a stage runs software kernels or drives a hardware module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Sw,
    Hw,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Sw => "sw",
            StageKind::Hw => "hw",
        })
    }
}

/// One unit of work inside a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Function name; fused hardware tasks join their parts with `+`.
    pub name: String,
    pub est_time_ms: f64,
    /// Stream port width for hardware tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port_width_bits: Option<u32>,
    /// Measured time of the function in the original trace, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_time_ms: Option<f64>,
}

/// A pipeline stage: ordered tasks sharing one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: u32,
    pub mode: StageMode,
    pub kind: StageKind,
    pub tasks: Vec<Task>,
    /// Sum of task estimates.
    pub est_time_ms: f64,
}

/// The complete plan; serializes to the JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub threads: u32,
    pub token_cap: u32,
    /// Total measured time of the original trace, per token.
    pub sequential_baseline_ms: f64,
    pub stages: Vec<Stage>,
    #[serde(rename = "resources")]
    pub hw_resources: ResourceVector,
    #[serde(rename = "utilization_pct")]
    pub utilization: Utilization,
}

impl PipelinePlan {
    pub fn total_est_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.est_time_ms).sum()
    }

    pub fn stage_times(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.est_time_ms).collect()
    }

    /// Serialize as the deterministic JSON manifest.
    pub fn to_manifest_json(&self) -> String {
        jsonio::to_sorted_pretty(self)
    }

    /// Parse and validate a manifest.
    pub fn from_manifest_json(text: &str) -> Result<PipelinePlan, PlanError> {
        let plan: PipelinePlan =
            serde_json::from_str(text).map_err(PlanError::MalformedManifest)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Human-readable outline: one block per stage with task estimates,
    /// hardware port widths, and the per-stage device API names.
    pub fn outline(&self) -> String {
        let mut out = format!(
            "Pipeline plan: {} stage{}, {} thread{}, token cap {}\n",
            self.stages.len(),
            plural(self.stages.len()),
            self.threads,
            plural(self.threads as usize),
            self.token_cap
        );
        for stage in &self.stages {
            out.push_str(&format!(
                "  Stage {}  {:<15}  {}  {:.1} ms\n",
                stage.index, stage.mode, stage.kind, stage.est_time_ms
            ));
            for task in &stage.tasks {
                out.push_str(&format!("    {}  est {:.1} ms", task.name, task.est_time_ms));
                if let Some(bits) = task.port_width_bits {
                    out.push_str(&format!("  port {bits} bits"));
                }
                if stage.kind == StageKind::Hw {
                    out.push_str(&format!("  Xh{0}_Start/Xh{0}_IsDone", stage.index));
                }
                out.push('\n');
            }
        }
        out.push_str(&format!(
            "Total estimated: {:.1} ms; sequential baseline: {:.1} ms\n",
            self.total_est_ms(),
            self.sequential_baseline_ms
        ));
        out.push_str(&format!("Resources: {}\n", self.hw_resources));
        out.push_str(&format!(
            "Utilization: bram {:.1}%, dsp {:.1}%, ff {:.1}%, lut {:.1}%\n",
            self.utilization.bram, self.utilization.dsp, self.utilization.ff, self.utilization.lut
        ));
        out
    }

    /// Structural checks shared by the builder and the manifest parser.
    pub fn validate(&self) -> Result<(), PlanError> {
        let invalid = |msg: String| Err(PlanError::InvalidManifest(msg));
        if self.threads == 0 {
            return invalid("threads must be >= 1".into());
        }
        if self.token_cap == 0 {
            return invalid("token_cap must be >= 1".into());
        }
        let n = self.stages.len();
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.index as usize != i {
                return invalid(format!("stage {i} carries index {}", stage.index));
            }
            if stage.tasks.is_empty() {
                return invalid(format!("stage {i} has no tasks"));
            }
            let expected_mode = if i == 0 || i + 1 == n {
                StageMode::SerialInOrder
            } else {
                StageMode::Parallel
            };
            if stage.mode != expected_mode {
                return invalid(format!("stage {i} must be {expected_mode}"));
            }
            let sum: f64 = stage.tasks.iter().map(|t| t.est_time_ms).sum();
            if (sum - stage.est_time_ms).abs() > 1e-9 {
                return invalid(format!(
                    "stage {i} est_time_ms {} does not match task sum {sum}",
                    stage.est_time_ms
                ));
            }
            for task in &stage.tasks {
                if !task.est_time_ms.is_finite() || task.est_time_ms <= 0.0 {
                    return invalid(format!(
                        "task \"{}\" in stage {i} has non-positive est_time_ms",
                        task.name
                    ));
                }
            }
        }
        Ok(())
    }
}

fn plural(n: usize) -> &'static str {
    if n == 1 {
        ""
    } else {
        "s"
    }
}

// ── Target and partitioning ──────────────────────────────────────────

/// Per-stage time target: `total_ms / (threads + 1)`.
pub fn compute_target_ms(total_ms: f64, threads: u32) -> Result<f64, PlanError> {
    if threads == 0 {
        return Err(PlanError::ZeroThreads);
    }
    if !total_ms.is_finite() || total_ms <= 0.0 {
        return Err(PlanError::NonPositiveTotal);
    }
    Ok(total_ms / f64::from(threads + 1))
}

/// Greedy left-to-right grouping toward the target: the current group is
/// closed before adding the next time `t` whenever doing so would move the
/// subtotal further from the target (`|acc + t - target| > |acc - target|`);
/// on a tie `t` is added, preferring fewer, larger stages.
pub fn partition_run(times: &[f64], target_ms: f64) -> Vec<Vec<f64>> {
    partition_groups(times, target_ms)
        .into_iter()
        .map(|r| times[r].to_vec())
        .collect()
}

fn partition_groups(times: &[f64], target: f64) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0usize;
    let mut acc = 0.0f64;
    for (i, &t) in times.iter().enumerate() {
        if i > start && (acc + t - target).abs() > (acc - target).abs() {
            groups.push(start..i);
            start = i;
            acc = 0.0;
        }
        acc += t;
    }
    if start < times.len() {
        groups.push(start..times.len());
    }
    groups
}

// ── Kind assignment and forced runs ──────────────────────────────────

/// A maximal run of consecutive functions sharing one kind; stage
/// boundaries are forced at every software/hardware transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub kind: StageKind,
    /// Function node ids, in chain order.
    pub functions: Vec<String>,
}

/// Group the chain into same-kind runs. Placement overrides win over
/// database lookups; a function forced to hardware without a database
/// entry is an error.
pub fn forced_runs(graph: &FlowGraph, db: &ModuleDb) -> Result<Vec<Run>, PlanError> {
    ensure_linear(graph)?;
    let mut runs: Vec<Run> = Vec::new();
    for f in &graph.functions {
        let kind = binding_for(f, db)?.0;
        match runs.last_mut() {
            Some(run) if run.kind == kind => run.functions.push(f.id.clone()),
            _ => runs.push(Run { kind, functions: vec![f.id.clone()] }),
        }
    }
    Ok(runs)
}

fn binding_for<'db>(
    f: &FunctionNode,
    db: &'db ModuleDb,
) -> Result<(StageKind, Option<&'db HwModuleDescriptor>), PlanError> {
    if f.placement == Placement::ForceCpu {
        return Ok((StageKind::Sw, None));
    }
    match db.lookup(&f.name) {
        Some(desc) => Ok((StageKind::Hw, Some(desc))),
        None if f.placement == Placement::ForceFpga => {
            Err(PlanError::NoHardwareFor { node: f.id.clone() })
        }
        None => Ok((StageKind::Sw, None)),
    }
}

/// The planner handles linear chains: every function one input, at most
/// one output, each intermediate value consumed by exactly the next
/// function.
fn ensure_linear(graph: &FlowGraph) -> Result<(), PlanError> {
    let not_linear = |f: &FunctionNode, detail: String| {
        Err(PlanError::NotLinear { node: f.id.clone(), detail })
    };
    for (i, f) in graph.functions.iter().enumerate() {
        if f.inputs.len() != 1 {
            return not_linear(f, format!("{} inputs, expected 1", f.inputs.len()));
        }
        if f.outputs.len() > 1 {
            return not_linear(f, format!("{} outputs, expected at most 1", f.outputs.len()));
        }
        if i + 1 < graph.functions.len() {
            let next = &graph.functions[i + 1];
            let Some(out) = f.outputs.first() else {
                return not_linear(f, "no output to feed the next function".into());
            };
            let consumers = graph.consumers_of(out);
            if consumers.len() != 1 {
                return not_linear(
                    f,
                    format!("output \"{out}\" has {} consumers, expected 1", consumers.len()),
                );
            }
            if consumers[0].id != next.id {
                return not_linear(
                    f,
                    format!("output \"{out}\" feeds \"{}\", not the next function", consumers[0].id),
                );
            }
        }
    }
    Ok(())
}

// ── Plan construction ────────────────────────────────────────────────

/// Builder inputs beyond the graph and database.
#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub threads: u32,
    /// In-flight token limit; defaults to stage count + 1.
    pub token_cap: Option<u32>,
    pub budget: DeviceBudget,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { threads: 2, token_cap: None, budget: DeviceBudget::default() }
    }
}

/// A built plan plus the decisions that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PipelinePlan,
    pub target_ms: f64,
    pub fusion: Vec<FusionRecord>,
}

/// One fusion trial: the chain of function ids and its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRecord {
    pub chain: Vec<String>,
    pub decision: FuseDecision,
}

/// Build the balanced mixed software/hardware plan.
pub fn build_plan(
    graph: &FlowGraph,
    db: &ModuleDb,
    config: &PlanConfig,
) -> Result<PlanOutcome, PlanError> {
    if config.threads == 0 {
        return Err(PlanError::ZeroThreads);
    }
    if graph.functions.is_empty() {
        let plan = PipelinePlan {
            threads: config.threads,
            token_cap: config.token_cap.unwrap_or(1).max(1),
            sequential_baseline_ms: 0.0,
            stages: Vec::new(),
            hw_resources: ResourceVector::default(),
            utilization: config.budget.utilization(ResourceVector::default()),
        };
        return Ok(PlanOutcome { plan, target_ms: 0.0, fusion: Vec::new() });
    }

    let runs = forced_runs(graph, db)?;

    // Per-function estimate: hardware from the cost model at the input
    // frame, software from the trace.
    let mut est = std::collections::HashMap::new();
    for f in &graph.functions {
        let (kind, desc) = binding_for(f, db)?;
        let ms = match (kind, desc) {
            (StageKind::Hw, Some(desc)) => desc.estimate_time_ms(frame_for(graph, f)),
            _ => f.duration_ms(),
        };
        if !ms.is_finite() || ms <= 0.0 {
            return Err(PlanError::NonPositiveTime { node: f.id.clone() });
        }
        est.insert(f.id.clone(), ms);
    }
    let total_est: f64 = est.values().sum();
    let target_ms = compute_target_ms(total_est, config.threads)?;

    // Turn runs into task groups: one stage per group.
    let mut groups: Vec<(StageKind, Vec<Task>)> = Vec::new();
    let mut hw_descs: Vec<HwModuleDescriptor> = Vec::new();
    let mut fusion = Vec::new();
    for run in &runs {
        match run.kind {
            StageKind::Hw if run.functions.len() >= 2 => {
                let chain: Vec<&str> = run.functions.iter().map(String::as_str).collect();
                let decision = db.try_fuse(&chain, graph, target_ms)?;
                fusion.push(FusionRecord { chain: run.functions.clone(), decision: decision.clone() });
                match decision {
                    FuseDecision::Accept(desc) => {
                        let first = graph.function(&run.functions[0]).expect("run ids exist");
                        let frame = frame_for(graph, first);
                        let trace_sum: f64 = run
                            .functions
                            .iter()
                            .map(|id| graph.function(id).expect("run ids exist").duration_ms())
                            .sum();
                        groups.push((
                            StageKind::Hw,
                            vec![Task {
                                name: desc.sw_name.clone(),
                                est_time_ms: desc.estimate_time_ms(frame),
                                port_width_bits: Some(frame.port_width_bits()),
                                trace_time_ms: Some(trace_sum),
                            }],
                        ));
                        hw_descs.push(*desc);
                    }
                    FuseDecision::Reject(_) => {
                        for id in &run.functions {
                            let (task, desc) = hw_task(graph, db, id, &est);
                            groups.push((StageKind::Hw, vec![task]));
                            hw_descs.push(desc);
                        }
                    }
                }
            }
            StageKind::Hw => {
                let (task, desc) = hw_task(graph, db, &run.functions[0], &est);
                groups.push((StageKind::Hw, vec![task]));
                hw_descs.push(desc);
            }
            StageKind::Sw => {
                let times: Vec<f64> = run.functions.iter().map(|id| est[id]).collect();
                for group in partition_groups(&times, target_ms) {
                    let tasks = run.functions[group]
                        .iter()
                        .map(|id| {
                            let f = graph.function(id).expect("run ids exist");
                            Task {
                                name: f.name.clone(),
                                est_time_ms: est[id],
                                port_width_bits: None,
                                trace_time_ms: Some(f.duration_ms()),
                            }
                        })
                        .collect();
                    groups.push((StageKind::Sw, tasks));
                }
            }
        }
    }

    let n = groups.len();
    let stages: Vec<Stage> = groups
        .into_iter()
        .enumerate()
        .map(|(i, (kind, tasks))| {
            let mode = if i == 0 || i + 1 == n {
                StageMode::SerialInOrder
            } else {
                StageMode::Parallel
            };
            let est_time_ms = tasks.iter().map(|t| t.est_time_ms).sum();
            Stage { index: i as u32, mode, kind, tasks, est_time_ms }
        })
        .collect();

    let hw_resources = sum_resources(hw_descs.iter());
    if let BudgetCheck::Overflow(components) = config.budget.check(hw_resources) {
        return Err(PlanError::BudgetOverflow(components.join(", ")));
    }

    let plan = PipelinePlan {
        threads: config.threads,
        token_cap: config.token_cap.unwrap_or(stages.len() as u32 + 1).max(1),
        sequential_baseline_ms: graph.total_time_ms(),
        stages,
        hw_resources,
        utilization: config.budget.utilization(hw_resources),
    };
    plan.validate()?;
    Ok(PlanOutcome { plan, target_ms, fusion })
}

fn hw_task(
    graph: &FlowGraph,
    db: &ModuleDb,
    id: &str,
    est: &std::collections::HashMap<String, f64>,
) -> (Task, HwModuleDescriptor) {
    let f = graph.function(id).expect("run ids exist");
    let desc = db.lookup(&f.name).expect("hardware runs come from successful lookups");
    let frame = frame_for(graph, f);
    let task = Task {
        name: f.name.clone(),
        est_time_ms: est[id],
        port_width_bits: Some(frame.port_width_bits()),
        trace_time_ms: Some(f.duration_ms()),
    };
    (task, desc.clone())
}

/// The frame a function processes: its input, falling back to its output
/// for sources.
fn frame_for<'g>(graph: &'g FlowGraph, f: &FunctionNode) -> &'g DataDescriptor {
    f.inputs
        .first()
        .or_else(|| f.outputs.first())
        .map(|d| &graph.data[d])
        .expect("linear-chain functions touch at least one data node")
}

// ── Tests ────────────────────────────────────────────────────────────
