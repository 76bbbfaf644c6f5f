//! Trace-driven builder, executor, and performance model for mixed
//! software/hardware pipelines.
//!
//! `pipeweld` turns a recorded function-call trace of an application into a
//! balanced pipeline plan that mixes software functions on the CPU with
//! hardware modules on an FPGA-like device, then runs and evaluates that plan:
//!
//! - [`flowgraph`] ingests trace files, reconstructs the causal
//!   function/data graph, and holds the editable IR (placement overrides,
//!   JSON serialization, DOT rendering).
//! - [`hwdb`] holds the hardware-module database: per-function clock/cycle
//!   cost descriptors, port widths, fusion evaluation, and FPGA resource
//!   accounting against a device budget.
//! - [`planner`] partitions the graph into balanced stages, decides
//!   software vs hardware per function, and emits the plan manifest.
//! - [`executor`] runs a plan for real: a token-ordered pipeline over a
//!   worker pool with registered software kernels and simulated start/poll
//!   hardware devices.
//! - [`perfsim`] is a deterministic discrete-event model of the same
//!   runtime, predicting makespan, steady-state token interval, and speedup.
//! - [`cli`] wires everything into the `pipeweld` command-line tool.
//!
//! Each module is usable on its own; the `examples/` directory contains one
//! runnable example per capability.

pub mod cli;
pub mod executor;
pub mod flowgraph;
pub mod hwdb;
mod jsonio;
pub mod perfsim;
pub mod planner;

pub use executor::{
    builtin_kernels, device_name, run_pipeline, DeviceSet, ExecError, ExecOptions, Frame,
    KernelRegistry, RunOutput, RunStats, SimulatedDevice, Span,
};
pub use flowgraph::{DataDescriptor, FlowGraph, Placement, TraceEvent, TraceLog};
pub use hwdb::{
    sum_resources, BudgetCheck, DeviceBudget, FuseDecision, FuseReject, HwModuleDescriptor,
    ModuleDb, ResourceVector, Utilization,
};
pub use perfsim::{
    closed_form_interval, report_text, simulate, simulate_with, SimOptions, SimReport,
};
pub use planner::{
    build_plan, compute_target_ms, partition_run, FusionRecord, PipelinePlan, PlanConfig,
    PlanOutcome, Stage, StageKind, StageMode, Task,
};
