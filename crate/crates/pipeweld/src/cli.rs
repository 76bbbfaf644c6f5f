//! Command-line front end: analyze, plan, simulate, report, run.
//!
//! Exit codes are a stable contract: 0 success, 2 unreadable or malformed
//! input, 3 infeasible plan, 4 runtime kernel or device failure.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::executor::{
    builtin_kernels, run_pipeline, DeviceSet, ExecError, ExecOptions, Frame,
};
use crate::flowgraph::{FlowGraph, TraceLog};
use crate::hwdb::{DeviceBudget, FuseDecision, ModuleDb};
use crate::perfsim::{report_text, simulate_with, SimOptions};
use crate::planner::{build_plan, PipelinePlan, PlanConfig, PlanError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

// ── Configuration file ─────────────────────────────────────────────────

/// TOML tool configuration, from `--config` or `PIPEWELD_CONFIG`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub device: Option<DeviceBudget>,
    pub defaults: Defaults,
    pub trace: TraceConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub threads: u32,
    pub token_cap: Option<u32>,
    pub workers: usize,
}

impl Default for Defaults {
    fn default() -> Defaults {
        Defaults { threads: 2, token_cap: None, workers: 2 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Function names dropped from traces before graph construction.
    pub ignore: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Default output directory for `run` when `--out` is absent.
    pub out_dir: Option<PathBuf>,
}

impl ToolConfig {
    pub fn parse(text: &str) -> Result<ToolConfig, String> {
        let config: ToolConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if config.defaults.threads == 0 {
            return Err("defaults.threads must be at least 1".into());
        }
        if config.defaults.workers == 0 {
            return Err("defaults.workers must be at least 1".into());
        }
        Ok(config)
    }

    pub fn budget(&self) -> DeviceBudget {
        self.device.unwrap_or_default()
    }
}

fn load_config(flag: Option<&Path>) -> Result<ToolConfig, Failure> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os("PIPEWELD_CONFIG")
            .filter(|v| !v.is_empty())
            .map(PathBuf::from),
    };
    let Some(path) = path else { return Ok(ToolConfig::default()) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| parse_fail(format!("config {}: {e}", path.display())))?;
    ToolConfig::parse(&text)
        .map_err(|e| parse_fail(format!("config {}: {e}", path.display())))
}

// ── Argument grammar ───────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(name = "pipeweld", version, about = "Trace-driven pipeline planning and execution")]
pub struct Cli {
    /// Tool configuration file (TOML); PIPEWELD_CONFIG works too.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a recorded trace into a flow-graph IR file.
    Analyze {
        /// Trace JSON recorded from the application.
        trace: PathBuf,
        /// Destination IR JSON file.
        out: PathBuf,
    },
    /// Build a pipeline plan manifest from an IR file and a module database.
    Plan {
        /// Flow-graph IR JSON file.
        ir: PathBuf,
        /// Hardware module database JSON file.
        db: PathBuf,
        /// Destination plan manifest file.
        out: PathBuf,
        /// Worker threads the plan should balance for.
        #[arg(long)]
        threads: Option<u32>,
        /// Cap on tokens in flight (default: stages + 1).
        #[arg(long)]
        token_cap: Option<u32>,
    },
    /// Predict throughput for a plan manifest.
    Simulate {
        plan: PathBuf,
        /// Tokens to push through the model.
        #[arg(long, default_value_t = 100)]
        tokens: usize,
        /// Simulated worker threads.
        #[arg(long)]
        workers: Option<usize>,
        /// Also write the report as JSON to this file.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        /// Model hardware stages as releasing their worker while running.
        #[arg(long)]
        hw_nonblocking: bool,
        /// Worker time per hardware job in non-blocking mode.
        #[arg(long, default_value_t = 0.0, value_name = "MS")]
        hw_poll_overhead_ms: f64,
    },
    /// Re-emit an IR or plan file as dot, text, or json.
    Report {
        /// IR or plan manifest file.
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Execute a plan over a directory of PGM/PPM frames.
    Run {
        plan: PathBuf,
        /// Directory of input frames, processed in name order.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Output directory (default from config, else "out").
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads for the run.
        #[arg(long)]
        workers: Option<usize>,
        /// Scale factor on simulated device latencies.
        #[arg(long, default_value_t = 1.0)]
        hw_latency_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Dot,
    Text,
    Json,
}

// ── Failure plumbing ───────────────────────────────────────────────────

struct Failure {
    code: i32,
    message: String,
}

fn parse_fail(message: impl Display) -> Failure {
    Failure { code: EXIT_PARSE, message: message.to_string() }
}

fn runtime_fail(message: impl Display) -> Failure {
    Failure { code: EXIT_RUNTIME, message: message.to_string() }
}

fn plan_fail(err: PlanError) -> Failure {
    let code = match err {
        PlanError::NotLinear { .. }
        | PlanError::NoHardwareFor { .. }
        | PlanError::BudgetOverflow(_) => EXIT_INFEASIBLE,
        _ => EXIT_PARSE,
    };
    Failure { code, message: err.to_string() }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| parse_fail(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| parse_fail(format!("{}: {e}", path.display())))
}

/// Parse the process arguments, run the selected command, and return the
/// process exit code.
pub fn run_main() -> i32 {
    let cli = Cli::parse();
    let config = match load_config(cli.config.as_deref()) {
        Ok(config) => config,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            return failure.code;
        }
    };
    match dispatch(cli.command, &config) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn dispatch(command: Command, config: &ToolConfig) -> Result<(), Failure> {
    match command {
        Command::Analyze { trace, out } => cmd_analyze(config, &trace, &out),
        Command::Plan { ir, db, out, threads, token_cap } => {
            cmd_plan(config, &ir, &db, &out, threads, token_cap)
        }
        Command::Simulate { plan, tokens, workers, json, hw_nonblocking, hw_poll_overhead_ms } => {
            cmd_simulate(config, &plan, tokens, workers, json.as_deref(), hw_nonblocking, hw_poll_overhead_ms)
        }
        Command::Report { path, format } => cmd_report(&path, format),
        Command::Run { plan, input, out, workers, hw_latency_scale } => {
            cmd_run(config, &plan, &input, out, workers, hw_latency_scale)
        }
    }
}

// ── Commands ───────────────────────────────────────────────────────────

fn cmd_analyze(config: &ToolConfig, trace: &Path, out: &Path) -> Result<(), Failure> {
    let log = TraceLog::parse(&read_file(trace)?)
        .map_err(parse_fail)?
        .without_functions(&config.trace.ignore);
    let graph = FlowGraph::from_trace(&log).map_err(parse_fail)?;
    write_file(out, graph.to_ir_json())?;
    println!(
        "{} functions, {:.1} ms total -> {}",
        graph.functions.len(),
        graph.total_time_ms(),
        out.display()
    );
    Ok(())
}

fn cmd_plan(
    config: &ToolConfig,
    ir: &Path,
    db: &Path,
    out: &Path,
    threads: Option<u32>,
    token_cap: Option<u32>,
) -> Result<(), Failure> {
    let graph = FlowGraph::from_ir_json(&read_file(ir)?).map_err(parse_fail)?;
    let modules = ModuleDb::load(&read_file(db)?).map_err(parse_fail)?;
    let plan_config = PlanConfig {
        threads: threads.unwrap_or(config.defaults.threads),
        token_cap: token_cap.or(config.defaults.token_cap),
        budget: config.budget(),
    };
    if plan_config.threads == 0 {
        return Err(parse_fail("--threads must be at least 1"));
    }
    let outcome = build_plan(&graph, &modules, &plan_config).map_err(plan_fail)?;
    write_file(out, outcome.plan.to_manifest_json())?;

    println!("Target stage time: {:.2} ms", outcome.target_ms);
    for record in &outcome.fusion {
        let chain = record.chain.join("+");
        match &record.decision {
            FuseDecision::Accept(desc) => {
                println!("fusion {chain}: accepted as \"{}\"", desc.sw_name)
            }
            FuseDecision::Reject(why) => println!("fusion {chain}: rejected ({why})"),
        }
    }
    print!("{}", outcome.plan.outline());
    println!("Wrote {}", out.display());
    Ok(())
}

fn cmd_simulate(
    config: &ToolConfig,
    plan_path: &Path,
    tokens: usize,
    workers: Option<usize>,
    json: Option<&Path>,
    hw_nonblocking: bool,
    hw_poll_overhead_ms: f64,
) -> Result<(), Failure> {
    let plan =
        PipelinePlan::from_manifest_json(&read_file(plan_path)?).map_err(plan_fail)?;
    if tokens == 0 {
        return Err(parse_fail("--tokens must be at least 1"));
    }
    let workers = workers.unwrap_or(config.defaults.workers);
    if workers == 0 {
        return Err(parse_fail("--workers must be at least 1"));
    }
    if !hw_poll_overhead_ms.is_finite() || hw_poll_overhead_ms < 0.0 {
        return Err(parse_fail("--hw-poll-overhead-ms must be finite and >= 0"));
    }
    let opts = SimOptions { hw_nonblocking, hw_poll_overhead_ms };
    let report = simulate_with(&plan, tokens, workers, &opts);
    print!("{}", report_text(&report, &plan));
    if let Some(path) = json {
        write_file(path, report.to_json())?;
    }
    Ok(())
}

fn cmd_report(path: &Path, format: Format) -> Result<(), Failure> {
    let text = read_file(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_fail(format!("{}: {e}", path.display())))?;
    if value.get("stages").is_some() {
        let plan = PipelinePlan::from_manifest_json(&text).map_err(plan_fail)?;
        match format {
            Format::Text => print!("{}", plan.outline()),
            Format::Json => print!("{}", plan.to_manifest_json()),
            Format::Dot => {
                return Err(parse_fail("dot output needs a flow-graph IR file, not a plan"))
            }
        }
    } else if value.get("functions").is_some() && value.get("data").is_some() {
        let graph = FlowGraph::from_ir_json(&text).map_err(parse_fail)?;
        match format {
            Format::Dot => print!("{}", graph.to_dot()),
            Format::Json => print!("{}", graph.to_ir_json()),
            Format::Text => {
                println!(
                    "Flow graph: {} functions, {} data nodes, {} edges",
                    graph.functions.len(),
                    graph.data.len(),
                    graph.edges().len()
                );
                println!("Total traced time: {:.1} ms", graph.total_time_ms());
            }
        }
    } else {
        return Err(parse_fail(format!(
            "{}: neither a flow-graph IR nor a plan manifest",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_run(
    config: &ToolConfig,
    plan_path: &Path,
    input: &Path,
    out: Option<PathBuf>,
    workers: Option<usize>,
    hw_latency_scale: f64,
) -> Result<(), Failure> {
    let plan =
        PipelinePlan::from_manifest_json(&read_file(plan_path)?).map_err(plan_fail)?;
    if !hw_latency_scale.is_finite() || hw_latency_scale < 0.0 {
        return Err(parse_fail("--hw-latency-scale must be finite and >= 0"));
    }
    let out_dir = out
        .or_else(|| config.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    // Gather frames in name order; stems name the outputs and error reports.
    let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| parse_fail(format!("{}: {e}", input.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "PGM" | "PPM")
            )
        })
        .collect();
    entries.sort();
    let mut frames = Vec::with_capacity(entries.len());
    for path in &entries {
        let bytes = std::fs::read(path)
            .map_err(|e| parse_fail(format!("{}: {e}", path.display())))?;
        let frame = Frame::read_pnm(&bytes)
            .map_err(|e| parse_fail(format!("{}: {e}", path.display())))?;
        frames.push(frame);
    }
    let count = frames.len();

    let registry = builtin_kernels();
    let mut devices = DeviceSet::for_plan(&plan, &registry, hw_latency_scale)
        .map_err(runtime_fail)?;
    let opts = ExecOptions {
        workers: workers.unwrap_or(config.defaults.workers).max(1),
        ..ExecOptions::default()
    };
    let output = run_pipeline(&plan, frames, &registry, &mut devices, &opts)
        .map_err(|e| runtime_fail(name_the_frame(e, &entries)))?;

    std::fs::create_dir_all(&out_dir)
        .map_err(|e| parse_fail(format!("{}: {e}", out_dir.display())))?;
    for (path, frame) in entries.iter().zip(&output.frames) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        let ext = if frame.descriptor().channels() == 3 { "ppm" } else { "pgm" };
        let dest = out_dir.join(format!("{stem}.{ext}"));
        let encoded = frame
            .write_pnm()
            .map_err(|e| runtime_fail(format!("{}: {e}", dest.display())))?;
        write_file(&dest, encoded)?;
    }

    let per_token = if count > 0 { output.stats.wall_ms / count as f64 } else { 0.0 };
    println!(
        "{count} frames in {:.1} ms ({per_token:.1} ms per token) -> {}",
        output.stats.wall_ms,
        out_dir.display()
    );
    Ok(())
}

/// Turn a token index inside an executor error into the offending file name.
fn name_the_frame(err: ExecError, entries: &[PathBuf]) -> String {
    let token = match &err {
        ExecError::Kernel { token, .. } | ExecError::Device { token, .. } => Some(*token),
        _ => None,
    };
    match token.and_then(|t| entries.get(t)) {
        Some(path) => format!("{err} (frame {})", path.display()),
        None => err.to_string(),
    }
}
