//! Override the planner's placement decisions: pin a function to the
//! CPU and watch the plan reshape, then force one onto the FPGA without
//! a matching hardware module and watch the planner refuse.
//!
//! ```bash
//! cargo run --example edit_placement
//! ```

use pipeweld::{build_plan, FlowGraph, ModuleDb, Placement, PlanConfig, TraceLog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let log = TraceLog::parse(&std::fs::read_to_string(format!(
        "{fixtures}/case_study_trace.json"
    ))?)?
    .without_functions(&["imread".to_string()]);
    let graph = FlowGraph::from_trace(&log)?;
    let db = ModuleDb::load(&std::fs::read_to_string(format!("{fixtures}/hw_modules.json"))?)?;
    let config = PlanConfig::default();

    println!("automatic placement:\n");
    println!("{}", build_plan(&graph, &db, &config)?.plan.outline());

    // cornerHarris has a hardware module, so the planner offloads it by
    // default. Pinned to the CPU it keeps its measured trace time.
    let pinned = graph.with_placement("cornerHarris", Placement::ForceCpu)?;
    println!("cornerHarris pinned to the CPU:\n");
    println!("{}", build_plan(&pinned, &db, &config)?.plan.outline());

    // Forcing a function with no hardware module onto the FPGA fails
    // loudly instead of falling back to software.
    let forced = graph.with_placement("normalize", Placement::ForceFpga)?;
    match build_plan(&forced, &db, &config) {
        Ok(_) => println!("unexpected: normalize planned onto the FPGA"),
        Err(err) => println!("normalize forced to the FPGA: {err}"),
    }
    Ok(())
}
