//! The full planning flow: parse a recorded trace, bind functions to
//! hardware modules, balance the stages around the target time, and
//! print the stage outline plus the JSON plan manifest.
//!
//! ```bash
//! cargo run --example plan_pipeline
//! ```

use pipeweld::{build_plan, FlowGraph, FuseDecision, ModuleDb, PlanConfig, TraceLog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let log = TraceLog::parse(&std::fs::read_to_string(format!(
        "{fixtures}/case_study_trace.json"
    ))?)?
    .without_functions(&["imread".to_string()]);
    let graph = FlowGraph::from_trace(&log)?;
    let db = ModuleDb::load(&std::fs::read_to_string(format!("{fixtures}/hw_modules.json"))?)?;

    // The defaults: two extra worker threads and the XC7Z020 budget.
    let config = PlanConfig::default();
    let outcome = build_plan(&graph, &db, &config)?;

    println!(
        "sequential baseline: {:.1} ms per frame",
        outcome.plan.sequential_baseline_ms
    );
    println!(
        "target stage time:   {:.2} ms (baseline / (threads + 1))",
        outcome.target_ms
    );

    println!("\nfusion trials:");
    if outcome.fusion.is_empty() {
        println!("  none (no adjacent hardware chains)");
    }
    for record in &outcome.fusion {
        let verdict = match &record.decision {
            FuseDecision::Accept(desc) => format!("accepted as {}", desc.hw_name),
            FuseDecision::Reject(why) => format!("rejected: {why}"),
        };
        println!("  {}: {}", record.chain.join("+"), verdict);
    }

    println!("\n{}", outcome.plan.outline());
    println!("manifest JSON:\n{}", outcome.plan.to_manifest_json());
    Ok(())
}
