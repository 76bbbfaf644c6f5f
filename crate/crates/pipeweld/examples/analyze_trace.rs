//! Parse a recorded function-call trace, drop one-shot setup calls, and
//! inspect the reconstructed function/data flow graph.
//!
//! ```bash
//! cargo run --example analyze_trace
//! ```

use pipeweld::{FlowGraph, TraceLog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case_study_trace.json");
    let log = TraceLog::parse(&std::fs::read_to_string(trace)?)?;
    println!("trace: {} events, {:.1} ms recorded", log.events.len(), log.total_duration_us() as f64 / 1000.0);

    // imread runs once at startup; it is noise for pipeline planning.
    let log = log.without_functions(&["imread".to_string()]);
    let graph = FlowGraph::from_trace(&log)?;

    println!("\nfunctions ({:.1} ms total):", graph.total_time_ms());
    for function in &graph.functions {
        let inputs = function.inputs.join(", ");
        let outputs = function.outputs.join(", ");
        println!(
            "  {:<16} {:>7.1} ms   {} -> {}",
            function.name,
            function.duration_ms(),
            inputs,
            outputs
        );
    }

    println!("\ndata nodes:");
    for (id, desc) in &graph.data {
        println!("  {:<10} {}x{}x{}bit x{} ({} bytes)", id, desc.height(), desc.width(), desc.bit_depth(), desc.channels(), desc.byte_size());
    }

    println!("\nDOT rendering (pipe to `dot -Tsvg` to draw):\n");
    print!("{}", graph.to_dot());
    Ok(())
}
