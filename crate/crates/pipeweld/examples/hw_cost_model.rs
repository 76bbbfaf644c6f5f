//! Explore the hardware-module database: per-function time estimates
//! from the clock/cycle model, stream port widths, a fusion trial, and
//! resource accounting against the device budget.
//!
//! ```bash
//! cargo run --example hw_cost_model
//! ```

use pipeweld::{sum_resources, BudgetCheck, DataDescriptor, DeviceBudget, FuseDecision, ModuleDb};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let db_path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/hw_modules.json");
    let db = ModuleDb::load(&std::fs::read_to_string(db_path)?)?;

    let frame = DataDescriptor::new(1080, 1920, 24, 1)?;
    println!("module estimates for a {}x{} frame:", frame.width(), frame.height());
    for name in ["cvtColor", "cornerHarris", "normalize", "convertScaleAbs"] {
        match db.lookup(name) {
            Some(desc) => println!(
                "  {:<16} -> {:<22} {:>6.1} MHz  {:>6.2} ms",
                name,
                desc.hw_name,
                desc.freq_mhz,
                desc.estimate_time_ms(&frame),
            ),
            None => println!("  {name:<16} -> no hardware module; stays in software"),
        }
    }
    println!("\nstream port width for the input frame: {} bits", frame.port_width_bits());

    // Fusing two adjacent modules saves stream adapters but, absent a
    // measured fused entry, the estimate is pessimistic: summed cycles
    // at the slowest component clock.
    let trace = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case_study_trace.json");
    let log = pipeweld::TraceLog::parse(&std::fs::read_to_string(trace)?)?
        .without_functions(&["imread".to_string()]);
    let graph = pipeweld::FlowGraph::from_trace(&log)?;
    match db.try_fuse(&["cvtColor", "cornerHarris"], &graph, 58.0)? {
        FuseDecision::Accept(desc) => {
            println!("\nfusion cvtColor+cornerHarris accepted as {}", desc.hw_name)
        }
        FuseDecision::Reject(why) => println!("\nfusion cvtColor+cornerHarris rejected: {why}"),
    }

    let total = sum_resources(db.descriptors());
    let budget = DeviceBudget::default();
    let util = budget.utilization(total);
    println!("\nall modules synthesized together: {total}");
    println!(
        "device utilization: bram {:.1}%, dsp {:.1}%, ff {:.1}%, lut {:.1}%",
        util.bram, util.dsp, util.ff, util.lut
    );
    match budget.check(total) {
        BudgetCheck::Fit => println!("fits the device budget"),
        BudgetCheck::Overflow(over) => println!("over budget on: {}", over.join(", ")),
    }
    Ok(())
}
