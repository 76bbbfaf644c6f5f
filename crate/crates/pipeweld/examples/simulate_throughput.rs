//! Predict steady-state throughput for the planned pipeline with the
//! discrete-event simulator, sweep the worker count against the
//! closed-form bound, and print the full report for one configuration.
//!
//! ```bash
//! cargo run --example simulate_throughput
//! ```

use pipeweld::{
    build_plan, closed_form_interval, report_text, simulate, simulate_with, FlowGraph, ModuleDb,
    PlanConfig, SimOptions, TraceLog,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let log = TraceLog::parse(&std::fs::read_to_string(format!(
        "{fixtures}/case_study_trace.json"
    ))?)?
    .without_functions(&["imread".to_string()]);
    let graph = FlowGraph::from_trace(&log)?;
    let db = ModuleDb::load(&std::fs::read_to_string(format!("{fixtures}/hw_modules.json"))?)?;
    let plan = build_plan(&graph, &db, &PlanConfig::default())?.plan;

    let times = plan.stage_times();
    print!("stage times:");
    for t in &times {
        print!(" {t:.1}");
    }
    println!(" ms; token cap {}", plan.token_cap);

    println!("\n{:<8} {:>12} {:>14} {:>10}", "workers", "steady ms", "closed form", "speed-up");
    for workers in [1, 2, 4] {
        let report = simulate(&plan, 200, workers);
        println!(
            "{:<8} {:>12.2} {:>14.2} {:>10.2}",
            workers,
            report.steady_interval_ms,
            closed_form_interval(&times, workers),
            report.speedup
        );
    }

    // With non-blocking hardware stages a worker only pays a polling
    // overhead per device job, so one worker goes much further.
    let opts = SimOptions { hw_nonblocking: true, hw_poll_overhead_ms: 0.1 };
    let nb = simulate_with(&plan, 200, 1, &opts);
    println!(
        "\none worker, non-blocking hardware: steady {:.2} ms, speed-up {:.2}",
        nb.steady_interval_ms, nb.speedup
    );

    println!("\nfull report at two workers:\n");
    let report = simulate(&plan, 200, 2);
    print!("{}", report_text(&report, &plan));
    println!("\nJSON:\n{}", report.to_json());
    Ok(())
}
