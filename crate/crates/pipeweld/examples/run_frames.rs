//! Run the planned pipeline on real frames with the token-ordered worker
//! pool: software kernels on worker threads, hardware stages on simulated
//! start/poll devices, results checked against the plain sequential
//! composition and written out as PGM images.
//!
//! ```bash
//! cargo run --example run_frames
//! ```

use pipeweld::{
    build_plan, builtin_kernels, run_pipeline, DeviceSet, ExecOptions, FlowGraph, Frame, ModuleDb,
    PlanConfig, TraceLog,
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

    let mut paths: Vec<_> = std::fs::read_dir(format!("{fixtures}/frames"))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut inputs = Vec::with_capacity(paths.len());
    for path in &paths {
        inputs.push(Frame::read_pnm(&std::fs::read(path)?)?);
    }
    let desc = inputs[0].descriptor();
    println!(
        "loaded {} frames, {}x{}, {} channels",
        inputs.len(),
        desc.width(),
        desc.height(),
        desc.channels()
    );

    let registry = builtin_kernels();
    // Scale device latency down from the modeled milliseconds so the
    // example finishes quickly; the start/poll protocol still runs.
    let mut devices = DeviceSet::for_plan(&plan, &registry, 0.02)?;
    let opts = ExecOptions { workers: 2, ..ExecOptions::default() };
    let output = run_pipeline(&plan, inputs.clone(), &registry, &mut devices, &opts)?;

    println!(
        "ran {} tokens through {} stages in {:.1} ms wall time",
        output.frames.len(),
        plan.stages.len(),
        output.stats.wall_ms
    );
    println!(
        "max tokens in flight: {} (cap {})",
        output.stats.max_in_flight, plan.token_cap
    );

    // Reference result: the same kernels applied one frame at a time.
    for (index, input) in inputs.iter().enumerate() {
        let mut value = input.clone();
        for stage in &plan.stages {
            for task in &stage.tasks {
                for name in task.name.split('+') {
                    let kernel = registry.get(name).expect("builtin kernel");
                    value = kernel(&value)?;
                }
            }
        }
        if output.frames[index] != value {
            return Err(format!("frame {index} diverged from the sequential composition").into());
        }
    }
    println!("outputs match the sequential composition");

    let out_dir = std::env::temp_dir().join("pipeweld_frames");
    std::fs::create_dir_all(&out_dir)?;
    for (path, frame) in paths.iter().zip(&output.frames) {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        std::fs::write(out_dir.join(format!("{name}.pgm")), frame.write_pnm()?)?;
    }
    println!("wrote results to {}", out_dir.display());
    Ok(())
}
