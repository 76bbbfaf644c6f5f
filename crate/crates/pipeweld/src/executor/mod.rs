//! Token-ordered pipeline execution over a worker pool.
//!
//! A plan's stages become lanes of capacity one. Idle workers scan the
//! lanes from the back of the pipe forward, so tokens drain ahead of new
//! admissions, and serial stages additionally hold tokens until their
//! predecessors have passed through. Software tasks call registered
//! kernels in place; hardware tasks drive a [`SimulatedDevice`] through
//! its start/poll/collect protocol, holding the worker for the duration.

mod device;
mod frame;
mod kernels;

pub use device::{DeviceError, SimulatedDevice};
pub use frame::{Frame, FrameError};
pub use kernels::{builtin_kernels, KernelError, KernelFn, KernelRegistry};

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::planner::{PipelinePlan, StageKind, StageMode};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no kernel registered for \"{0}\"")]
    MissingKernel(String),
    #[error("no device \"{name}\" for hardware stage {stage} (\"{task}\")")]
    MissingDevice { name: String, stage: usize, task: String },
    #[error("hardware stage {stage} lists {tasks} tasks; a device serves exactly one")]
    DeviceCount { stage: usize, tasks: usize },
    #[error("token {token} failed at stage {stage}: {source}")]
    Kernel {
        token: usize,
        stage: usize,
        #[source]
        source: KernelError,
    },
    #[error("token {token} failed at stage {stage}: {source}")]
    Device {
        token: usize,
        stage: usize,
        #[source]
        source: DeviceError,
    },
}

// ── Device sets ────────────────────────────────────────────────────────

/// The devices available to a run, keyed by task name.
#[derive(Debug, Default)]
pub struct DeviceSet {
    map: HashMap<String, SimulatedDevice>,
}

impl DeviceSet {
    pub fn new() -> DeviceSet {
        DeviceSet::default()
    }

    pub fn insert(&mut self, device: SimulatedDevice) {
        self.map.insert(device.name().to_string(), device);
    }

    pub fn get(&self, name: &str) -> Option<&SimulatedDevice> {
        self.map.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<SimulatedDevice> {
        self.map.remove(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.map.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }

    /// Build one device per hardware stage in `plan`, named for the
    /// stage and running the task's kernel with a latency of
    /// `est_time_ms * latency_scale`. Fused task names compose their
    /// component kernels in order.
    pub fn for_plan(
        plan: &PipelinePlan,
        registry: &KernelRegistry,
        latency_scale: f64,
    ) -> Result<DeviceSet, ExecError> {
        let mut set = DeviceSet::new();
        for stage in &plan.stages {
            if stage.kind != StageKind::Hw {
                continue;
            }
            if stage.tasks.len() != 1 {
                return Err(ExecError::DeviceCount {
                    stage: stage.index as usize,
                    tasks: stage.tasks.len(),
                });
            }
            let task = &stage.tasks[0];
            let kernel = compose_kernel(&task.name, registry)?;
            let ms = (task.est_time_ms * latency_scale).max(0.0);
            let latency = Duration::from_secs_f64(ms / 1000.0);
            set.insert(SimulatedDevice::new(device_name(stage.index), latency, kernel));
        }
        Ok(set)
    }
}

/// Instance name of the device serving a hardware stage, matching the
/// `XhN_Start`/`XhN_IsDone` interface names in the plan outline.
pub fn device_name(stage_index: u32) -> String {
    format!("Xh{stage_index}")
}

/// Resolve a task name to a kernel; `a+b` chains the parts left to right.
fn compose_kernel(name: &str, registry: &KernelRegistry) -> Result<Arc<KernelFn>, ExecError> {
    let parts: Vec<Arc<KernelFn>> = name
        .split('+')
        .map(|part| registry.get(part).ok_or_else(|| ExecError::MissingKernel(part.to_string())))
        .collect::<Result<_, _>>()?;
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().unwrap());
    }
    Ok(Arc::new(move |frame: &Frame| {
        let mut current = (parts[0])(frame)?;
        for kernel in &parts[1..] {
            current = kernel(&current)?;
        }
        Ok(current)
    }))
}

// ── Run configuration and results ──────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// Worker threads serving the pipeline.
    pub workers: usize,
    /// Sleep between hardware done-signal polls.
    pub poll_interval: Duration,
}

impl Default for ExecOptions {
    fn default() -> ExecOptions {
        ExecOptions { workers: 2, poll_interval: Duration::from_micros(100) }
    }
}

/// One stage execution: which token ran where, in microseconds since the
/// start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub token: usize,
    pub stage: usize,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone)]
pub struct RunStats {
    pub wall_ms: f64,
    pub max_in_flight: usize,
    pub spans: Vec<Span>,
}

#[derive(Debug)]
pub struct RunOutput {
    /// Final frames, in token order.
    pub frames: Vec<Frame>,
    pub stats: RunStats,
}

// ── The worker pool ────────────────────────────────────────────────────

enum StageRunner {
    Sw { kernels: Vec<Arc<KernelFn>> },
    Hw { device: Mutex<SimulatedDevice> },
}

enum Slot {
    Pending,
    Ready { stage: usize, frame: Frame },
    Running,
    Finished,
}

struct State {
    inputs: Vec<Option<Frame>>,
    slots: Vec<Slot>,
    next_admit: usize,
    in_flight: usize,
    max_in_flight: usize,
    busy: Vec<bool>,
    next_serial: Vec<usize>,
    completed: usize,
    failed: Option<ExecError>,
    outputs: Vec<Option<Frame>>,
    spans: Vec<Span>,
}

struct Shared {
    runners: Vec<StageRunner>,
    serial: Vec<bool>,
    total: usize,
    cap: usize,
    poll: Duration,
    started: Instant,
    state: Mutex<State>,
    cv: Condvar,
}

/// Push `inputs` through `plan` as tokens and return the final frames in
/// token order. Software tasks come from `registry`; each hardware stage
/// claims its device from `devices` for the duration of the run.
pub fn run_pipeline(
    plan: &PipelinePlan,
    inputs: Vec<Frame>,
    registry: &KernelRegistry,
    devices: &mut DeviceSet,
    opts: &ExecOptions,
) -> Result<RunOutput, ExecError> {
    let total = inputs.len();
    if plan.stages.is_empty() || total == 0 {
        let stats = RunStats { wall_ms: 0.0, max_in_flight: 0, spans: Vec::new() };
        return Ok(RunOutput { frames: inputs, stats });
    }

    // Resolve every task up front so a failure leaves `devices` untouched.
    for (pos, stage) in plan.stages.iter().enumerate() {
        match stage.kind {
            StageKind::Sw => {
                for task in &stage.tasks {
                    for part in task.name.split('+') {
                        if !registry.contains(part) {
                            return Err(ExecError::MissingKernel(part.to_string()));
                        }
                    }
                }
            }
            StageKind::Hw => {
                if stage.tasks.len() != 1 {
                    return Err(ExecError::DeviceCount { stage: pos, tasks: stage.tasks.len() });
                }
                let name = device_name(stage.index);
                if devices.get(&name).is_none() {
                    return Err(ExecError::MissingDevice {
                        name,
                        stage: pos,
                        task: stage.tasks[0].name.clone(),
                    });
                }
            }
        }
    }

    let runners: Vec<StageRunner> = plan
        .stages
        .iter()
        .map(|stage| match stage.kind {
            StageKind::Sw => StageRunner::Sw {
                kernels: stage
                    .tasks
                    .iter()
                    .map(|t| compose_kernel(&t.name, registry).expect("resolved above"))
                    .collect(),
            },
            StageKind::Hw => StageRunner::Hw {
                device: Mutex::new(
                    devices.remove(&device_name(stage.index)).expect("resolved above"),
                ),
            },
        })
        .collect();

    let stages = plan.stages.len();
    let shared = Shared {
        serial: plan.stages.iter().map(|s| s.mode == StageMode::SerialInOrder).collect(),
        runners,
        total,
        cap: (plan.token_cap as usize).max(1),
        poll: opts.poll_interval,
        started: Instant::now(),
        state: Mutex::new(State {
            inputs: inputs.into_iter().map(Some).collect(),
            slots: (0..total).map(|_| Slot::Pending).collect(),
            next_admit: 0,
            in_flight: 0,
            max_in_flight: 0,
            busy: vec![false; stages],
            next_serial: vec![0; stages],
            completed: 0,
            failed: None,
            outputs: (0..total).map(|_| None).collect(),
            spans: Vec::new(),
        }),
        cv: Condvar::new(),
    };

    std::thread::scope(|scope| {
        for _ in 0..opts.workers.max(1) {
            scope.spawn(|| worker(&shared));
        }
    });

    let wall_ms = shared.started.elapsed().as_secs_f64() * 1000.0;
    let Shared { runners, state, .. } = shared;
    for runner in runners {
        if let StageRunner::Hw { device } = runner {
            devices.insert(device.into_inner().unwrap());
        }
    }

    let mut state = state.into_inner().unwrap();
    if let Some(err) = state.failed.take() {
        return Err(err);
    }
    state.spans.sort_by_key(|s| (s.start_us, s.stage, s.token));
    let frames = state.outputs.into_iter().map(|f| f.unwrap()).collect();
    let stats =
        RunStats { wall_ms, max_in_flight: state.max_in_flight, spans: state.spans };
    Ok(RunOutput { frames, stats })
}

fn worker(shared: &Shared) {
    loop {
        let (token, stage, frame) = {
            let mut st = shared.state.lock().unwrap();
            loop {
                if st.failed.is_some() || st.completed == shared.total {
                    return;
                }
                if let Some(work) = take_work(shared, &mut st) {
                    break work;
                }
                st = shared.cv.wait(st).unwrap();
            }
        };

        let began = shared.started.elapsed();
        let result = run_stage(shared, token, stage, frame);
        let ended = shared.started.elapsed();

        let mut st = shared.state.lock().unwrap();
        st.busy[stage] = false;
        if shared.serial[stage] {
            st.next_serial[stage] += 1;
        }
        st.spans.push(Span {
            token,
            stage,
            start_us: began.as_micros() as u64,
            end_us: ended.as_micros() as u64,
        });
        match result {
            Err(err) => st.failed = Some(err),
            Ok(out) => {
                if stage + 1 == shared.runners.len() {
                    st.slots[token] = Slot::Finished;
                    st.outputs[token] = Some(out);
                    st.completed += 1;
                    st.in_flight -= 1;
                } else {
                    st.slots[token] = Slot::Ready { stage: stage + 1, frame: out };
                }
            }
        }
        drop(st);
        shared.cv.notify_all();
    }
}

/// Pick the next stage execution for an idle worker. Later stages win over
/// earlier ones, and admitting a fresh token comes last; serial stages only
/// release the lowest outstanding token index.
fn take_work(shared: &Shared, st: &mut State) -> Option<(usize, usize, Frame)> {
    for stage in (0..shared.runners.len()).rev() {
        if st.busy[stage] {
            continue;
        }
        let pick = if shared.serial[stage] {
            let want = st.next_serial[stage];
            match st.slots.get(want) {
                Some(Slot::Ready { stage: s, .. }) if *s == stage => Some(want),
                _ => None,
            }
        } else {
            st.slots
                .iter()
                .position(|slot| matches!(slot, Slot::Ready { stage: s, .. } if *s == stage))
        };
        if let Some(token) = pick {
            let slot = std::mem::replace(&mut st.slots[token], Slot::Running);
            let Slot::Ready { frame, .. } = slot else { unreachable!() };
            st.busy[stage] = true;
            return Some((token, stage, frame));
        }
    }

    if st.next_admit < shared.total && st.in_flight < shared.cap && !st.busy[0] {
        let token = st.next_admit;
        st.next_admit += 1;
        st.in_flight += 1;
        st.max_in_flight = st.max_in_flight.max(st.in_flight);
        let frame = st.inputs[token].take().unwrap();
        st.slots[token] = Slot::Running;
        st.busy[0] = true;
        return Some((token, 0, frame));
    }
    None
}

fn run_stage(shared: &Shared, token: usize, stage: usize, frame: Frame) -> Result<Frame, ExecError> {
    match &shared.runners[stage] {
        StageRunner::Sw { kernels } => {
            let mut current = frame;
            for kernel in kernels {
                current = kernel(&current)
                    .map_err(|source| ExecError::Kernel { token, stage, source })?;
            }
            Ok(current)
        }
        StageRunner::Hw { device } => {
            let mut dev = device.lock().unwrap();
            dev.start(&frame).map_err(|source| ExecError::Device { token, stage, source })?;
            while !dev.is_done() {
                std::thread::sleep(shared.poll);
            }
            dev.result().map_err(|source| ExecError::Device { token, stage, source })
        }
    }
}
