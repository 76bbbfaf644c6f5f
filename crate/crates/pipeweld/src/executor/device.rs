//! Simulated hardware devices with a start/poll/collect protocol.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::frame::Frame;
use super::kernels::{KernelError, KernelFn};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device \"{0}\" started while busy")]
    Busy(String),
    #[error("device \"{0}\" asked for a result before the done signal")]
    NotDone(String),
    #[error("device \"{0}\" asked for a result with no job started")]
    NoJob(String),
    #[error("device \"{name}\": {source}")]
    Kernel {
        name: String,
        #[source]
        source: KernelError,
    },
}

/// A device mimicking an accelerator block: `start` latches the input and
/// begins a job, `is_done` polls completion, `result` collects the output.
/// The output is computed eagerly; only its availability is delayed.
pub struct SimulatedDevice {
    name: String,
    latency: Duration,
    kernel: Arc<KernelFn>,
    job: Option<Job>,
}

struct Job {
    ready_at: Instant,
    output: Result<Frame, KernelError>,
}

impl SimulatedDevice {
    pub fn new(name: impl Into<String>, latency: Duration, kernel: Arc<KernelFn>) -> SimulatedDevice {
        SimulatedDevice { name: name.into(), latency, kernel, job: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn is_busy(&self) -> bool {
        self.job.is_some()
    }

    /// Latch `input` and begin a job. Fails if a job is already in flight.
    pub fn start(&mut self, input: &Frame) -> Result<(), DeviceError> {
        if self.job.is_some() {
            return Err(DeviceError::Busy(self.name.clone()));
        }
        let output = (self.kernel)(input);
        self.job = Some(Job { ready_at: Instant::now() + self.latency, output });
        Ok(())
    }

    /// True once the current job's latency has elapsed. False when idle.
    pub fn is_done(&self) -> bool {
        match &self.job {
            Some(job) => Instant::now() >= job.ready_at,
            None => false,
        }
    }

    /// Collect the finished job's output frame and return to idle.
    pub fn result(&mut self) -> Result<Frame, DeviceError> {
        match &self.job {
            None => return Err(DeviceError::NoJob(self.name.clone())),
            Some(job) if Instant::now() < job.ready_at => {
                return Err(DeviceError::NotDone(self.name.clone()))
            }
            Some(_) => {}
        }
        let job = self.job.take().unwrap();
        job.output.map_err(|source| DeviceError::Kernel { name: self.name.clone(), source })
    }
}

impl fmt::Debug for SimulatedDevice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimulatedDevice")
            .field("name", &self.name)
            .field("latency", &self.latency)
            .field("busy", &self.is_busy())
            .finish()
    }
}
