//! Software kernels: pure frame-to-frame functions behind a name registry.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::frame::Frame;
use crate::flowgraph::DataDescriptor;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel \"{kernel}\" expects {expected}, got {got}")]
    BadInput { kernel: String, expected: &'static str, got: String },
    #[error("kernel \"{kernel}\" failed: {message}")]
    Failed { kernel: String, message: String },
}

pub type KernelFn = dyn Fn(&Frame) -> Result<Frame, KernelError> + Send + Sync;

/// Kernels keyed by the function names that appear in traces and plans.
#[derive(Clone, Default)]
pub struct KernelRegistry {
    map: HashMap<String, Arc<KernelFn>>,
}

impl KernelRegistry {
    pub fn new() -> KernelRegistry {
        KernelRegistry::default()
    }

    pub fn register<F>(&mut self, name: &str, kernel: F)
    where
        F: Fn(&Frame) -> Result<Frame, KernelError> + Send + Sync + 'static,
    {
        self.map.insert(name.to_string(), Arc::new(kernel));
    }

    /// Register `alias` as another name for `target`. Returns false when the
    /// target is unknown.
    pub fn alias(&mut self, alias: &str, target: &str) -> bool {
        match self.map.get(target) {
            Some(kernel) => {
                let kernel = Arc::clone(kernel);
                self.map.insert(alias.to_string(), kernel);
                true
            }
            None => false,
        }
    }

    pub fn get(&self, name: &str) -> Option<Arc<KernelFn>> {
        self.map.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.map.keys().map(String::as_str).collect();
        names.sort_unstable();
        names
    }
}

/// The stock corner-detection kernels, under both their own names and the
/// OpenCV-style names that recorded traces use.
pub fn builtin_kernels() -> KernelRegistry {
    let mut reg = KernelRegistry::new();
    reg.register("to_gray", to_gray);
    reg.register("corner_response", corner_response);
    reg.register("min_max_normalize", min_max_normalize);
    reg.register("abs_scale", abs_scale);
    reg.alias("cvtColor", "to_gray");
    reg.alias("cornerHarris", "corner_response");
    reg.alias("normalize", "min_max_normalize");
    reg.alias("convertScaleAbs", "abs_scale");
    reg
}

fn bad_input(kernel: &str, expected: &'static str, desc: &DataDescriptor) -> KernelError {
    KernelError::BadInput { kernel: kernel.to_string(), expected, got: desc.to_string() }
}

// ── Sample access helpers ──────────────────────────────────────────────

fn samples_u16(frame: &Frame) -> Vec<u16> {
    match frame.descriptor().bit_depth() {
        8 => frame.bytes().iter().map(|&b| u16::from(b)).collect(),
        _ => frame
            .bytes()
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
            .collect(),
    }
}

fn pack_u16(samples: &[u16]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    bytes
}

// ── Built-in kernels ───────────────────────────────────────────────────

/// 3-channel 8-bit color to 1-channel 8-bit gray: floor((r + g + b) / 3).
fn to_gray(frame: &Frame) -> Result<Frame, KernelError> {
    let desc = frame.descriptor();
    if desc.bit_depth() != 8 || desc.channels() != 3 {
        return Err(bad_input("to_gray", "an 8-bit 3-channel frame", &desc));
    }
    let out_desc = DataDescriptor::new(desc.height(), desc.width(), 8, 1).unwrap();
    let bytes = frame
        .bytes()
        .chunks_exact(3)
        .map(|px| ((u16::from(px[0]) + u16::from(px[1]) + u16::from(px[2])) / 3) as u8)
        .collect();
    Ok(Frame::new(out_desc, bytes).unwrap())
}

/// Harris corner response on an 8-bit gray frame: Sobel gradients with
/// replicated borders, 3x3 window sums of the structure tensor, then
/// R = det - 0.04 * trace^2 scaled by 2^-32 into a 16-bit channel. The
/// scale keeps the quartic response range of 8-bit inputs below the clamp.
fn corner_response(frame: &Frame) -> Result<Frame, KernelError> {
    let desc = frame.descriptor();
    if desc.bit_depth() != 8 || desc.channels() != 1 {
        return Err(bad_input("corner_response", "an 8-bit 1-channel frame", &desc));
    }
    let (w, h) = (desc.width() as usize, desc.height() as usize);
    let src = frame.bytes();
    let at = |x: isize, y: isize| -> i32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        i32::from(src[y * w + x])
    };

    let mut gx = vec![0i32; w * h];
    let mut gy = vec![0i32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = at(x + 1, y - 1) - at(x - 1, y - 1)
                + 2 * (at(x + 1, y) - at(x - 1, y))
                + at(x + 1, y + 1) - at(x - 1, y + 1);
            gy[i] = at(x - 1, y + 1) - at(x - 1, y - 1)
                + 2 * (at(x, y + 1) - at(x, y - 1))
                + at(x + 1, y + 1) - at(x + 1, y - 1);
        }
    }

    let window = |grid: &dyn Fn(usize) -> i64, x: isize, y: isize| -> i64 {
        let mut sum = 0i64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let nx = (x + dx).clamp(0, w as isize - 1) as usize;
                let ny = (y + dy).clamp(0, h as isize - 1) as usize;
                sum += grid(ny * w + nx);
            }
        }
        sum
    };

    let mut out = vec![0u16; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let sxx = window(&|i| i64::from(gx[i]) * i64::from(gx[i]), x, y);
            let syy = window(&|i| i64::from(gy[i]) * i64::from(gy[i]), x, y);
            let sxy = window(&|i| i64::from(gx[i]) * i64::from(gy[i]), x, y);
            let det = (sxx * syy - sxy * sxy) as f64;
            let trace = (sxx + syy) as f64;
            let response = (det - 0.04 * trace * trace) / 4_294_967_296.0;
            out[y as usize * w + x as usize] = response.clamp(0.0, 65_535.0).round() as u16;
        }
    }

    let out_desc = DataDescriptor::new(desc.height(), desc.width(), 16, 1).unwrap();
    Ok(Frame::new(out_desc, pack_u16(&out)).unwrap())
}

/// Affine rescale of a 1-channel frame so its samples span [0, 255]. A flat
/// frame maps to all zeros. The bit depth is preserved.
fn min_max_normalize(frame: &Frame) -> Result<Frame, KernelError> {
    let desc = frame.descriptor();
    if desc.channels() != 1 || !matches!(desc.bit_depth(), 8 | 16) {
        return Err(bad_input("min_max_normalize", "an 8- or 16-bit 1-channel frame", &desc));
    }
    let samples = samples_u16(frame);
    let lo = samples.iter().copied().min().unwrap_or(0);
    let hi = samples.iter().copied().max().unwrap_or(0);
    let scaled: Vec<u16> = if hi == lo {
        vec![0; samples.len()]
    } else {
        let span = f64::from(hi - lo);
        samples
            .iter()
            .map(|&s| (f64::from(s - lo) * 255.0 / span).round() as u16)
            .collect()
    };
    let bytes = match desc.bit_depth() {
        8 => scaled.iter().map(|&s| s as u8).collect(),
        _ => pack_u16(&scaled),
    };
    Ok(Frame::new(desc, bytes).unwrap())
}

/// Clamp a 1-channel frame into 8 bits: min(sample, 255).
fn abs_scale(frame: &Frame) -> Result<Frame, KernelError> {
    let desc = frame.descriptor();
    if desc.channels() != 1 || !matches!(desc.bit_depth(), 8 | 16) {
        return Err(bad_input("abs_scale", "an 8- or 16-bit 1-channel frame", &desc));
    }
    let bytes = samples_u16(frame).iter().map(|&s| s.min(255) as u8).collect();
    let out_desc = DataDescriptor::new(desc.height(), desc.width(), 8, 1).unwrap();
    Ok(Frame::new(out_desc, bytes).unwrap())
}
