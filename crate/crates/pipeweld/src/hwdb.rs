//! Hardware-module database, cost model, fusion, and resource accounting.
//!
//! Each [`HwModuleDescriptor`] describes one synthesized hardware
//! implementation of a library function: its clock, its cycle cost as a
//! function of frame size, and the FPGA resources it occupies (the module
//! itself plus its stream-in/stream-out adapters). A [`ModuleDb`] maps
//! software function names to descriptors; functions without an entry stay
//! in software. [`ModuleDb::try_fuse`] evaluates whether a chain of
//! hardware functions should be merged into one module, and
//! [`DeviceBudget`] checks the summed footprint against the target device.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use num::{BigInt, BigRational, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowgraph::{DataDescriptor, FlowGraph};

// ── Errors ───────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum DbError {
    #[error("malformed module database: {0}")]
    Malformed(#[source] serde_json::Error),
    #[error("duplicate database entry for \"{0}\"")]
    DuplicateKey(String),
    #[error("module \"{name}\": freq_mhz must be finite and > 0 (got {freq_mhz})")]
    BadFrequency { name: String, freq_mhz: f64 },
    #[error("module \"{name}\": cycles_per_pixel denominator must be > 0")]
    ZeroDenominator { name: String },
    #[error("fused entry \"{name}\": fused_of must list at least 2 functions")]
    ShortFusedChain { name: String },
    #[error("fusion chain needs at least 2 functions")]
    ShortChain,
    #[error("\"{0}\" has no entry in the module database")]
    UnknownModule(String),
    #[error("\"{0}\" is not a function node in the graph")]
    UnknownFunction(String),
    #[error("utilization undefined: device budget has a zero component")]
    ZeroBudget,
    #[error("cycle arithmetic overflow while fusing \"{0}\"")]
    CycleOverflow(String),
}

// ── Resource accounting ──────────────────────────────────────────────

/// FPGA resource counts: block RAM, DSP slices, flip-flops, lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub bram: u64,
    pub dsp: u64,
    pub ff: u64,
    pub lut: u64,
}

impl ResourceVector {
    pub const fn new(bram: u64, dsp: u64, ff: u64, lut: u64) -> Self {
        ResourceVector { bram, dsp, ff, lut }
    }

    pub fn is_zero(&self) -> bool {
        *self == ResourceVector::default()
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector {
            bram: self.bram + rhs.bram,
            dsp: self.dsp + rhs.dsp,
            ff: self.ff + rhs.ff,
            lut: self.lut + rhs.lut,
        }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} BRAM, {} DSP, {} FF, {} LUT", self.bram, self.dsp, self.ff, self.lut)
    }
}

/// Sum of module plus adapter resources over a set of descriptors.
pub fn sum_resources<'a, I>(descs: I) -> ResourceVector
where
    I: IntoIterator<Item = &'a HwModuleDescriptor>,
{
    descs
        .into_iter()
        .fold(ResourceVector::default(), |acc, d| acc + d.resources + d.adapter_resources)
}

/// Per-component utilization percentages, rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Utilization {
    pub bram: f64,
    pub dsp: f64,
    pub ff: f64,
    pub lut: f64,
}

/// Resource totals of the target device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ResourceVector", into = "ResourceVector")]
pub struct DeviceBudget {
    totals: ResourceVector,
}

impl TryFrom<ResourceVector> for DeviceBudget {
    type Error = DbError;
    fn try_from(totals: ResourceVector) -> Result<Self, DbError> {
        DeviceBudget::new(totals)
    }
}

impl From<DeviceBudget> for ResourceVector {
    fn from(b: DeviceBudget) -> ResourceVector {
        b.totals
    }
}

impl Default for DeviceBudget {
    /// The XC7Z020 programmable logic: 280 BRAM, 220 DSP48E, 106,400 FF,
    /// 53,200 LUT.
    fn default() -> Self {
        DeviceBudget { totals: ResourceVector::new(280, 220, 106_400, 53_200) }
    }
}

impl DeviceBudget {
    pub fn new(totals: ResourceVector) -> Result<Self, DbError> {
        if totals.bram == 0 || totals.dsp == 0 || totals.ff == 0 || totals.lut == 0 {
            return Err(DbError::ZeroBudget);
        }
        Ok(DeviceBudget { totals })
    }

    pub fn totals(&self) -> ResourceVector {
        self.totals
    }

    /// 100 x used / total per component, one decimal.
    pub fn utilization(&self, used: ResourceVector) -> Utilization {
        let pct = |used: u64, total: u64| (used as f64 / total as f64 * 1000.0).round() / 10.0;
        Utilization {
            bram: pct(used.bram, self.totals.bram),
            dsp: pct(used.dsp, self.totals.dsp),
            ff: pct(used.ff, self.totals.ff),
            lut: pct(used.lut, self.totals.lut),
        }
    }

    /// Componentwise feasibility check.
    pub fn check(&self, used: ResourceVector) -> BudgetCheck {
        let mut over = Vec::new();
        if used.bram > self.totals.bram {
            over.push("bram");
        }
        if used.dsp > self.totals.dsp {
            over.push("dsp");
        }
        if used.ff > self.totals.ff {
            over.push("ff");
        }
        if used.lut > self.totals.lut {
            over.push("lut");
        }
        if over.is_empty() {
            BudgetCheck::Fit
        } else {
            BudgetCheck::Overflow(over)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BudgetCheck {
    Fit,
    /// Components where used exceeds the budget.
    Overflow(Vec<&'static str>),
}

// ── Cycle cost model ─────────────────────────────────────────────────

/// Cycles per pixel as an exact rational. Case-study entries derive the
/// rate from a measured total latency at one resolution, so the value is
/// rarely an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRate {
    pub num: u64,
    pub den: u64,
}

impl CycleRate {
    pub const fn new(num: u64, den: u64) -> Self {
        CycleRate { num, den }
    }

    pub const fn integer(cycles: u64) -> Self {
        CycleRate { num: cycles, den: 1 }
    }

    fn to_rational(self) -> BigRational {
        BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn checked_add(self, rhs: CycleRate) -> Option<CycleRate> {
        let num = (self.num as u128)
            .checked_mul(rhs.den as u128)?
            .checked_add((rhs.num as u128).checked_mul(self.den as u128)?)?;
        let den = (self.den as u128).checked_mul(rhs.den as u128)?;
        let g = num::integer::gcd(num, den);
        let (num, den) = (num / g, den / g);
        Some(CycleRate { num: u64::try_from(num).ok()?, den: u64::try_from(den).ok()? })
    }
}

/// One hardware implementation of a software library function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwModuleDescriptor {
    /// Name of the synthesized module, e.g. `hls::cvtColor`.
    pub hw_name: String,
    /// Library function it replaces; the database key.
    pub sw_name: String,
    pub freq_mhz: f64,
    pub cycles_overhead: u64,
    pub cycles_per_pixel: CycleRate,
    /// Resources of the module body.
    pub resources: ResourceVector,
    /// Stream-in/stream-out adapters and per-stage glue logic.
    pub adapter_resources: ResourceVector,
    /// For fused entries: the ordered chain of functions it replaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_of: Option<Vec<String>>,
}

impl HwModuleDescriptor {
    fn validate(&self) -> Result<(), DbError> {
        if !self.freq_mhz.is_finite() || self.freq_mhz <= 0.0 {
            return Err(DbError::BadFrequency {
                name: self.sw_name.clone(),
                freq_mhz: self.freq_mhz,
            });
        }
        if self.cycles_per_pixel.den == 0 {
            return Err(DbError::ZeroDenominator { name: self.sw_name.clone() });
        }
        if let Some(chain) = &self.fused_of {
            if chain.len() < 2 {
                return Err(DbError::ShortFusedChain { name: self.sw_name.clone() });
            }
        }
        Ok(())
    }

    /// Total cycles for one frame, exact.
    fn total_cycles(&self, pixels: u64) -> BigRational {
        BigRational::from_integer(BigInt::from(self.cycles_overhead))
            + self.cycles_per_pixel.to_rational() * BigRational::from_integer(BigInt::from(pixels))
    }

    /// Exact processing time in milliseconds:
    /// `(cycles_overhead + cycles_per_pixel x pixels) / (freq_mhz x 1000)`.
    /// The measured latencies behind the database already include AXI
    /// stream transfer, so no separate transfer term is added.
    fn time_ms_exact(&self, pixels: u64) -> BigRational {
        let khz = BigRational::from_float(self.freq_mhz).expect("validated finite frequency")
            * BigRational::from_integer(BigInt::from(1000));
        self.total_cycles(pixels) / khz
    }

    /// Estimated processing time for one frame, in milliseconds.
    pub fn estimate_time_ms(&self, frame: &DataDescriptor) -> f64 {
        self.time_ms_exact(frame.pixel_count())
            .to_f64()
            .expect("finite time estimate")
    }
}

// ── The database ─────────────────────────────────────────────────────

/// Map from software function name to hardware descriptor, plus measured
/// fused entries keyed by the ordered chain they replace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModuleDb {
    modules: BTreeMap<String, HwModuleDescriptor>,
    fused: BTreeMap<Vec<String>, HwModuleDescriptor>,
}

impl ModuleDb {
    /// Parse the JSON database format: an array of descriptors. Entries
    /// with `fused_of` become fused candidates; the rest are keyed by
    /// `sw_name`. An empty file yields an empty database.
    pub fn load(text: &str) -> Result<ModuleDb, DbError> {
        if text.trim().is_empty() {
            return Ok(ModuleDb::default());
        }
        let descs: Vec<HwModuleDescriptor> =
            serde_json::from_str(text).map_err(DbError::Malformed)?;
        ModuleDb::from_descriptors(descs)
    }

    pub fn from_descriptors(
        descs: impl IntoIterator<Item = HwModuleDescriptor>,
    ) -> Result<ModuleDb, DbError> {
        let mut db = ModuleDb::default();
        for desc in descs {
            desc.validate()?;
            match desc.fused_of.clone() {
                Some(chain) => {
                    if db.fused.insert(chain.clone(), desc).is_some() {
                        return Err(DbError::DuplicateKey(chain.join("+")));
                    }
                }
                None => {
                    if let Some(prev) = db.modules.insert(desc.sw_name.clone(), desc) {
                        return Err(DbError::DuplicateKey(prev.sw_name));
                    }
                }
            }
        }
        Ok(db)
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty() && self.fused.is_empty()
    }

    /// Hardware implementation for a software function, if any. Absence
    /// means the function runs as software.
    pub fn lookup(&self, sw_name: &str) -> Option<&HwModuleDescriptor> {
        self.modules.get(sw_name)
    }

    /// Measured fused entry for an exact ordered chain, if any.
    pub fn lookup_fused(&self, chain: &[String]) -> Option<&HwModuleDescriptor> {
        self.fused.get(chain)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &HwModuleDescriptor> {
        self.modules.values()
    }

    /// Decide whether a chain of hardware-matched functions should be
    /// merged into one module.
    ///
    /// The chain must be a linear path in the graph (each link has exactly
    /// one consumer, no branching). A measured fused entry in the database
    /// wins; otherwise the fused module is estimated pessimistically as
    /// the sum of component cycles clocked at the slowest component
    /// frequency. The fusion is accepted only if the fused estimate beats
    /// the separate-stage sum and fits the stage time target.
    pub fn try_fuse(
        &self,
        chain: &[&str],
        graph: &FlowGraph,
        target_ms: f64,
    ) -> Result<FuseDecision, DbError> {
        if chain.len() < 2 {
            return Err(DbError::ShortChain);
        }
        let mut nodes = Vec::with_capacity(chain.len());
        for id in chain {
            let node = graph
                .function(id)
                .ok_or_else(|| DbError::UnknownFunction(id.to_string()))?;
            let desc = self
                .lookup(&node.name)
                .ok_or_else(|| DbError::UnknownModule(node.name.clone()))?;
            nodes.push((node, desc));
        }

        if let Some(reason) = linearity_violation(graph, &nodes) {
            return Ok(FuseDecision::Reject(reason));
        }

        let pixels: Vec<u64> = nodes
            .iter()
            .map(|(node, _)| {
                node.inputs
                    .first()
                    .or_else(|| node.outputs.first())
                    .map_or(0, |d| graph.data[d].pixel_count())
            })
            .collect();

        let separate: BigRational = nodes
            .iter()
            .zip(&pixels)
            .map(|((_, desc), px)| desc.time_ms_exact(*px))
            .sum();

        let sw_names: Vec<String> = nodes.iter().map(|(n, _)| n.name.clone()).collect();
        let fused_desc = match self.lookup_fused(&sw_names) {
            Some(measured) => measured.clone(),
            None => self.pessimistic_fusion(&sw_names, &nodes)?,
        };
        let fused = fused_desc.time_ms_exact(pixels.first().copied().unwrap_or(0));

        let fused_ms = fused.to_f64().expect("finite fused estimate");
        let separate_ms = separate.to_f64().expect("finite separate estimate");
        if fused >= separate {
            return Ok(FuseDecision::Reject(FuseReject::NotFaster { fused_ms, separate_ms }));
        }
        let target = BigRational::from_float(target_ms).unwrap_or_else(|| separate.clone());
        if fused > target {
            return Ok(FuseDecision::Reject(FuseReject::OverTarget { fused_ms, target_ms }));
        }
        Ok(FuseDecision::Accept(Box::new(fused_desc)))
    }

    /// Build the pessimistic fused descriptor: summed cycles, slowest
    /// clock, summed resources.
    fn pessimistic_fusion(
        &self,
        sw_names: &[String],
        nodes: &[(&crate::flowgraph::FunctionNode, &HwModuleDescriptor)],
    ) -> Result<HwModuleDescriptor, DbError> {
        let joined = sw_names.join("+");
        let mut freq_mhz = f64::INFINITY;
        let mut cycles_overhead: u64 = 0;
        let mut cycles_per_pixel = CycleRate::integer(0);
        let mut resources = ResourceVector::default();
        let mut adapter_resources = ResourceVector::default();
        for (_, desc) in nodes {
            freq_mhz = freq_mhz.min(desc.freq_mhz);
            cycles_overhead = cycles_overhead
                .checked_add(desc.cycles_overhead)
                .ok_or_else(|| DbError::CycleOverflow(joined.clone()))?;
            cycles_per_pixel = cycles_per_pixel
                .checked_add(desc.cycles_per_pixel)
                .ok_or_else(|| DbError::CycleOverflow(joined.clone()))?;
            resources += desc.resources;
            adapter_resources += desc.adapter_resources;
        }
        Ok(HwModuleDescriptor {
            hw_name: format!("hls::fused({joined})"),
            sw_name: joined,
            freq_mhz,
            cycles_overhead,
            cycles_per_pixel,
            resources,
            adapter_resources,
            fused_of: Some(sw_names.to_vec()),
        })
    }
}

/// Check that the chain nodes form a linear path; `None` means eligible.
fn linearity_violation(
    graph: &FlowGraph,
    nodes: &[(&crate::flowgraph::FunctionNode, &HwModuleDescriptor)],
) -> Option<FuseReject> {
    for (i, (node, _)) in nodes.iter().enumerate() {
        if i > 0 && node.inputs.len() != 1 {
            return Some(FuseReject::NotLinear {
                node: node.id.clone(),
                why: format!("{} inputs", node.inputs.len()),
            });
        }
        if i + 1 < nodes.len() {
            if node.outputs.len() != 1 {
                return Some(FuseReject::NotLinear {
                    node: node.id.clone(),
                    why: format!("{} outputs", node.outputs.len()),
                });
            }
            let link = &node.outputs[0];
            let consumers = graph.consumers_of(link);
            if consumers.len() != 1 {
                return Some(FuseReject::NotLinear {
                    node: node.id.clone(),
                    why: format!("output \"{link}\" has {} consumers", consumers.len()),
                });
            }
            if consumers[0].id != nodes[i + 1].0.id {
                return Some(FuseReject::NotLinear {
                    node: node.id.clone(),
                    why: format!(
                        "output \"{link}\" feeds \"{}\", not the next chain function",
                        consumers[0].id
                    ),
                });
            }
        }
    }
    None
}

/// Outcome of a fusion trial.
#[derive(Debug, Clone, PartialEq)]
pub enum FuseDecision {
    Accept(Box<HwModuleDescriptor>),
    Reject(FuseReject),
}

/// The predicate a rejected fusion failed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuseReject {
    #[error("chain is not a linear path at \"{node}\" ({why})")]
    NotLinear { node: String, why: String },
    #[error("fused estimate {fused_ms:.2} ms is not faster than separate stages ({separate_ms:.2} ms)")]
    NotFaster { fused_ms: f64, separate_ms: f64 },
    #[error("fused estimate {fused_ms:.2} ms exceeds the stage target {target_ms:.2} ms")]
    OverTarget { fused_ms: f64, target_ms: f64 },
}

// ── Tests ────────────────────────────────────────────────────────────
