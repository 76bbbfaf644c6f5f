//! Trace ingestion and the causal function/data flow graph.
//!
//! A recorded trace is a list of timestamped library-function calls, each
//! naming the data buffers it consumed and produced. [`TraceLog::parse`]
//! validates the trace file, [`FlowGraph::from_trace`] reconstructs the
//! causal graph (one function node per call, one data node per produced
//! value, edges following dataflow), and the graph then serves as the
//! editable IR: placements can be overridden, the graph round-trips through
//! a JSON IR file, and [`FlowGraph::to_dot`] renders it for inspection.
//!
//! Graphs are immutable values: edits like [`FlowGraph::with_placement`]
//! return a new graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonio;

// ── Errors ───────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed trace: {0}")]
    MalformedTrace(#[source] serde_json::Error),
    #[error("event {index} ({function}): t_end_us {t_end_us} < t_start_us {t_start_us}")]
    EndBeforeStart { index: usize, function: String, t_start_us: u64, t_end_us: u64 },
    #[error("event {index}: duplicate seq {seq}")]
    DuplicateSeq { index: usize, seq: u64 },
    #[error("event {index} ({function}) references unknown data id \"{id}\"")]
    UnknownDataId { index: usize, function: String, id: String },
    #[error("event seq {seq}: data id \"{id}\" appears as both input and output")]
    InPlaceUpdate { seq: u64, id: String },
    #[error("event seq {seq}: data id \"{id}\" listed more than once as output")]
    DuplicateOutput { seq: u64, id: String },
    #[error("unknown function node \"{id}\"")]
    UnknownNode { id: String },
    #[error("malformed IR: {0}")]
    MalformedIr(#[source] serde_json::Error),
    #[error("IR edge references undeclared node \"{id}\"")]
    UndeclaredNode { id: String },
    #[error("IR edge \"{from}\" -> \"{to}\" does not connect a data node and a function node")]
    NonBipartiteEdge { from: String, to: String },
    #[error("data node \"{id}\" has more than one producer")]
    MultipleProducers { id: String },
    #[error("IR graph contains a cycle")]
    CyclicIr,
    #[error("\"{consumer}\" (seq {cseq}) consumes \"{data}\" before its producer \"{producer}\" (seq {pseq}) runs")]
    CausalityViolation { data: String, producer: String, consumer: String, pseq: u64, cseq: u64 },
    #[error("id \"{id}\" declared as both a function and a data node")]
    AmbiguousId { id: String },
    #[error("IR functions \"{first}\" and \"{second}\" share seq {seq}")]
    DuplicateIrSeq { first: String, second: String, seq: u64 },
}

/// A descriptor whose fields violate the frame-geometry rules.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DescriptorError {
    #[error("height, width and channels must all be >= 1")]
    ZeroDimension,
    #[error("bit_depth {0} outside 1..=64")]
    BitDepthRange(u32),
    #[error("bit_depth {bit_depth} x channels {channels} is not a whole number of bytes")]
    NotByteAligned { bit_depth: u32, channels: u32 },
}

// ── Data descriptors ─────────────────────────────────────────────────

/// Geometry of one data buffer: a frame of `height x width` pixels with
/// `channels` samples of `bit_depth` bits each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDescriptor", into = "RawDescriptor")]
pub struct DataDescriptor {
    height: u32,
    width: u32,
    bit_depth: u32,
    channels: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawDescriptor {
    height: u32,
    width: u32,
    bit_depth: u32,
    channels: u32,
}

impl TryFrom<RawDescriptor> for DataDescriptor {
    type Error = DescriptorError;
    fn try_from(raw: RawDescriptor) -> Result<Self, DescriptorError> {
        DataDescriptor::new(raw.height, raw.width, raw.bit_depth, raw.channels)
    }
}

impl From<DataDescriptor> for RawDescriptor {
    fn from(d: DataDescriptor) -> Self {
        RawDescriptor { height: d.height, width: d.width, bit_depth: d.bit_depth, channels: d.channels }
    }
}

impl DataDescriptor {
    pub fn new(height: u32, width: u32, bit_depth: u32, channels: u32) -> Result<Self, DescriptorError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DescriptorError::ZeroDimension);
        }
        if bit_depth == 0 || bit_depth > 64 {
            return Err(DescriptorError::BitDepthRange(bit_depth));
        }
        if !(bit_depth * channels).is_multiple_of(8) {
            return Err(DescriptorError::NotByteAligned { bit_depth, channels });
        }
        Ok(DataDescriptor { height, width, bit_depth, channels })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    /// Buffer size in bytes: `height x width x channels x bit_depth / 8`.
    pub fn byte_size(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width) * u64::from(self.channels)
            * u64::from(self.bit_depth)
            / 8
    }

    pub fn pixel_count(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width)
    }

    /// Width of the stream port needed to move one pixel per beat:
    /// `bit_depth x channels`.
    pub fn port_width_bits(&self) -> u32 {
        self.bit_depth * self.channels
    }
}

impl fmt::Display for DataDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Width-first, matching the usual "1920x1080" reading of a frame.
        write!(f, "{}\u{d7}{}\u{d7}{}bit\u{d7}{}ch", self.width, self.height, self.bit_depth, self.channels)
    }
}

// ── Trace log ────────────────────────────────────────────────────────

/// One recorded library-function call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub function: String,
    pub t_start_us: u64,
    pub t_end_us: u64,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl TraceEvent {
    pub fn duration_us(&self) -> u64 {
        self.t_end_us - self.t_start_us
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_us() as f64 / 1000.0
    }
}

/// A validated trace: events sorted by `seq`, every referenced data id
/// resolved to a descriptor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceLog {
    pub events: Vec<TraceEvent>,
    pub data: BTreeMap<String, DataDescriptor>,
}

#[derive(Deserialize)]
struct TraceDoc {
    #[serde(default)]
    events: Vec<TraceEvent>,
    #[serde(default)]
    data: BTreeMap<String, DataDescriptor>,
}

impl TraceLog {
    /// Parse and validate the JSON trace format.
    pub fn parse(text: &str) -> Result<TraceLog, GraphError> {
        let doc: TraceDoc = serde_json::from_str(text).map_err(GraphError::MalformedTrace)?;
        let mut events = doc.events;
        for (index, ev) in events.iter().enumerate() {
            if ev.t_end_us < ev.t_start_us {
                return Err(GraphError::EndBeforeStart {
                    index,
                    function: ev.function.clone(),
                    t_start_us: ev.t_start_us,
                    t_end_us: ev.t_end_us,
                });
            }
            for id in ev.inputs.iter().chain(&ev.outputs) {
                if !doc.data.contains_key(id) {
                    return Err(GraphError::UnknownDataId {
                        index,
                        function: ev.function.clone(),
                        id: id.clone(),
                    });
                }
            }
        }
        events.sort_by_key(|ev| ev.seq);
        for (index, pair) in events.windows(2).enumerate() {
            if pair[0].seq == pair[1].seq {
                return Err(GraphError::DuplicateSeq { index: index + 1, seq: pair[1].seq });
            }
        }
        Ok(TraceLog { events, data: doc.data })
    }

    /// Drop events whose function name appears in `names` (one-shot setup
    /// calls the user wants excluded from the pipeline).
    pub fn without_functions(mut self, names: &[String]) -> TraceLog {
        self.events.retain(|ev| !names.contains(&ev.function));
        self
    }

    pub fn total_duration_us(&self) -> u64 {
        self.events.iter().map(TraceEvent::duration_us).sum()
    }
}

// ── Flow graph ───────────────────────────────────────────────────────

/// Where a function is allowed to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Auto,
    ForceCpu,
    ForceFpga,
}

/// One function call in the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionNode {
    /// Stable node id: the function name, or `name#seq` when the name is
    /// not unique within the trace.
    pub id: String,
    pub name: String,
    pub seq: u64,
    pub duration_us: u64,
    pub placement: Placement,
    /// Data node ids consumed, in call order.
    pub inputs: Vec<String>,
    /// Data node ids produced, in call order.
    pub outputs: Vec<String>,
}

impl FunctionNode {
    pub fn duration_ms(&self) -> f64 {
        self.duration_us as f64 / 1000.0
    }
}

/// Bipartite function/data DAG with timings, sizes and placement
/// directives. Function nodes are kept in chronological (`seq`) order,
/// which is also a topological order of the graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowGraph {
    pub functions: Vec<FunctionNode>,
    pub data: BTreeMap<String, DataDescriptor>,
}

impl FlowGraph {
    /// Reconstruct the causal graph from a trace.
    ///
    /// Each event becomes one function node. An input data id resolves to
    /// the value most recently produced before the event (latest producer
    /// with smaller seq); ids consumed before any producer become
    /// external-input data nodes. Each producing event creates a fresh
    /// data node, so every data node has at most one producer.
    pub fn from_trace(log: &TraceLog) -> Result<FlowGraph, GraphError> {
        let mut name_counts: HashMap<&str, usize> = HashMap::new();
        for ev in &log.events {
            *name_counts.entry(ev.function.as_str()).or_insert(0) += 1;
        }

        let mut graph = FlowGraph::default();
        // data id -> (current node id, number of nodes created so far)
        let mut current: HashMap<&str, (String, usize)> = HashMap::new();

        for ev in &log.events {
            for out in &ev.outputs {
                if ev.inputs.contains(out) {
                    return Err(GraphError::InPlaceUpdate { seq: ev.seq, id: out.clone() });
                }
                if ev.outputs.iter().filter(|o| *o == out).count() > 1 {
                    return Err(GraphError::DuplicateOutput { seq: ev.seq, id: out.clone() });
                }
            }

            let fn_id = if name_counts[ev.function.as_str()] > 1 {
                format!("{}#{}", ev.function, ev.seq)
            } else {
                ev.function.clone()
            };

            let mut inputs = Vec::with_capacity(ev.inputs.len());
            for id in &ev.inputs {
                let node = match current.get(id.as_str()) {
                    Some((node, _)) => node.clone(),
                    None => {
                        // Consumed before any producer: external input.
                        graph.data.insert(id.clone(), log.data[id]);
                        current.insert(id, (id.clone(), 1));
                        id.clone()
                    }
                };
                inputs.push(node);
            }

            let mut outputs = Vec::with_capacity(ev.outputs.len());
            for id in &ev.outputs {
                let version = current.get(id.as_str()).map_or(0, |(_, n)| *n);
                let node = if version == 0 { id.clone() } else { format!("{id}@{}", version + 1) };
                graph.data.insert(node.clone(), log.data[id]);
                current.insert(id, (node.clone(), version + 1));
                outputs.push(node);
            }

            graph.functions.push(FunctionNode {
                id: fn_id,
                name: ev.function.clone(),
                seq: ev.seq,
                duration_us: ev.duration_us(),
                placement: Placement::Auto,
                inputs,
                outputs,
            });
        }

        graph.validate()?;
        Ok(graph)
    }

    /// Sum of function durations.
    pub fn total_time_us(&self) -> u64 {
        self.functions.iter().map(|f| f.duration_us).sum()
    }

    pub fn total_time_ms(&self) -> f64 {
        self.total_time_us() as f64 / 1000.0
    }

    pub fn function(&self, id: &str) -> Option<&FunctionNode> {
        self.functions.iter().find(|f| f.id == id)
    }

    /// Function node producing the given data node, if any.
    pub fn producer_of(&self, data_id: &str) -> Option<&FunctionNode> {
        self.functions.iter().find(|f| f.outputs.iter().any(|o| o == data_id))
    }

    /// Function nodes consuming the given data node.
    pub fn consumers_of(&self, data_id: &str) -> Vec<&FunctionNode> {
        self.functions
            .iter()
            .filter(|f| f.inputs.iter().any(|i| i == data_id))
            .collect()
    }

    /// All edges in canonical order (per function: inputs, then outputs).
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        for f in &self.functions {
            for d in &f.inputs {
                edges.push((d.clone(), f.id.clone()));
            }
            for d in &f.outputs {
                edges.push((f.id.clone(), d.clone()));
            }
        }
        edges
    }

    /// Return a copy of the graph with one function's placement changed.
    pub fn with_placement(&self, node_id: &str, placement: Placement) -> Result<FlowGraph, GraphError> {
        let mut graph = self.clone();
        match graph.functions.iter_mut().find(|f| f.id == node_id) {
            Some(node) => node.placement = placement,
            None => return Err(GraphError::UnknownNode { id: node_id.to_string() }),
        }
        Ok(graph)
    }

    /// Structural checks: bipartite ids, single producer per data node,
    /// edge endpoints declared, acyclic.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut fn_ids = BTreeSet::new();
        for f in &self.functions {
            fn_ids.insert(f.id.as_str());
            if self.data.contains_key(&f.id) {
                return Err(GraphError::AmbiguousId { id: f.id.clone() });
            }
        }
        let mut produced: BTreeMap<&str, (&str, u64)> = BTreeMap::new();
        for f in &self.functions {
            for d in f.inputs.iter().chain(&f.outputs) {
                if !self.data.contains_key(d) {
                    return Err(GraphError::UndeclaredNode { id: d.clone() });
                }
            }
            for d in &f.outputs {
                if produced.insert(d, (&f.id, f.seq)).is_some() {
                    return Err(GraphError::MultipleProducers { id: d.clone() });
                }
            }
        }
        // Dataflow must run forward in time: a producer always precedes
        // its consumers in seq order.
        for f in &self.functions {
            for d in &f.inputs {
                if let Some((producer, pseq)) = produced.get(d.as_str()) {
                    if *pseq >= f.seq {
                        return Err(GraphError::CausalityViolation {
                            data: d.clone(),
                            producer: producer.to_string(),
                            consumer: f.id.clone(),
                            pseq: *pseq,
                            cseq: f.seq,
                        });
                    }
                }
            }
        }
        self.topo_check(&fn_ids)
    }

    /// Kahn's algorithm over the bipartite graph; fails on cycles.
    fn topo_check(&self, fn_ids: &BTreeSet<&str>) -> Result<(), GraphError> {
        let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
        let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for id in fn_ids {
            indegree.entry(id).or_default();
        }
        for id in self.data.keys() {
            indegree.entry(id).or_default();
        }
        for f in &self.functions {
            for d in &f.inputs {
                succs.entry(d.as_str()).or_default().push(f.id.as_str());
                *indegree.entry(f.id.as_str()).or_default() += 1;
            }
            for d in &f.outputs {
                succs.entry(f.id.as_str()).or_default().push(d.as_str());
                *indegree.entry(d.as_str()).or_default() += 1;
            }
        }
        let mut queue: Vec<&str> =
            indegree.iter().filter(|(_, deg)| **deg == 0).map(|(id, _)| *id).collect();
        let mut seen = 0usize;
        while let Some(id) = queue.pop() {
            seen += 1;
            for next in succs.get(id).into_iter().flatten() {
                let deg = indegree.get_mut(next).expect("all nodes have an indegree entry");
                *deg -= 1;
                if *deg == 0 {
                    queue.push(next);
                }
            }
        }
        if seen != indegree.len() {
            return Err(GraphError::CyclicIr);
        }
        Ok(())
    }

    // ── IR serialization ─────────────────────────────────────────────

    /// Serialize to the JSON IR format (sorted keys, trailing newline).
    pub fn to_ir_json(&self) -> String {
        let mut functions = BTreeMap::new();
        let mut placement = BTreeMap::new();
        for f in &self.functions {
            functions.insert(
                f.id.clone(),
                IrFunction { name: f.name.clone(), seq: f.seq, duration_us: f.duration_us },
            );
            if f.placement != Placement::Auto {
                placement.insert(f.id.clone(), f.placement);
            }
        }
        let edges = self
            .edges()
            .into_iter()
            .map(|(from, to)| IrEdge { from, to })
            .collect();
        let doc = IrDoc { data: self.data.clone(), edges, functions, placement };
        jsonio::to_sorted_pretty(&doc)
    }

    /// Parse the JSON IR format back into a graph.
    pub fn from_ir_json(text: &str) -> Result<FlowGraph, GraphError> {
        let doc: IrDoc = serde_json::from_str(text).map_err(GraphError::MalformedIr)?;

        let mut ordered: Vec<(&String, &IrFunction)> = doc.functions.iter().collect();
        ordered.sort_by_key(|(_, f)| f.seq);
        for pair in ordered.windows(2) {
            if pair[0].1.seq == pair[1].1.seq {
                return Err(GraphError::DuplicateIrSeq {
                    first: pair[0].0.clone(),
                    second: pair[1].0.clone(),
                    seq: pair[0].1.seq,
                });
            }
        }

        let mut graph = FlowGraph { functions: Vec::new(), data: doc.data };
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (id, f) in ordered {
            index.insert(id.as_str(), graph.functions.len());
            graph.functions.push(FunctionNode {
                id: id.clone(),
                name: f.name.clone(),
                seq: f.seq,
                duration_us: f.duration_us,
                placement: doc.placement.get(id).copied().unwrap_or_default(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            });
        }
        for id in doc.placement.keys() {
            if !index.contains_key(id.as_str()) {
                return Err(GraphError::UnknownNode { id: id.clone() });
            }
        }

        for edge in &doc.edges {
            let from_fn = index.get(edge.from.as_str()).copied();
            let to_fn = index.get(edge.to.as_str()).copied();
            let from_data = graph.data.contains_key(&edge.from);
            let to_data = graph.data.contains_key(&edge.to);
            match (from_fn, from_data, to_fn, to_data) {
                (Some(_), _, _, true) => {
                    let i = from_fn.expect("checked");
                    graph.functions[i].outputs.push(edge.to.clone());
                }
                (_, true, Some(i), _) => {
                    graph.functions[i].inputs.push(edge.from.clone());
                }
                (None, false, _, _) => {
                    return Err(GraphError::UndeclaredNode { id: edge.from.clone() });
                }
                (_, _, None, false) => {
                    return Err(GraphError::UndeclaredNode { id: edge.to.clone() });
                }
                _ => {
                    return Err(GraphError::NonBipartiteEdge {
                        from: edge.from.clone(),
                        to: edge.to.clone(),
                    });
                }
            }
        }

        graph.validate()?;
        Ok(graph)
    }

    // ── DOT rendering ────────────────────────────────────────────────

    /// Render as Graphviz DOT: ellipses for data (geometry and byte size),
    /// boxes for functions (name and milliseconds), nodes in chronological
    /// order, edges following dataflow.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph flow {\n  rankdir=TB;\n");
        let mut emitted: BTreeSet<&str> = BTreeSet::new();
        for f in &self.functions {
            for d in &f.inputs {
                emit_data_node(&mut out, &mut emitted, &self.data, d);
            }
            out.push_str(&format!(
                "  {} [shape=box, label=\"{}\\n{:.1} ms\"];\n",
                dot_quote(&f.id),
                dot_escape(&f.name),
                f.duration_ms()
            ));
            for d in &f.outputs {
                emit_data_node(&mut out, &mut emitted, &self.data, d);
            }
        }
        for id in self.data.keys() {
            emit_data_node(&mut out, &mut emitted, &self.data, id);
        }
        for (from, to) in self.edges() {
            out.push_str(&format!("  {} -> {};\n", dot_quote(&from), dot_quote(&to)));
        }
        out.push_str("}\n");
        out
    }
}

fn emit_data_node<'a>(
    out: &mut String,
    emitted: &mut BTreeSet<&'a str>,
    data: &'a BTreeMap<String, DataDescriptor>,
    id: &'a str,
) {
    if emitted.insert(id) {
        let desc = &data[id];
        out.push_str(&format!(
            "  {} [shape=ellipse, label=\"{}\\n{} B\"];\n",
            dot_quote(id),
            desc,
            desc.byte_size()
        ));
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", dot_escape(s))
}

#[derive(Serialize, Deserialize)]
struct IrFunction {
    name: String,
    seq: u64,
    duration_us: u64,
}

#[derive(Serialize, Deserialize)]
struct IrEdge {
    from: String,
    to: String,
}

#[derive(Serialize, Deserialize)]
struct IrDoc {
    data: BTreeMap<String, DataDescriptor>,
    edges: Vec<IrEdge>,
    functions: BTreeMap<String, IrFunction>,
    #[serde(default)]
    placement: BTreeMap<String, Placement>,
}

// ── Tests ────────────────────────────────────────────────────────────
