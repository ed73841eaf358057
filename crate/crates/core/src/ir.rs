//! Typed network graph with shape inference and structural validation.
//!
//! Layers reference their inputs by blob name (`bottom`) the way Caffe does.
//! A blob may be produced by several layers when in-place layers (ReLU,
//! Dropout) rewrite it; a bottom always binds to the most recent producer
//! declared before the consumer.

use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kernel sizes the IR accepts for convolution and pooling layers.
pub const ACCEPTED_KERNELS: [u32; 5] = [1, 3, 5, 7, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub ch: u32,
    pub h: u32,
    pub w: u32,
}

impl TensorShape {
    pub const fn new(ch: u32, h: u32, w: u32) -> Self {
        TensorShape { ch, h, w }
    }

    pub fn elements(&self) -> u64 {
        self.ch as u64 * self.h as u64 * self.w as u64
    }

    pub fn is_valid(&self) -> bool {
        self.ch >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.ch, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Data,
    Convolution,
    InnerProduct,
    ReLU,
    Pooling,
    Concat,
    Dropout,
    Softmax,
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Data => "Data",
            LayerKind::Convolution => "Convolution",
            LayerKind::InnerProduct => "InnerProduct",
            LayerKind::ReLU => "ReLU",
            LayerKind::Pooling => "Pooling",
            LayerKind::Concat => "Concat",
            LayerKind::Dropout => "Dropout",
            LayerKind::Softmax => "Softmax",
        }
    }

    /// `Input` is accepted as an alias of `Data`.
    pub fn from_type_name(name: &str) -> Option<Self> {
        Some(match name {
            "Data" | "Input" => LayerKind::Data,
            "Convolution" => LayerKind::Convolution,
            "InnerProduct" => LayerKind::InnerProduct,
            "ReLU" => LayerKind::ReLU,
            "Pooling" => LayerKind::Pooling,
            "Concat" => LayerKind::Concat,
            "Dropout" => LayerKind::Dropout,
            "Softmax" => LayerKind::Softmax,
            _ => return None,
        })
    }

    /// Layers that rewrite their input blob (`top == bottom`).
    pub fn is_in_place(&self) -> bool {
        matches!(self, LayerKind::ReLU | LayerKind::Dropout)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.type_name())
    }
}

/// An uninterpreted text-format field, kept so that training-only blocks
/// survive a parse/serialize round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub key: String,
    pub value: FieldValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldValue {
    /// Number, enum identifier or boolean, stored as written.
    Scalar(String),
    Str(String),
    Message(Vec<Field>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub num_output: u32,
    pub kernel: u32,
    pub stride: u32,
    pub pad: u32,
    pub extra: Vec<Field>,
}

impl ConvParams {
    pub fn new(num_output: u32, kernel: u32, stride: u32, pad: u32) -> Self {
        ConvParams { num_output, kernel, stride, pad, extra: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub mode: PoolMode,
    pub kernel: u32,
    pub stride: u32,
    pub global: bool,
    pub extra: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub bottoms: Vec<String>,
    pub tops: Vec<String>,
    pub conv: Option<ConvParams>,
    pub pool: Option<PoolParams>,
    pub dropout_ratio: Option<f64>,
    pub input_shape: Option<TensorShape>,
    /// Fields the analyzer does not interpret (fillers, lr_mult, include ...).
    pub annotations: Vec<Field>,
}

impl LayerSpec {
    fn bare(name: &str, kind: LayerKind, bottoms: &[&str], top: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            bottoms: bottoms.iter().map(|b| b.to_string()).collect(),
            tops: vec![top.to_string()],
            conv: None,
            pool: None,
            dropout_ratio: None,
            input_shape: None,
            annotations: Vec::new(),
        }
    }

    pub fn data(name: &str, shape: TensorShape) -> Self {
        let mut l = Self::bare(name, LayerKind::Data, &[], name);
        l.input_shape = Some(shape);
        l
    }

    pub fn conv(name: &str, bottom: &str, num_output: u32, kernel: u32, stride: u32, pad: u32) -> Self {
        let mut l = Self::bare(name, LayerKind::Convolution, &[bottom], name);
        l.conv = Some(ConvParams::new(num_output, kernel, stride, pad));
        l
    }

    pub fn inner_product(name: &str, bottom: &str, num_output: u32) -> Self {
        let mut l = Self::bare(name, LayerKind::InnerProduct, &[bottom], name);
        l.conv = Some(ConvParams::new(num_output, 1, 1, 0));
        l
    }

    /// In-place ReLU on `blob`.
    pub fn relu(name: &str, blob: &str) -> Self {
        Self::bare(name, LayerKind::ReLU, &[blob], blob)
    }

    /// In-place dropout on `blob`.
    pub fn dropout(name: &str, blob: &str, ratio: f64) -> Self {
        let mut l = Self::bare(name, LayerKind::Dropout, &[blob], blob);
        l.dropout_ratio = Some(ratio);
        l
    }

    pub fn concat(name: &str, bottoms: &[&str]) -> Self {
        Self::bare(name, LayerKind::Concat, bottoms, name)
    }

    pub fn max_pool(name: &str, bottom: &str, kernel: u32, stride: u32) -> Self {
        let mut l = Self::bare(name, LayerKind::Pooling, &[bottom], name);
        l.pool = Some(PoolParams { mode: PoolMode::Max, kernel, stride, global: false, extra: Vec::new() });
        l
    }

    pub fn global_avg_pool(name: &str, bottom: &str) -> Self {
        let mut l = Self::bare(name, LayerKind::Pooling, &[bottom], name);
        l.pool = Some(PoolParams { mode: PoolMode::Avg, kernel: 0, stride: 1, global: true, extra: Vec::new() });
        l
    }

    pub fn softmax(name: &str, bottom: &str) -> Self {
        Self::bare(name, LayerKind::Softmax, &[bottom], name)
    }

    /// Display module: the name prefix before the first `/`, or the whole name.
    pub fn module(&self) -> &str {
        module_of(&self.name)
    }
}

pub fn module_of(name: &str) -> &str {
    name.split_once('/').map_or(name, |(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cycle detected: `{from}` -> `{to}` closes a loop")]
    CycleDetected { from: String, to: String },
    #[error("layer `{layer}` reads blob `{blob}` which no layer produces")]
    UnknownBlob { layer: String, blob: String },
    #[error("shape mismatch at `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("layer `{layer}` produces a non-positive dimension (kernel larger than padded input)")]
    NegativeDimension { layer: String },
    #[error("layer `{layer}` is missing its {what}")]
    MissingParams { layer: String, what: &'static str },
    #[error("invalid parameter in `{layer}`: {detail}")]
    InvalidParam { layer: String, detail: String },
    #[error("network has no Data layer")]
    NoDataLayer,
    #[error("duplicate layer name `{0}`")]
    DuplicateLayerName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub layer: Option<String>,
    /// Stable rule identifier, e.g. `in-place-violation`.
    pub rule: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn error(layer: Option<&str>, rule: &'static str, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, layer: layer.map(str::to_string), rule, message: message.into() }
    }

    fn warning(layer: Option<&str>, rule: &'static str, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, layer: layer.map(str::to_string), rule, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.layer {
            Some(l) => write!(f, "{sev}[{}] {l}: {}", self.rule, self.message),
            None => write!(f, "{sev}[{}] {}", self.rule, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub name: Option<String>,
    pub layers: Vec<LayerSpec>,
    /// Output shape per layer name; empty until [`NetworkGraph::infer_shapes`].
    pub shapes: BTreeMap<String, TensorShape>,
    /// Top-level fields that are not interpreted.
    pub annotations: Vec<Field>,
}

impl NetworkGraph {
    pub fn new(name: impl Into<String>) -> Self {
        NetworkGraph { name: Some(name.into()), ..Default::default() }
    }

    pub fn push(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn shape(&self, layer: &str) -> Option<TensorShape> {
        self.shapes.get(layer).copied()
    }

    /// For each layer, the index of the producing layer of each bottom.
    ///
    /// A bottom binds to the latest producer declared before the consumer;
    /// failing that, to the first producer declared after it (a forward
    /// reference, which `validate` reports but `topo_sort` tolerates).
    pub fn producers(&self) -> Result<Vec<Vec<usize>>, GraphError> {
        let mut by_blob: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            for t in &l.tops {
                by_blob.entry(t.as_str()).or_default().push(i);
            }
        }
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.bottoms
                    .iter()
                    .map(|b| {
                        let cands = by_blob.get(b.as_str()).ok_or_else(|| GraphError::UnknownBlob {
                            layer: l.name.clone(),
                            blob: b.clone(),
                        })?;
                        cands
                            .iter()
                            .rev()
                            .find(|&&p| p < i)
                            .or_else(|| cands.iter().find(|&&p| p > i))
                            .copied()
                            .ok_or_else(|| GraphError::UnknownBlob { layer: l.name.clone(), blob: b.clone() })
                    })
                    .collect()
            })
            .collect()
    }

    /// Layer indices in dependency order; ties keep declaration order.
    pub fn topo_sort(&self) -> Result<Vec<usize>, GraphError> {
        let producers = self.producers()?;
        topo_order(&self.layers, &producers)
    }

    /// Returns a copy of the graph with `shapes` filled for every layer.
    pub fn infer_shapes(&self) -> Result<NetworkGraph, GraphError> {
        let producers = self.producers()?;
        let order = topo_order(&self.layers, &producers)?;
        let mut out: Vec<Option<TensorShape>> = vec![None; self.layers.len()];
        for &i in &order {
            let layer = &self.layers[i];
            let ins: Vec<TensorShape> =
                producers[i].iter().map(|&p| out[p].expect("producer precedes consumer in topo order")).collect();
            out[i] = Some(output_shape(layer, &ins)?);
        }
        let mut g = self.clone();
        g.shapes = self
            .layers
            .iter()
            .zip(out)
            .map(|(l, s)| (l.name.clone(), s.expect("every layer visited")))
            .collect();
        Ok(g)
    }

    /// Input shapes of layer `idx`; requires inferred shapes.
    pub fn input_shapes(&self, idx: usize, producers: &[Vec<usize>]) -> Vec<TensorShape> {
        producers[idx].iter().filter_map(|&p| self.shapes.get(&self.layers[p].name).copied()).collect()
    }

    pub fn data_shape(&self) -> Option<TensorShape> {
        self.layers.iter().find(|l| l.kind == LayerKind::Data).and_then(|l| l.input_shape)
    }

    /// Structural diagnostics. An empty list means every graph invariant holds.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();

        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                diags.push(Diagnostic::error(Some(&l.name), "duplicate-name", "layer name is declared more than once"));
            }
        }

        let data_layers = self.layers.iter().filter(|l| l.kind == LayerKind::Data).count();
        if data_layers == 0 {
            diags.push(Diagnostic::error(None, "data-layer", "network has no Data layer"));
        } else if data_layers > 1 {
            diags.push(Diagnostic::error(None, "data-layer", format!("network has {data_layers} Data layers, expected exactly one")));
        }

        for l in &self.layers {
            self.validate_layer(l, &mut diags);
        }

        let producers = match self.producers() {
            Ok(p) => p,
            Err(e) => {
                diags.push(graph_error_diag(&e));
                return diags;
            }
        };
        for (i, l) in self.layers.iter().enumerate() {
            for (b, &p) in l.bottoms.iter().zip(&producers[i]) {
                if p > i {
                    diags.push(Diagnostic::error(
                        Some(&l.name),
                        "forward-reference",
                        format!("bottom `{b}` is only produced by a later layer `{}`", self.layers[p].name),
                    ));
                }
            }
        }
        if let Err(e) = topo_order(&self.layers, &producers) {
            diags.push(graph_error_diag(&e));
            return diags;
        }
        if diags.iter().all(|d| d.severity != Severity::Error) {
            if let Err(e) = self.infer_shapes() {
                diags.push(graph_error_diag(&e));
            }
        }
        diags
    }

    fn validate_layer(&self, l: &LayerSpec, diags: &mut Vec<Diagnostic>) {
        let name = Some(l.name.as_str());
        match l.kind {
            LayerKind::Data => {
                if !l.bottoms.is_empty() {
                    diags.push(Diagnostic::error(name, "data-bottom", "Data layer must not have bottoms"));
                }
                match l.input_shape {
                    None => diags.push(Diagnostic::error(name, "input-shape", "Data layer has no input shape")),
                    Some(s) if !s.is_valid() => {
                        diags.push(Diagnostic::error(name, "input-shape", format!("input shape {s} has a zero dimension")))
                    }
                    _ => {}
                }
            }
            _ if l.bottoms.is_empty() => {
                diags.push(Diagnostic::error(name, "missing-bottom", "layer has no bottom"));
            }
            _ => {}
        }
        if l.kind == LayerKind::Concat && l.bottoms.len() < 2 {
            diags.push(Diagnostic::error(name, "concat-arity", "Concat needs at least two bottoms"));
        }
        if l.tops.is_empty() {
            diags.push(Diagnostic::error(name, "missing-top", "layer has no top"));
        } else if l.kind.is_in_place() {
            if l.tops.len() != 1 || l.bottoms.len() != 1 || l.tops[0] != l.bottoms[0] {
                diags.push(Diagnostic::error(name, "in-place-violation", "in-place layer must have top equal to its bottom"));
            }
        } else if l.kind != LayerKind::Data && l.tops.iter().any(|t| t != &l.name) {
            diags.push(Diagnostic::error(name, "top-name", "top needs to match the layer name"));
        }

        match l.kind {
            LayerKind::Convolution | LayerKind::InnerProduct => match &l.conv {
                None => diags.push(Diagnostic::error(name, "missing-params", "layer has no convolution parameters")),
                Some(c) => {
                    if c.num_output == 0 {
                        diags.push(Diagnostic::error(name, "num-output", "num_output must be positive"));
                    }
                    if l.kind == LayerKind::Convolution {
                        if !ACCEPTED_KERNELS.contains(&c.kernel) {
                            diags.push(Diagnostic::error(name, "kernel-size", format!("kernel size {} is not supported", c.kernel)));
                        }
                        if c.stride == 0 {
                            diags.push(Diagnostic::error(name, "stride", "stride must be at least 1"));
                        }
                        if c.pad > c.kernel / 2 {
                            diags.push(Diagnostic::warning(
                                name,
                                "unnecessary-padding",
                                format!("padding {} exceeds floor(k/2) = {}", c.pad, c.kernel / 2),
                            ));
                        }
                    }
                }
            },
            LayerKind::Pooling => match &l.pool {
                None => diags.push(Diagnostic::error(name, "missing-params", "layer has no pooling parameters")),
                Some(p) if !p.global => {
                    if !ACCEPTED_KERNELS.contains(&p.kernel) && p.kernel != 2 {
                        diags.push(Diagnostic::error(name, "kernel-size", format!("kernel size {} is not supported", p.kernel)));
                    }
                    if p.stride == 0 {
                        diags.push(Diagnostic::error(name, "stride", "stride must be at least 1"));
                    }
                }
                _ => {}
            },
            LayerKind::Dropout => {
                if let Some(r) = l.dropout_ratio {
                    if !(0.0..=1.0).contains(&r) {
                        diags.push(Diagnostic::error(name, "dropout-ratio", format!("dropout ratio {r} outside [0, 1]")));
                    }
                }
            }
            _ => {}
        }
    }
}

fn graph_error_diag(e: &GraphError) -> Diagnostic {
    let (layer, rule) = match e {
        GraphError::CycleDetected { to, .. } => (Some(to.as_str()), "cycle"),
        GraphError::UnknownBlob { layer, .. } => (Some(layer.as_str()), "unknown-blob"),
        GraphError::ShapeMismatch { layer, .. } => (Some(layer.as_str()), "shape-mismatch"),
        GraphError::NegativeDimension { layer } => (Some(layer.as_str()), "negative-dimension"),
        GraphError::MissingParams { layer, .. } => (Some(layer.as_str()), "missing-params"),
        GraphError::InvalidParam { layer, .. } => (Some(layer.as_str()), "invalid-param"),
        GraphError::NoDataLayer => (None, "data-layer"),
        GraphError::DuplicateLayerName(n) => (Some(n.as_str()), "duplicate-name"),
    };
    Diagnostic::error(layer, rule, e.to_string())
}

fn topo_order(layers: &[LayerSpec], producers: &[Vec<usize>]) -> Result<Vec<usize>, GraphError> {
    let n = layers.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, ps) in producers.iter().enumerate() {
        for &p in ps {
            indegree[i] += 1;
            consumers[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    let (from, to) = find_back_edge(&indegree, producers);
    Err(GraphError::CycleDetected { from: layers[from].name.clone(), to: layers[to].name.clone() })
}

/// DFS over the unsorted remainder (all nodes with non-zero indegree) to find
/// the edge that closes a cycle.
fn find_back_edge(indegree: &[usize], producers: &[Vec<usize>]) -> (usize, usize) {
    let n = indegree.len();
    let stuck: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    for start in (0..n).filter(|&i| stuck[i]) {
        if state[start] != 0 {
            continue;
        }
        // walk edges consumer -> producer; a cycle is a cycle either way
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if let Some(&p) = producers[node].get(top.1) {
                top.1 += 1;
                if !stuck[p] {
                    continue;
                }
                match state[p] {
                    0 => {
                        state[p] = 1;
                        stack.push((p, 0));
                    }
                    1 => return (p, node),
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    unreachable!("topological sort stalled without a cycle")
}

/// Output shape of one layer given its input shapes.
pub fn output_shape(layer: &LayerSpec, ins: &[TensorShape]) -> Result<TensorShape, GraphError> {
    let name = || layer.name.clone();
    let first = || {
        ins.first().copied().ok_or_else(|| GraphError::ShapeMismatch { layer: name(), detail: "layer has no input".into() })
    };
    match layer.kind {
        LayerKind::Data => {
            let s = layer.input_shape.ok_or(GraphError::MissingParams { layer: name(), what: "input shape" })?;
            if !s.is_valid() {
                return Err(GraphError::InvalidParam { layer: name(), detail: format!("input shape {s}") });
            }
            Ok(s)
        }
        LayerKind::Convolution => {
            let c = layer.conv.as_ref().ok_or(GraphError::MissingParams { layer: name(), what: "convolution_param" })?;
            if c.num_output == 0 {
                return Err(GraphError::InvalidParam { layer: name(), detail: "num_output is 0".into() });
            }
            let i = first()?;
            Ok(TensorShape::new(
                c.num_output,
                window_out(layer, i.h, c.kernel, c.stride, c.pad)?,
                window_out(layer, i.w, c.kernel, c.stride, c.pad)?,
            ))
        }
        LayerKind::InnerProduct => {
            let c = layer.conv.as_ref().ok_or(GraphError::MissingParams { layer: name(), what: "inner_product_param" })?;
            if c.num_output == 0 {
                return Err(GraphError::InvalidParam { layer: name(), detail: "num_output is 0".into() });
            }
            first()?;
            Ok(TensorShape::new(c.num_output, 1, 1))
        }
        LayerKind::Pooling => {
            let p = layer.pool.as_ref().ok_or(GraphError::MissingParams { layer: name(), what: "pooling_param" })?;
            let i = first()?;
            if p.global {
                Ok(TensorShape::new(i.ch, 1, 1))
            } else {
                Ok(TensorShape::new(
                    i.ch,
                    window_out(layer, i.h, p.kernel, p.stride, 0)?,
                    window_out(layer, i.w, p.kernel, p.stride, 0)?,
                ))
            }
        }
        LayerKind::Concat => {
            let i0 = first()?;
            let mut ch: u32 = 0;
            for s in ins {
                if s.h != i0.h || s.w != i0.w {
                    return Err(GraphError::ShapeMismatch {
                        layer: name(),
                        detail: format!("concat inputs disagree on spatial size: {i0} vs {s}"),
                    });
                }
                ch = ch
                    .checked_add(s.ch)
                    .ok_or_else(|| GraphError::InvalidParam { layer: name(), detail: "channel count overflows".into() })?;
            }
            Ok(TensorShape::new(ch, i0.h, i0.w))
        }
        LayerKind::ReLU | LayerKind::Dropout | LayerKind::Softmax => first(),
    }
}

/// `floor((in + 2p - k) / s) + 1`.
fn window_out(layer: &LayerSpec, input: u32, kernel: u32, stride: u32, pad: u32) -> Result<u32, GraphError> {
    if stride == 0 {
        return Err(GraphError::InvalidParam { layer: layer.name.clone(), detail: "stride is 0".into() });
    }
    if kernel == 0 {
        return Err(GraphError::InvalidParam { layer: layer.name.clone(), detail: "kernel size is 0".into() });
    }
    let span = input as i64 + 2 * pad as i64 - kernel as i64;
    if span < 0 {
        return Err(GraphError::NegativeDimension { layer: layer.name.clone() });
    }
    Ok((span / stride as i64 + 1) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> NetworkGraph {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(3, 256, 256)))
            .push(LayerSpec::conv("conv1", "data", 64, 3, 2, 1))
            .push(LayerSpec::relu("relu1", "conv1"));
        g
    }

    #[test]
    fn singleton_sorts_to_itself() {
        let mut g = NetworkGraph::new("one");
        g.push(LayerSpec::data("data", TensorShape::new(1, 1, 1)));
        assert_eq!(g.topo_sort().unwrap(), vec![0]);
    }

    #[test]
    fn conv1_shape_matches_table_row() {
        let g = chain().infer_shapes().unwrap();
        assert_eq!(g.shape("conv1"), Some(TensorShape::new(64, 128, 128)));
        assert_eq!(g.shape("relu1"), Some(TensorShape::new(64, 128, 128)));
    }

    #[test]
    fn pointwise_conv_keeps_spatial_dims() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(5, 13, 7)))
            .push(LayerSpec::conv("c", "data", 9, 1, 1, 0));
        assert_eq!(g.infer_shapes().unwrap().shape("c"), Some(TensorShape::new(9, 13, 7)));
    }

    #[test]
    fn global_pool_collapses_spatial() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(1024, 8, 8)))
            .push(LayerSpec::global_avg_pool("pool10", "data"));
        assert_eq!(g.infer_shapes().unwrap().shape("pool10"), Some(TensorShape::new(1024, 1, 1)));
    }

    #[test]
    fn odd_input_uses_floor() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(1, 7, 7)))
            .push(LayerSpec::conv("c", "data", 1, 3, 2, 1));
        assert_eq!(g.infer_shapes().unwrap().shape("c"), Some(TensorShape::new(1, 4, 4)));
    }

    #[test]
    fn concat_sums_channels_and_rejects_spatial_mismatch() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(4, 8, 8)))
            .push(LayerSpec::conv("a", "data", 3, 1, 1, 0))
            .push(LayerSpec::conv("b", "data", 5, 3, 1, 1))
            .push(LayerSpec::concat("cat", &["a", "b"]));
        assert_eq!(g.infer_shapes().unwrap().shape("cat"), Some(TensorShape::new(8, 8, 8)));

        g.layers[2].conv.as_mut().unwrap().stride = 2;
        assert!(matches!(g.infer_shapes(), Err(GraphError::ShapeMismatch { .. })));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_negative_dimension() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(1, 2, 2)))
            .push(LayerSpec::conv("c", "data", 1, 5, 1, 1));
        assert_eq!(g.infer_shapes(), Err(GraphError::NegativeDimension { layer: "c".into() }));
    }

    #[test]
    fn two_layer_cycle_is_detected() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(1, 4, 4)))
            .push(LayerSpec::conv("A", "B", 1, 1, 1, 0))
            .push(LayerSpec::conv("B", "A", 1, 1, 1, 0));
        match g.topo_sort() {
            Err(GraphError::CycleDetected { from, to }) => {
                let pair = [from.as_str(), to.as_str()];
                assert!(pair == ["A", "B"] || pair == ["B", "A"], "{pair:?}");
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_declaration_sorts_stably() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::conv("b", "a", 1, 1, 1, 0))
            .push(LayerSpec::data("data", TensorShape::new(1, 4, 4)))
            .push(LayerSpec::conv("a", "data", 1, 1, 1, 0))
            .push(LayerSpec::conv("c", "data", 1, 1, 1, 0));
        assert_eq!(g.topo_sort().unwrap(), vec![1, 2, 0, 3]);
        assert!(g.validate().iter().any(|d| d.rule == "forward-reference"));
    }

    #[test]
    fn in_place_relu_binds_to_latest_producer() {
        let mut g = chain();
        g.push(LayerSpec::conv("conv2", "conv1", 8, 1, 1, 0));
        let p = g.producers().unwrap();
        assert_eq!(p[3], vec![2]);
        assert_eq!(p[2], vec![1]);
    }

    #[test]
    fn unnecessary_padding_is_a_warning() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(1, 4, 4)))
            .push(LayerSpec::conv("c", "data", 1, 1, 1, 1));
        let d = g.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
        assert_eq!(d[0].rule, "unnecessary-padding");
    }

    #[test]
    fn relu_with_distinct_top_is_in_place_violation() {
        let mut g = chain();
        g.layers[2].tops = vec!["relu1".into()];
        let d = g.validate();
        assert!(d.iter().any(|d| d.rule == "in-place-violation" && d.severity == Severity::Error), "{d:?}");
    }

    #[test]
    fn concat_needs_two_bottoms_and_single_data_layer() {
        let mut g = chain();
        g.push(LayerSpec::concat("cat", &["conv1"]));
        g.push(LayerSpec::data("data2", TensorShape::new(1, 1, 1)));
        let rules: Vec<_> = g.validate().into_iter().map(|d| d.rule).collect();
        assert!(rules.contains(&"concat-arity"));
        assert!(rules.contains(&"data-layer"));
    }

    #[test]
    fn valid_chain_has_no_diagnostics() {
        assert!(chain().validate().is_empty());
    }

    #[test]
    fn module_prefix() {
        assert_eq!(module_of("fire2/squeeze3x3"), "fire2");
        assert_eq!(module_of("conv1"), "conv1");
    }
}
