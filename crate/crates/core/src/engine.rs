//! Golden-model inference over [`NetworkGraph`]s.
//!
//! Straightforward loops in a pinned summation order (input channel outer,
//! kernel rows then columns inner) so results are bit-reproducible. The
//! accelerator simulator is checked against this module.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{GraphError, LayerKind, NetworkGraph, PoolMode, TensorShape};

/// Dense feature map, channel-major: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3D {
    pub shape: TensorShape,
    pub data: Vec<f32>,
}

impl Tensor3D {
    pub fn zeros(shape: TensorShape) -> Self {
        Tensor3D { shape, data: vec![0.0; shape.elements() as usize] }
    }

    pub fn from_vec(shape: TensorShape, data: Vec<f32>) -> Result<Self, EngineError> {
        if data.len() as u64 != shape.elements() {
            return Err(EngineError::ShapeMismatch(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.elements(),
                data.len()
            )));
        }
        Ok(Tensor3D { shape, data })
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.h as usize + y) * self.shape.w as usize + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = (self.shape.h * self.shape.w) as usize;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Filters indexed `[co][ci][j][i]` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ch_in: u32,
    pub ch_out: u32,
    pub k: u32,
    pub filters: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerWeights {
    pub fn zeros(ch_in: u32, ch_out: u32, k: u32) -> Self {
        LayerWeights {
            ch_in,
            ch_out,
            k,
            filters: vec![0.0; (ch_out * ch_in * k * k) as usize],
            bias: vec![0.0; ch_out as usize],
        }
    }

    #[inline]
    pub fn filter_index(&self, co: usize, ci: usize, j: usize, i: usize) -> usize {
        let k = self.k as usize;
        ((co * self.ch_in as usize + ci) * k + j) * k + i
    }

    pub fn is_consistent(&self) -> bool {
        self.filters.len() as u64 == self.ch_out as u64 * self.ch_in as u64 * self.k as u64 * self.k as u64
            && self.bias.len() == self.ch_out as usize
    }

    pub fn len(&self) -> usize {
        self.filters.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer name to weights, in network order.
pub type WeightMap = IndexMap<String, LayerWeights>;

/// How a convolution accumulates its products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accumulation {
    /// One f32 accumulator, input channel outer, kernel row-major inner.
    #[default]
    Sequential,
    /// As `Sequential`, but accumulating in f64 (tests only).
    Wide,
    /// Per input channel a 9-input balanced adder tree, accumulated across
    /// input channels in f32. Reproduces the accelerator bit for bit; only
    /// kernels of size 1 and 3 are supported.
    AdderTree,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layer `{0}` produced a non-finite value")]
    NonFiniteResult(String),
    #[error("no weights for layer `{0}`")]
    MissingWeights(String),
    #[error("layer `{layer}` cannot be executed: {reason}")]
    Unsupported { layer: String, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn window_len(input: u32, k: u32, s: u32, p: u32) -> Result<u32, EngineError> {
    let span = input as i64 + 2 * p as i64 - k as i64;
    if span < 0 || s == 0 {
        return Err(EngineError::ShapeMismatch(format!("window k={k} s={s} p={p} does not fit input {input}")));
    }
    Ok((span / s as i64 + 1) as u32)
}

#[inline]
fn tree9(p: &[f32; 9]) -> f32 {
    ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7])) + p[8]
}

/// Zero-padded cross-correlation plus bias, optionally followed by ReLU.
pub fn conv_layer(
    input: &Tensor3D,
    w: &LayerWeights,
    stride: u32,
    pad: u32,
    fuse_relu: bool,
    mode: Accumulation,
) -> Result<Tensor3D, EngineError> {
    if !w.is_consistent() {
        return Err(EngineError::ShapeMismatch("weight buffer lengths disagree with ch_in/ch_out/k".into()));
    }
    if w.ch_in != input.shape.ch {
        return Err(EngineError::ShapeMismatch(format!("weights expect {} input channels, input has {}", w.ch_in, input.shape.ch)));
    }
    if mode == Accumulation::AdderTree && !matches!(w.k, 1 | 3) {
        return Err(EngineError::Unsupported { layer: String::new(), reason: format!("adder-tree mode needs k in {{1,3}}, got {}", w.k) });
    }
    let (k, s, p) = (w.k as i64, stride as i64, pad as i64);
    let out_shape = TensorShape::new(
        w.ch_out,
        window_len(input.shape.h, w.k, stride, pad)?,
        window_len(input.shape.w, w.k, stride, pad)?,
    );
    let (h_in, w_in) = (input.shape.h as i64, input.shape.w as i64);
    let mut out = Tensor3D::zeros(out_shape);
    let pixel = |ci: usize, yy: i64, xx: i64| -> f32 {
        if yy < 0 || xx < 0 || yy >= h_in || xx >= w_in {
            0.0
        } else {
            input.get(ci, yy as usize, xx as usize)
        }
    };

    for co in 0..w.ch_out as usize {
        for y in 0..out_shape.h as usize {
            for x in 0..out_shape.w as usize {
                let (y0, x0) = (s * y as i64 - p, s * x as i64 - p);
                let v = match mode {
                    Accumulation::Sequential => {
                        let mut acc = 0f32;
                        for ci in 0..w.ch_in as usize {
                            for j in 0..k {
                                for i in 0..k {
                                    acc += pixel(ci, y0 + j, x0 + i) * w.filters[w.filter_index(co, ci, j as usize, i as usize)];
                                }
                            }
                        }
                        acc + w.bias[co]
                    }
                    Accumulation::Wide => {
                        let mut acc = 0f64;
                        for ci in 0..w.ch_in as usize {
                            for j in 0..k {
                                for i in 0..k {
                                    acc += pixel(ci, y0 + j, x0 + i) as f64
                                        * w.filters[w.filter_index(co, ci, j as usize, i as usize)] as f64;
                                }
                            }
                        }
                        (acc + w.bias[co] as f64) as f32
                    }
                    Accumulation::AdderTree => {
                        let mut acc = 0f32;
                        for ci in 0..w.ch_in as usize {
                            let mut prods = [0f32; 9];
                            if k == 1 {
                                prods[4] = pixel(ci, y0, x0) * w.filters[w.filter_index(co, ci, 0, 0)];
                            } else {
                                for j in 0..3 {
                                    for i in 0..3 {
                                        prods[(j * 3 + i) as usize] =
                                            pixel(ci, y0 + j, x0 + i) * w.filters[w.filter_index(co, ci, j as usize, i as usize)];
                                    }
                                }
                            }
                            acc += tree9(&prods);
                        }
                        acc + w.bias[co]
                    }
                };
                let idx = out.index(co, y, x);
                out.data[idx] = if fuse_relu { v.max(0.0) } else { v };
            }
        }
    }
    Ok(out)
}

/// Fully connected layer over the flattened input; `w.ch_in` is `ch*h*w`.
pub fn inner_product(input: &Tensor3D, w: &LayerWeights) -> Result<Tensor3D, EngineError> {
    if !w.is_consistent() || w.k != 1 || w.ch_in as u64 != input.shape.elements() {
        return Err(EngineError::ShapeMismatch(format!(
            "inner product weights ({} inputs, k={}) do not fit input {}",
            w.ch_in, w.k, input.shape
        )));
    }
    let n = input.data.len();
    let data = (0..w.ch_out as usize)
        .map(|co| {
            let row = &w.filters[co * n..(co + 1) * n];
            let mut acc = 0f32;
            for (a, b) in input.data.iter().zip(row) {
                acc += a * b;
            }
            acc + w.bias[co]
        })
        .collect();
    Ok(Tensor3D { shape: TensorShape::new(w.ch_out, 1, 1), data })
}

pub fn relu(input: &Tensor3D) -> Tensor3D {
    Tensor3D { shape: input.shape, data: input.data.iter().map(|&v| v.max(0.0)).collect() }
}

/// Unpadded max pooling; output size uses floor division.
pub fn max_pool(input: &Tensor3D, k: u32, s: u32) -> Result<Tensor3D, EngineError> {
    let shape = TensorShape::new(input.shape.ch, window_len(input.shape.h, k, s, 0)?, window_len(input.shape.w, k, s, 0)?);
    let mut out = Tensor3D::zeros(shape);
    let (k, s) = (k as usize, s as usize);
    for c in 0..shape.ch as usize {
        for y in 0..shape.h as usize {
            for x in 0..shape.w as usize {
                let mut m = f32::NEG_INFINITY;
                for j in 0..k {
                    for i in 0..k {
                        m = m.max(input.get(c, s * y + j, s * x + i));
                    }
                }
                let idx = out.index(c, y, x);
                out.data[idx] = m;
            }
        }
    }
    Ok(out)
}

/// Unpadded average pooling over k x k windows.
pub fn avg_pool(input: &Tensor3D, k: u32, s: u32) -> Result<Tensor3D, EngineError> {
    let shape = TensorShape::new(input.shape.ch, window_len(input.shape.h, k, s, 0)?, window_len(input.shape.w, k, s, 0)?);
    let mut out = Tensor3D::zeros(shape);
    let scale = 1.0 / (k * k) as f32;
    let (k, s) = (k as usize, s as usize);
    for c in 0..shape.ch as usize {
        for y in 0..shape.h as usize {
            for x in 0..shape.w as usize {
                let mut sum = 0f32;
                for j in 0..k {
                    for i in 0..k {
                        sum += input.get(c, s * y + j, s * x + i);
                    }
                }
                let idx = out.index(c, y, x);
                out.data[idx] = sum * scale;
            }
        }
    }
    Ok(out)
}

/// Per-channel spatial mean: the row-major sum scaled by `1/(h*w)`.
pub fn avg_pool_global(input: &Tensor3D) -> Tensor3D {
    let scale = 1.0 / (input.shape.h * input.shape.w) as f32;
    let data = (0..input.shape.ch as usize)
        .map(|c| {
            let mut sum = 0f32;
            for &v in input.channel(c) {
                sum += v;
            }
            sum * scale
        })
        .collect();
    Tensor3D { shape: TensorShape::new(input.shape.ch, 1, 1), data }
}

pub fn max_pool_global(input: &Tensor3D) -> Tensor3D {
    let data = (0..input.shape.ch as usize)
        .map(|c| input.channel(c).iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    Tensor3D { shape: TensorShape::new(input.shape.ch, 1, 1), data }
}

/// Channel concatenation in argument order.
pub fn concat(inputs: &[&Tensor3D]) -> Result<Tensor3D, EngineError> {
    let first = inputs.first().ok_or_else(|| EngineError::ShapeMismatch("concat of nothing".into()))?;
    let mut ch = 0;
    let mut data = Vec::new();
    for t in inputs {
        if (t.shape.h, t.shape.w) != (first.shape.h, first.shape.w) {
            return Err(EngineError::ShapeMismatch(format!("concat inputs {} and {} disagree spatially", first.shape, t.shape)));
        }
        ch += t.shape.ch;
        data.extend_from_slice(&t.data);
    }
    Ok(Tensor3D { shape: TensorShape::new(ch, first.shape.h, first.shape.w), data })
}

/// Softmax over channels of a 1x1 map, stabilised by subtracting the maximum.
pub fn softmax(input: &Tensor3D) -> Result<Tensor3D, EngineError> {
    if input.shape.h != 1 || input.shape.w != 1 {
        return Err(EngineError::ShapeMismatch(format!("softmax expects a 1x1 map, got {}", input.shape)));
    }
    let max = input.data.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = input.data.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor3D { shape: input.shape, data: exps.iter().map(|e| (e / sum) as f32).collect() })
}

/// Runs every layer in topological order and returns the last layer's output.
pub fn run_network(graph: &NetworkGraph, weights: &WeightMap, input: &Tensor3D, mode: Accumulation) -> Result<Tensor3D, EngineError> {
    let mut outs = run_network_traced(graph, weights, input, mode)?;
    Ok(outs.pop().map(|(_, t)| t).expect("graph has at least a Data layer"))
}

/// Like [`run_network`] but returns every layer's output, in execution order.
pub fn run_network_traced(
    graph: &NetworkGraph,
    weights: &WeightMap,
    input: &Tensor3D,
    mode: Accumulation,
) -> Result<Vec<(String, Tensor3D)>, EngineError> {
    let producers = graph.producers()?;
    let order = graph.topo_sort()?;
    if order.is_empty() {
        return Err(EngineError::Graph(GraphError::NoDataLayer));
    }
    let mut results: Vec<Option<Tensor3D>> = vec![None; graph.layers.len()];
    let mut trace = Vec::with_capacity(order.len());
    for &i in &order {
        let layer = &graph.layers[i];
        let ins: Vec<&Tensor3D> = producers[i].iter().map(|&p| results[p].as_ref().expect("topological order")).collect();
        let one = || ins.first().copied().ok_or_else(|| EngineError::ShapeMismatch(format!("layer `{}` has no input", layer.name)));
        let out = match layer.kind {
            LayerKind::Data => {
                if let Some(s) = layer.input_shape {
                    if s != input.shape {
                        return Err(EngineError::ShapeMismatch(format!("input is {}, network expects {s}", input.shape)));
                    }
                }
                input.clone()
            }
            LayerKind::Convolution => {
                let c = layer.conv.as_ref().ok_or_else(|| GraphError::MissingParams { layer: layer.name.clone(), what: "convolution_param" })?;
                let w = weights.get(&layer.name).ok_or_else(|| EngineError::MissingWeights(layer.name.clone()))?;
                if w.k != c.kernel || w.ch_out != c.num_output {
                    return Err(EngineError::ShapeMismatch(format!(
                        "weights for `{}` are {}->{} k={}, layer needs {} outputs k={}",
                        layer.name, w.ch_in, w.ch_out, w.k, c.num_output, c.kernel
                    )));
                }
                conv_layer(one()?, w, c.stride, c.pad, false, mode).map_err(|e| name_unsupported(e, &layer.name))?
            }
            LayerKind::InnerProduct => {
                let w = weights.get(&layer.name).ok_or_else(|| EngineError::MissingWeights(layer.name.clone()))?;
                inner_product(one()?, w)?
            }
            LayerKind::ReLU => relu(one()?),
            LayerKind::Dropout => one()?.clone(),
            LayerKind::Pooling => {
                let p = layer.pool.as_ref().ok_or_else(|| GraphError::MissingParams { layer: layer.name.clone(), what: "pooling_param" })?;
                match (p.mode, p.global) {
                    (PoolMode::Avg, true) => avg_pool_global(one()?),
                    (PoolMode::Max, true) => max_pool_global(one()?),
                    (PoolMode::Avg, false) => avg_pool(one()?, p.kernel, p.stride)?,
                    (PoolMode::Max, false) => max_pool(one()?, p.kernel, p.stride)?,
                }
            }
            LayerKind::Concat => concat(&ins)?,
            LayerKind::Softmax => softmax(one()?)?,
        };
        if !out.is_finite() {
            return Err(EngineError::NonFiniteResult(layer.name.clone()));
        }
        trace.push((layer.name.clone(), out.clone()));
        results[i] = Some(out);
    }
    Ok(trace)
}

fn name_unsupported(e: EngineError, layer: &str) -> EngineError {
    match e {
        EngineError::Unsupported { reason, .. } => EngineError::Unsupported { layer: layer.to_string(), reason },
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ch: u32, h: u32, w: u32, data: Vec<f32>) -> Tensor3D {
        Tensor3D::from_vec(TensorShape::new(ch, h, w), data).unwrap()
    }

    #[test]
    fn scalar_conv() {
        let w = LayerWeights { ch_in: 1, ch_out: 1, k: 1, filters: vec![1.5], bias: vec![0.25] };
        let out = conv_layer(&t(1, 1, 1, vec![2.0]), &w, 1, 0, false, Accumulation::Sequential).unwrap();
        assert_eq!(out.data, vec![3.25]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut w = LayerWeights::zeros(1, 1, 3);
        w.filters[4] = 1.0;
        let input = t(1, 3, 4, (0..12).map(|v| v as f32 - 5.0).collect());
        for mode in [Accumulation::Sequential, Accumulation::Wide, Accumulation::AdderTree] {
            assert_eq!(conv_layer(&input, &w, 1, 1, false, mode).unwrap(), input);
        }
    }

    #[test]
    fn fused_relu_clamps() {
        let w = LayerWeights { ch_in: 1, ch_out: 1, k: 1, filters: vec![-1.0], bias: vec![0.0] };
        let out = conv_layer(&t(1, 1, 2, vec![2.0, -3.0]), &w, 1, 0, true, Accumulation::Sequential).unwrap();
        assert_eq!(out.data, vec![0.0, 3.0]);
    }

    #[test]
    fn relu_basic() {
        assert_eq!(relu(&t(3, 1, 1, vec![-1.0, 0.0, 2.0])).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn global_avg_of_constant() {
        let out = avg_pool_global(&t(2, 3, 3, vec![0.7; 18]));
        for v in out.data {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_softmax() {
        let out = softmax(&t(1024, 1, 1, vec![3.0; 1024])).unwrap();
        assert!(out.data.iter().all(|&p| p == 1.0 / 1024.0));
    }

    #[test]
    fn softmax_needs_1x1() {
        assert!(softmax(&t(1, 2, 1, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn concat_order_and_mismatch() {
        let a = t(1, 1, 2, vec![1.0, 2.0]);
        let b = t(2, 1, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape, TensorShape::new(3, 1, 2));
        assert_eq!(c.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(concat(&[&a, &t(1, 2, 1, vec![0.0, 0.0])]).is_err());
    }

    #[test]
    fn max_pool_window() {
        let out = max_pool(&t(1, 3, 3, vec![1.0, 9.0, 2.0, 3.0, 4.0, 5.0, 8.0, 6.0, 7.0]), 2, 1).unwrap();
        assert_eq!(out.data, vec![9.0, 9.0, 8.0, 7.0]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let w = LayerWeights::zeros(2, 1, 1);
        assert!(matches!(
            conv_layer(&t(1, 1, 1, vec![0.0]), &w, 1, 0, false, Accumulation::Sequential),
            Err(EngineError::ShapeMismatch(_))
        ));
    }
}
