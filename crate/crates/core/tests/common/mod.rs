#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use znq_core::engine::{LayerWeights, Tensor3D};
use znq_core::ir::{LayerSpec, NetworkGraph, TensorShape};
use znq_core::weights::SplitMix64;

/// `|a - b| / max(|a|, |b|)`, zero when both are equal.
pub fn rel_err(a: f32, b: f32) -> f64 {
    if a == b {
        return 0.0;
    }
    let (a, b) = (a as f64, b as f64);
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn max_rel_err(a: &Tensor3D, b: &Tensor3D) -> f64 {
    assert_eq!(a.shape, b.shape);
    a.data.iter().zip(&b.data).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

pub fn random_tensor(shape: TensorShape, seed: u64) -> Tensor3D {
    let mut rng = SplitMix64::new(seed);
    let data = (0..shape.elements()).map(|_| rng.next_symmetric(1.0)).collect();
    Tensor3D::from_vec(shape, data).unwrap()
}

/// Straight-line zero-padded cross-correlation, accumulating in f64.
pub fn brute_conv(input: &Tensor3D, w: &LayerWeights, s: usize, p: usize) -> Vec<f64> {
    let (ch_in, h, wd) = (input.shape.ch as usize, input.shape.h as usize, input.shape.w as usize);
    let k = w.k as usize;
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (wd + 2 * p - k) / s + 1;
    let mut out = Vec::with_capacity(w.ch_out as usize * ho * wo);
    for co in 0..w.ch_out as usize {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = w.bias[co] as f64;
                for ci in 0..ch_in {
                    for j in 0..k {
                        for i in 0..k {
                            let (r, c) = ((s * y + j) as isize - p as isize, (s * x + i) as isize - p as isize);
                            if r < 0 || c < 0 || r >= h as isize || c >= wd as isize {
                                continue;
                            }
                            let v = input.data[(ci * h + r as usize) * wd + c as usize] as f64;
                            acc += v * w.filters[((co * ch_in + ci) * k + j) * k + i] as f64;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Sum of absolute products feeding each brute-force output: an error scale
/// for f32 accumulation.
pub fn brute_conv_magnitude(input: &Tensor3D, w: &LayerWeights, s: usize, p: usize) -> Vec<f64> {
    let abs_in = Tensor3D::from_vec(input.shape, input.data.iter().map(|v| v.abs()).collect()).unwrap();
    let abs_w = LayerWeights {
        filters: w.filters.iter().map(|v| v.abs()).collect(),
        bias: w.bias.iter().map(|v| v.abs()).collect(),
        ..w.clone()
    };
    brute_conv(&abs_in, &abs_w, s, p)
}

/// Random network drawn from the grammar the accelerator accepts: 3x3/1x1
/// convolutions with optional fused ReLU, fire modules (squeeze, two
/// expands, concat), dropout, then global average pooling and softmax.
/// Spatial dims stay within 16 and every conv has at most 32 outputs.
pub fn random_accel_net(seed: u64) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = NetworkGraph::new(format!("rand{seed}"));
    let shape = TensorShape::new(rng.random_range(1..=32), rng.random_range(1..=16), rng.random_range(1..=16));
    g.push(LayerSpec::data("data", shape));
    let mut blob = "data".to_string();
    let blocks = rng.random_range(1..=4);
    for b in 0..blocks {
        let k = if rng.random_bool(0.5) { 3 } else { 1 };
        let s = if rng.random_bool(0.3) { 2 } else { 1 };
        if rng.random_bool(0.4) {
            let sq = format!("fire{b}/squeeze");
            g.push(LayerSpec::conv(&sq, &blob, rng.random_range(1..=32), k, s, k / 2));
            g.push(LayerSpec::relu(&format!("fire{b}/relu_squeeze"), &sq));
            let n = rng.random_range(1..=32);
            let (e1, e3) = (format!("fire{b}/expand1x1"), format!("fire{b}/expand3x3"));
            g.push(LayerSpec::conv(&e1, &sq, n, 1, 1, 0));
            g.push(LayerSpec::relu(&format!("fire{b}/relu_expand1x1"), &e1));
            g.push(LayerSpec::conv(&e3, &sq, n, 3, 1, 1));
            g.push(LayerSpec::relu(&format!("fire{b}/relu_expand3x3"), &e3));
            blob = format!("fire{b}/concat");
            g.push(LayerSpec::concat(&blob, &[e1.as_str(), e3.as_str()]));
        } else {
            let name = format!("conv{b}");
            g.push(LayerSpec::conv(&name, &blob, rng.random_range(1..=32), k, s, k / 2));
            if rng.random_bool(0.7) {
                g.push(LayerSpec::relu(&format!("relu{b}"), &name));
            }
            blob = name;
        }
        if rng.random_bool(0.15) {
            g.push(LayerSpec::dropout(&format!("drop{b}"), &blob, 0.5));
        }
    }
    g.push(LayerSpec::global_avg_pool("pool", &blob));
    g.push(LayerSpec::softmax("prob", "pool"));
    g
}
