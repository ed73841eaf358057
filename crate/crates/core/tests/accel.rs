mod common;

use std::collections::HashSet;

use common::{max_rel_err, random_accel_net, random_tensor};
use znq_core::accel::{self, icache_slot, macc_3x3, AcceleratorConfig, SimError, SimOptions};
use znq_core::engine::{self, Accumulation, LayerWeights, Tensor3D, WeightMap};
use znq_core::ir::{LayerSpec, NetworkGraph, TensorShape as S};
use znq_core::weights::random_weights;

fn traced() -> SimOptions {
    SimOptions { trace_addresses: true }
}

#[test]
fn icache_slot_examples() {
    assert_eq!(icache_slot(0, 0, 0, 16, 3).unwrap(), 0);
    assert_eq!(icache_slot(5, 2, 3, 4, 8).unwrap(), 51);
    assert!(matches!(icache_slot(0, 0, 0, 8193, 1), Err(SimError::LineTooWide { width: 8193, .. })));
    assert!(icache_slot(3, 255, 31, 256, 32).unwrap() < 32768);
}

#[test]
fn macc_one_hot_and_zero() {
    let pixels: [f32; 9] = std::array::from_fn(|n| n as f32 * 1.5 - 2.0);
    assert_eq!(macc_3x3(&pixels, &[0.0; 9]), 0.0);
    for j in 0..9 {
        let mut w = [0.0; 9];
        w[j] = 1.0;
        assert_eq!(macc_3x3(&pixels, &w), pixels[j]);
    }
}

#[test]
fn minimal_layer_counters() {
    let mut g = NetworkGraph::new("one");
    g.push(LayerSpec::data("data", S::new(1, 1, 1)));
    g.push(LayerSpec::conv("c", "data", 1, 1, 1, 0));
    let net = accel::compile(&g).unwrap();
    let mut w = WeightMap::new();
    w.insert("c".into(), LayerWeights { ch_in: 1, ch_out: 1, k: 1, filters: vec![0.5], bias: vec![0.25] });
    let input = Tensor3D::from_vec(S::new(1, 1, 1), vec![3.0]).unwrap();
    let out = accel::run_network(&net, &AcceleratorConfig::default(), &w, &input, traced()).unwrap();
    assert_eq!(out.output.data, vec![1.75]);
    let c = out.layers[0].counters;
    assert_eq!((c.input_reads, c.weight_reads, c.output_writes, c.output_reads), (1, 2, 1, 0));
}

#[test]
fn zero_input_and_bias_gives_uniform_softmax() {
    let g = random_accel_net(3);
    let w = random_weights(&g, 1).unwrap();
    let shape = g.data_shape().unwrap();
    let net = accel::compile(&g).unwrap();
    let out = accel::run_network(&net, &AcceleratorConfig::default(), &w, &Tensor3D::zeros(shape), SimOptions::default()).unwrap();
    let n = out.output.data.len() as f32;
    assert!(out.output.data.iter().all(|&p| p == 1.0 / n));
}

fn stride_case(ch_in: u32, h: u32, w: u32, ch_out: u32, k: u32, s: u32) -> (NetworkGraph, WeightMap, Tensor3D) {
    let mut g = NetworkGraph::new("s");
    g.push(LayerSpec::data("data", S::new(ch_in, h, w)));
    g.push(LayerSpec::conv("c", "data", ch_out, k, s, k / 2));
    let weights = random_weights(&g, 9).unwrap();
    let input = random_tensor(S::new(ch_in, h, w), 4);
    (g, weights, input)
}

#[test]
fn stride_two_matches_engine_bit_exactly() {
    for (h, w) in [(7, 7), (8, 5), (1, 9), (16, 16)] {
        for k in [1, 3] {
            let (g, weights, input) = stride_case(5, h, w, 7, k, 2);
            let net = accel::compile(&g).unwrap();
            let sim = accel::run_network(&net, &AcceleratorConfig::default(), &weights, &input, SimOptions::default()).unwrap();
            let oracle = engine::run_network(&g, &weights, &input, Accumulation::AdderTree).unwrap();
            assert_eq!(sim.output, oracle, "h={h} w={w} k={k}");
            let seq = engine::run_network(&g, &weights, &input, Accumulation::Sequential).unwrap();
            assert_eq!(sim.output.shape, seq.shape);
        }
    }
}

#[test]
fn single_fetch_and_coverage() {
    for (k, s) in [(3, 1), (3, 2), (1, 1), (1, 2)] {
        let (g, weights, input) = stride_case(3, 9, 6, 4, k, s);
        let net = accel::compile(&g).unwrap();
        let out = accel::run_network(&net, &AcceleratorConfig::default(), &weights, &input, traced()).unwrap();
        let cfg = &net.layers[0];
        let t = &out.layers[0];
        let fetched: HashSet<u64> = t.input_addrs.iter().copied().collect();
        assert_eq!(fetched.len(), t.input_addrs.len(), "duplicate fetch k={k} s={s}");
        assert_eq!(t.counters.input_reads, t.input_addrs.len() as u64);
        let p = cfg.pad() as i64;
        for y in 0..cfg.h_out as i64 {
            for x in 0..cfg.w_out as i64 {
                for j in 0..k as i64 {
                    for i in 0..k as i64 {
                        let (r, c) = (s as i64 * y + j - p, s as i64 * x + i - p);
                        if r < 0 || c < 0 || r >= cfg.h_in as i64 || c >= cfg.w_in as i64 {
                            continue;
                        }
                        for ci in 0..cfg.ch_in {
                            assert!(fetched.contains(&out.dram.addr(cfg.input_region, r as u32, c as u32, ci)));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn split_pair_writes_disjoint_halves_once() {
    let mut g = NetworkGraph::new("split");
    g.push(LayerSpec::data("data", S::new(6, 5, 4)));
    g.push(LayerSpec::conv("a", "data", 8, 1, 1, 0));
    g.push(LayerSpec::conv("b", "data", 8, 1, 1, 0));
    g.push(LayerSpec::concat("cat", &["a", "b"]));
    let net = accel::compile(&g).unwrap();
    let w = random_weights(&g, 2).unwrap();
    let input = random_tensor(S::new(6, 5, 4), 8);
    let out = accel::run_network(&net, &AcceleratorConfig::default(), &w, &input, traced()).unwrap();
    let region = net.layers[0].output_region;
    assert_eq!(region, net.layers[1].output_region);
    let mut all = HashSet::new();
    for (n, t) in out.layers.iter().enumerate() {
        let own: HashSet<u64> = t.output_addrs.iter().copied().collect();
        assert_eq!(own.len(), t.output_addrs.len());
        for y in 0..5 {
            for x in 0..4 {
                for c in 0..8 {
                    assert!(own.contains(&out.dram.addr(region, y, x, c + 8 * n as u32)));
                }
            }
        }
        assert!(all.is_disjoint(&own));
        all.extend(own);
    }
    assert_eq!(all.len(), 16 * 5 * 4);
    let oracle = engine::run_network(&g, &w, &input, Accumulation::AdderTree).unwrap();
    assert_eq!(out.output, oracle);
}

#[test]
fn capacity_violations_are_reported() {
    let (g, weights, input) = stride_case(4, 4, 4, 8, 3, 1);
    let net = accel::compile(&g).unwrap();
    let small = AcceleratorConfig { wcache_capacity: 100, ..Default::default() };
    let err = accel::run_network(&net, &small, &weights, &input, SimOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::CacheOverflow { cache: "wcache", needed: 296, .. }), "{err}");
    let small = AcceleratorConfig { ocache_capacity: 4, ..Default::default() };
    let err = accel::run_network(&net, &small, &weights, &input, SimOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::CacheOverflow { cache: "ocache", .. }));
    let small = AcceleratorConfig { icache_line_capacity: 8, ..Default::default() };
    let err = accel::run_network(&net, &small, &weights, &input, SimOptions::default()).unwrap_err();
    assert!(matches!(err, SimError::CacheOverflow { cache: "icache", .. }));
}

#[test]
fn missing_or_misshaped_weights() {
    let (g, mut weights, input) = stride_case(2, 3, 3, 2, 3, 1);
    let net = accel::compile(&g).unwrap();
    let acc = AcceleratorConfig::default();
    weights.insert("c".into(), LayerWeights::zeros(2, 3, 3));
    assert!(matches!(accel::run_network(&net, &acc, &weights, &input, SimOptions::default()), Err(SimError::WeightShape { .. })));
    weights.clear();
    assert!(matches!(accel::run_network(&net, &acc, &weights, &input, SimOptions::default()), Err(SimError::MissingWeights(_))));
}

#[test]
fn random_nets_agree_with_every_engine_layer() {
    for seed in 0..25 {
        let g = random_accel_net(seed).infer_shapes().unwrap();
        let w = random_weights(&g, seed).unwrap();
        let input = random_tensor(g.data_shape().unwrap(), seed + 1000);
        let net = accel::compile(&g).unwrap();
        let sim = accel::run_network(&net, &AcceleratorConfig::default(), &w, &input, SimOptions::default()).unwrap();
        let trace = engine::run_network_traced(&g, &w, &input, Accumulation::AdderTree).unwrap();
        // each accelerator layer's region must equal the engine's view of that blob
        for cfg in &net.layers {
            let region = sim.dram.download(cfg.output_region);
            let consumer = trace.iter().find(|(_, t)| t.shape == region.shape && *t == region);
            assert!(consumer.is_some(), "seed {seed}: region of `{}` matches no engine output", cfg.name);
        }
        let seq = engine::run_network(&g, &w, &input, Accumulation::Sequential).unwrap();
        assert!(max_rel_err(&seq, &sim.output) <= 1e-5, "seed {seed}");
        assert_eq!(trace.last().unwrap().1, sim.output, "seed {seed}");
    }
}
