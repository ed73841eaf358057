//! Regression values for the bundled ZynqNet topology.

use znq_core::accel::{self, AcceleratorConfig};
use znq_core::analyzer::{analyze_network, export_csv};
use znq_core::engine::{self, Accumulation, LayerWeights, Tensor3D};
use znq_core::ir::{LayerKind, TensorShape};
use znq_core::perf::{estimate_network, WhatIfScenario};
use znq_core::presets::zynqnet;
use znq_core::prototxt;
use znq_core::weights::{decode_weights, encode_weights, random_weights};

/// Output shape of every layer, in declaration order: (name, ch, h, w).
const LAYER_TABLE: [(&str, u32, u32, u32); 65] = [
    ("data", 3, 256, 256),
    ("conv1", 64, 128, 128),
    ("relu_conv1", 64, 128, 128),
    ("fire2/squeeze3x3", 16, 64, 64),
    ("fire2/relu_squeeze3x3", 16, 64, 64),
    ("fire2/expand1x1", 64, 64, 64),
    ("fire2/relu_expand1x1", 64, 64, 64),
    ("fire2/expand3x3", 64, 64, 64),
    ("fire2/relu_expand3x3", 64, 64, 64),
    ("fire2/concat", 128, 64, 64),
    ("fire3/squeeze1x1", 16, 64, 64),
    ("fire3/relu_squeeze1x1", 16, 64, 64),
    ("fire3/expand1x1", 64, 64, 64),
    ("fire3/relu_expand1x1", 64, 64, 64),
    ("fire3/expand3x3", 64, 64, 64),
    ("fire3/relu_expand3x3", 64, 64, 64),
    ("fire3/concat", 128, 64, 64),
    ("fire4/squeeze3x3", 32, 32, 32),
    ("fire4/relu_squeeze3x3", 32, 32, 32),
    ("fire4/expand1x1", 128, 32, 32),
    ("fire4/relu_expand1x1", 128, 32, 32),
    ("fire4/expand3x3", 128, 32, 32),
    ("fire4/relu_expand3x3", 128, 32, 32),
    ("fire4/concat", 256, 32, 32),
    ("fire5/squeeze1x1", 32, 32, 32),
    ("fire5/relu_squeeze1x1", 32, 32, 32),
    ("fire5/expand1x1", 128, 32, 32),
    ("fire5/relu_expand1x1", 128, 32, 32),
    ("fire5/expand3x3", 128, 32, 32),
    ("fire5/relu_expand3x3", 128, 32, 32),
    ("fire5/concat", 256, 32, 32),
    ("fire6/squeeze3x3", 64, 16, 16),
    ("fire6/relu_squeeze3x3", 64, 16, 16),
    ("fire6/expand1x1", 256, 16, 16),
    ("fire6/relu_expand1x1", 256, 16, 16),
    ("fire6/expand3x3", 256, 16, 16),
    ("fire6/relu_expand3x3", 256, 16, 16),
    ("fire6/concat", 512, 16, 16),
    ("fire7/squeeze1x1", 64, 16, 16),
    ("fire7/relu_squeeze1x1", 64, 16, 16),
    ("fire7/expand1x1", 192, 16, 16),
    ("fire7/relu_expand1x1", 192, 16, 16),
    ("fire7/expand3x3", 192, 16, 16),
    ("fire7/relu_expand3x3", 192, 16, 16),
    ("fire7/concat", 384, 16, 16),
    ("fire8/squeeze3x3", 112, 8, 8),
    ("fire8/relu_squeeze3x3", 112, 8, 8),
    ("fire8/expand1x1", 256, 8, 8),
    ("fire8/relu_expand1x1", 256, 8, 8),
    ("fire8/expand3x3", 256, 8, 8),
    ("fire8/relu_expand3x3", 256, 8, 8),
    ("fire8/concat", 512, 8, 8),
    ("fire9/squeeze1x1", 112, 8, 8),
    ("fire9/relu_squeeze1x1", 112, 8, 8),
    ("fire9/expand1x1", 368, 8, 8),
    ("fire9/relu_expand1x1", 368, 8, 8),
    ("fire9/expand3x3", 368, 8, 8),
    ("fire9/relu_expand3x3", 368, 8, 8),
    ("fire9/concat", 736, 8, 8),
    ("drop9", 736, 8, 8),
    ("conv10/split1", 512, 8, 8),
    ("conv10/split2", 512, 8, 8),
    ("conv10", 1024, 8, 8),
    ("pool10", 1024, 1, 1),
    ("loss", 1024, 1, 1),
];

#[test]
fn shapes_and_order_match_the_layer_table() {
    let g = zynqnet().infer_shapes().unwrap();
    let order: Vec<&str> = g.topo_sort().unwrap().into_iter().map(|i| g.layers[i].name.as_str()).collect();
    let expected: Vec<&str> = LAYER_TABLE.iter().map(|r| r.0).collect();
    assert_eq!(order, expected);
    for (name, ch, h, w) in LAYER_TABLE {
        assert_eq!(g.shapes[name], TensorShape::new(ch, h, w), "{name}");
    }
}

#[test]
fn validates_without_diagnostics() {
    assert_eq!(zynqnet().validate(), vec![]);
}

#[test]
fn round_trips_through_text() {
    let g = zynqnet();
    let text = prototxt::serialize(&g);
    assert_eq!(prototxt::parse(&text).unwrap(), g);
    assert_eq!(prototxt::serialize(&prototxt::parse(&text).unwrap()), text);
}

#[test]
fn analyzer_figures() {
    let r = analyze_network(&zynqnet()).unwrap();
    assert_eq!(r.per_layer.len(), 65);
    let row = |n: &str| r.per_layer.iter().find(|l| l.name == n).unwrap();
    assert_eq!(row("conv1").cost.macc, 128 * 128 * 3 * 64 * 9);
    assert_eq!(row("conv1").cost.macc, 28_311_552);
    assert_eq!(row("pool10").cost.add, 65_536);
    assert_eq!(row("pool10").cost.div, 1024);
    assert!(row("pool10").note.is_some());
    assert_eq!(row("loss").cost.exp, 1024);
    let relu_comp: u64 = r.per_layer.iter().filter(|l| l.kind == LayerKind::ReLU).map(|l| l.cost.comp).sum();
    assert_eq!(relu_comp, 3_174_400);
    assert_eq!(r.totals.macc, 529_301_504);
    assert_eq!(r.totals.params, 2_528_800);
    assert_eq!(r.totals.activations, 8_607_744);
    let module_macc: u64 = r.per_module.iter().map(|m| m.cost.macc).sum();
    assert_eq!(module_macc, r.totals.macc);
    let fire2 = r.per_module.iter().find(|m| m.name == "fire2").unwrap();
    assert_eq!(fire2.layers, 7);
    let csv = export_csv(&r);
    assert_eq!(csv.lines().count(), 1 + 65 + 1);
    assert!(csv.contains("\"fire2/squeeze3x3\","));
}

#[test]
fn compiles_to_27_accelerator_layers() {
    let net = accel::compile(&zynqnet()).unwrap();
    assert_eq!(net.layers.len(), 27);
    let by = |n: &str| net.layers.iter().find(|l| l.name == n).unwrap();
    assert!(by("conv1").fuse_relu);
    assert!(by("fire2/expand1x1").is_1st_split && by("fire2/expand3x3").is_2nd_split);
    assert!(by("conv10/split1").is_1st_split && by("conv10/split2").is_2nd_split);
    assert!(!by("conv10/split1").fuse_relu);
    assert!(by("conv10/split2").is_global_pool_consumer);
    assert_eq!(by("fire8/squeeze3x3").weight_count(), 387_184);
    assert_eq!(net.epilogue.global_pool.as_deref(), Some("pool10"));
    assert_eq!(net.epilogue.softmax.as_deref(), Some("loss"));
    let acc = AcceleratorConfig::default();
    assert!(net.layers.iter().all(|l| l.weight_count() <= acc.wcache_capacity as u64));
}

#[test]
fn random_weights_cover_every_parameter_and_round_trip() {
    let g = zynqnet();
    let w = random_weights(&g, 42).unwrap();
    assert_eq!(w.len(), 27);
    let total: usize = w.values().map(|l| l.filters.len() + l.bias.len()).sum();
    assert_eq!(total, 2_528_800);
    let bytes = encode_weights(&w).unwrap();
    let back = decode_weights(&bytes).unwrap();
    assert_eq!(back.len(), w.len());
    for (name, l) in &w {
        let b = &back[name];
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&b.filters), bits(&l.filters));
        assert_eq!(bits(&b.bias), bits(&l.bias));
    }
    assert_eq!(encode_weights(&random_weights(&g, 42).unwrap()).unwrap(), bytes);
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    let g = zynqnet();
    let mut w = random_weights(&g, 0).unwrap();
    for l in w.values_mut() {
        *l = LayerWeights::zeros(l.ch_in, l.ch_out, l.k);
    }
    let input = Tensor3D::zeros(g.data_shape().unwrap());
    let out = engine::run_network(&g, &w, &input, Accumulation::Sequential).unwrap();
    assert_eq!(out.shape, TensorShape::new(1024, 1, 1));
    assert!(out.data.iter().all(|&p| p == 1.0 / 1024.0));
}

#[test]
fn seeded_inference_touches_all_layers_and_normalises() {
    let g = zynqnet();
    let w = random_weights(&g, 42).unwrap();
    let input = Tensor3D::from_vec(g.data_shape().unwrap(), (0..3 * 256 * 256).map(|i| ((i % 251) as f32 / 125.0) - 1.0).collect()).unwrap();
    let trace = engine::run_network_traced(&g, &w, &input, Accumulation::Sequential).unwrap();
    assert_eq!(trace.len(), 65);
    let probs = &trace.last().unwrap().1;
    assert_eq!(probs.shape, TensorShape::new(1024, 1, 1));
    let sum: f64 = probs.data.iter().map(|&p| p as f64).sum();
    assert!((sum - 1.0).abs() <= 1e-5);
}

#[test]
fn fire3_squeeze_dominates_the_flushed_schedule() {
    let net = accel::compile(&zynqnet()).unwrap();
    let r = estimate_network(&net.layers, &AcceleratorConfig::default(), &WhatIfScenario::default());
    let top = r.per_layer.iter().max_by_key(|l| l.flushed_cycles).unwrap();
    assert_eq!(top.name, "fire3/squeeze1x1");
    assert_eq!(top.iterations, 4096 * 128);
    assert!(r.per_layer.iter().all(|l| l.flushed_cycles >= l.ideal_cycles));
    // weight loading and writeback stay second-order
    let side: u64 = r.per_layer.iter().map(|l| l.weight_load_cycles + l.writeback_cycles).sum();
    assert!((side as f64) < 0.1 * r.flushed_total as f64);
    assert!((r.fps_at_clock - 0.51).abs() < 0.2, "{}", r.fps_at_clock);
}
