use std::collections::HashMap;

use crate::ir::{LayerKind, NetworkGraph, PoolMode, TensorShape};

use super::config::{AcceleratorLayerConfig, CompiledNetwork, Epilogue};
use super::SimError;

fn unsupported(layer: &str, reason: impl Into<String>) -> SimError {
    SimError::UnsupportedForAccelerator { layer: layer.to_string(), reason: reason.into() }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SplitRole {
    First,
    Second,
}

/// Lowers a ZynqNet-class graph to the accelerator's layer list.
///
/// ReLUs are fused into the convolution that feeds them, Dropout disappears,
/// and every two-way Concat becomes a pair of split layers writing disjoint
/// channel ranges of one region. Global average pooling and softmax become
/// the host epilogue.
pub fn compile(graph: &NetworkGraph) -> Result<CompiledNetwork, SimError> {
    let g = graph.infer_shapes()?;
    let producers = g.producers()?;
    let order = g.topo_sort()?;
    let n = g.layers.len();
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in &order {
        for &p in &producers[i] {
            consumers[p].push(i);
        }
    }

    // Canonical node for each layer: in-place and identity layers alias their source.
    let mut alias: Vec<usize> = (0..n).collect();
    let mut fused = vec![false; n];
    let mut data = None;
    let mut pool = None;
    let mut softmax = None;
    for &i in &order {
        let l = &g.layers[i];
        match l.kind {
            LayerKind::Data => {
                if data.replace(i).is_some() {
                    return Err(unsupported(&l.name, "more than one Data layer"));
                }
            }
            LayerKind::Convolution => {
                let c = l.conv.as_ref().expect("shape inference checked conv params");
                if !matches!(c.kernel, 1 | 3) {
                    return Err(unsupported(&l.name, format!("kernel size {} (only 1x1 and 3x3)", c.kernel)));
                }
                if c.pad != c.kernel / 2 {
                    return Err(unsupported(&l.name, format!("padding {} (must be {} for k={})", c.pad, c.kernel / 2, c.kernel)));
                }
                if !matches!(c.stride, 1 | 2) {
                    return Err(unsupported(&l.name, format!("stride {} (only 1 and 2)", c.stride)));
                }
            }
            LayerKind::ReLU => {
                let p = producers[i][0];
                let src = alias[p];
                if g.layers[src].kind != LayerKind::Convolution {
                    return Err(unsupported(&l.name, "ReLU must directly follow a convolution"));
                }
                if consumers[p] != [i] {
                    return Err(unsupported(&l.name, "the pre-activation output is also read elsewhere"));
                }
                fused[src] = true;
                alias[i] = src;
            }
            LayerKind::Dropout => alias[i] = alias[producers[i][0]],
            LayerKind::Concat => {
                if l.bottoms.len() != 2 {
                    return Err(unsupported(&l.name, format!("{}-way concat (only 2-way)", l.bottoms.len())));
                }
            }
            LayerKind::Pooling => {
                let p = l.pool.as_ref().expect("shape inference checked pool params");
                if !(p.global && p.mode == PoolMode::Avg) {
                    return Err(unsupported(&l.name, "only global average pooling is supported"));
                }
                if pool.replace(i).is_some() {
                    return Err(unsupported(&l.name, "more than one pooling layer"));
                }
            }
            LayerKind::Softmax => {
                if softmax.replace(i).is_some() {
                    return Err(unsupported(&l.name, "more than one softmax layer"));
                }
            }
            LayerKind::InnerProduct => return Err(unsupported(&l.name, "fully connected layers")),
        }
    }
    let data = data.ok_or(SimError::Graph(crate::ir::GraphError::NoDataLayer))?;

    let is_node = |i: usize| alias[i] == i;
    let input_of = |i: usize| alias[producers[i][0]];
    let mut node_consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in order.iter().filter(|&&i| is_node(i) && g.layers[i].kind != LayerKind::Data) {
        for &p in &producers[i] {
            node_consumers[alias[p]].push(i);
        }
    }

    let mut split: HashMap<usize, (usize, SplitRole)> = HashMap::new();
    for &c in order.iter().filter(|&&i| g.layers[i].kind == LayerKind::Concat) {
        let name = &g.layers[c].name;
        let (a, b) = (alias[producers[c][0]], alias[producers[c][1]]);
        if a == b || g.layers[a].kind != LayerKind::Convolution || g.layers[b].kind != LayerKind::Convolution {
            return Err(unsupported(name, "concat inputs must be two distinct convolutions"));
        }
        if node_consumers[a] != [c] || node_consumers[b] != [c] {
            return Err(unsupported(name, "split halves may only feed their concat"));
        }
        if input_of(a) != input_of(b) {
            return Err(unsupported(name, "split halves must read the same input"));
        }
        if g.shapes[&g.layers[a].name] != g.shapes[&g.layers[b].name] {
            return Err(unsupported(name, "split halves must have equal output shapes"));
        }
        split.insert(a, (c, SplitRole::First));
        split.insert(b, (c, SplitRole::Second));
    }

    let mut pool_feeders: Vec<usize> = Vec::new();
    if let Some(p) = pool {
        let src = input_of(p);
        match g.layers[src].kind {
            LayerKind::Convolution => pool_feeders.push(src),
            LayerKind::Concat => pool_feeders.extend(producers[src].iter().map(|&q| alias[q])),
            _ => return Err(unsupported(&g.layers[p].name, "global pooling must read a convolution output")),
        }
        if node_consumers[p].iter().any(|&c| g.layers[c].kind != LayerKind::Softmax) {
            return Err(unsupported(&g.layers[p].name, "only softmax may follow global pooling"));
        }
    }
    if let Some(s) = softmax {
        if Some(input_of(s)) != pool {
            return Err(unsupported(&g.layers[s].name, "softmax must follow global pooling"));
        }
        if !node_consumers[s].is_empty() {
            return Err(unsupported(&g.layers[s].name, "softmax must be the last layer"));
        }
    }

    let input_shape = g.shapes[&g.layers[data].name];
    let mut regions: Vec<TensorShape> = vec![input_shape];
    let mut region_of: HashMap<usize, usize> = HashMap::from([(data, 0)]);
    let mut layers: Vec<AcceleratorLayerConfig> = Vec::new();
    let mut last_conv = None;
    for &i in order.iter().filter(|&&i| g.layers[i].kind == LayerKind::Convolution) {
        let l = &g.layers[i];
        let c = l.conv.as_ref().expect("checked");
        let src = input_of(i);
        if !matches!(g.layers[src].kind, LayerKind::Data | LayerKind::Convolution | LayerKind::Concat) || split.contains_key(&src) {
            return Err(unsupported(&l.name, format!("cannot read the output of `{}`", g.layers[src].name)));
        }
        let input_region = region_of[&src];
        let ins = g.shapes[&g.layers[producers[i][0]].name];
        let out = g.shapes[&l.name];
        let role = split.get(&i).copied();
        let output_region = match role {
            None => {
                regions.push(out);
                regions.len() - 1
            }
            Some((concat, SplitRole::First)) => {
                regions.push(g.shapes[&g.layers[concat].name]);
                region_of.insert(concat, regions.len() - 1);
                regions.len() - 1
            }
            Some((concat, SplitRole::Second)) => {
                let partner = producers[concat][0];
                if last_conv != Some(alias[partner]) {
                    return Err(unsupported(&l.name, "second split half must directly follow the first"));
                }
                region_of[&concat]
            }
        };
        region_of.insert(i, output_region);
        last_conv = Some(i);
        layers.push(AcceleratorLayerConfig {
            name: l.name.clone(),
            w_in: ins.w,
            h_in: ins.h,
            w_out: out.w,
            h_out: out.h,
            ch_in: ins.ch,
            ch_out: out.ch,
            k: c.kernel,
            s: c.stride,
            is_1st_split: matches!(role, Some((_, SplitRole::First))),
            is_2nd_split: matches!(role, Some((_, SplitRole::Second))),
            fuse_relu: fused[i],
            is_global_pool_consumer: pool_feeders.contains(&i),
            input_region,
            output_region,
        });
    }

    // The value the accelerator leaves in DRAM: what pooling reads, or the last node.
    let final_node = match pool {
        Some(p) => input_of(p),
        None => alias[*order.last().expect("non-empty")],
    };
    let output_region = *region_of
        .get(&final_node)
        .ok_or_else(|| unsupported(&g.layers[final_node].name, "network output is not produced by the accelerator"))?;
    for &i in &order {
        if g.layers[i].kind == LayerKind::Concat && !region_of.contains_key(&i) {
            return Err(unsupported(&g.layers[i].name, "concat was not realised as a split pair"));
        }
    }

    Ok(CompiledNetwork {
        input_shape,
        regions,
        layers,
        epilogue: Epilogue {
            global_pool: pool.map(|p| g.layers[p].name.clone()),
            softmax: softmax.map(|s| g.layers[s].name.clone()),
        },
        output_region,
    })
}
