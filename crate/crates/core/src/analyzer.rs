//! Per-layer operation, parameter and activation counting.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{LayerKind, LayerSpec, NetworkGraph, PoolMode, TensorShape};

/// Activation-counting convention: every IR layer's output is counted once,
/// including in-place ReLU/Dropout rewrites and Concat copies.
pub const COUNT_IN_PLACE_ACTIVATIONS: bool = true;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub macc: u64,
    pub comp: u64,
    pub add: u64,
    pub div: u64,
    pub exp: u64,
    pub params: u64,
    pub activations: u64,
}

impl Add for LayerCost {
    type Output = LayerCost;

    fn add(mut self, rhs: LayerCost) -> LayerCost {
        self += rhs;
        self
    }
}

impl AddAssign for LayerCost {
    fn add_assign(&mut self, rhs: LayerCost) {
        self.macc += rhs.macc;
        self.comp += rhs.comp;
        self.add += rhs.add;
        self.div += rhs.div;
        self.exp += rhs.exp;
        self.params += rhs.params;
        self.activations += rhs.activations;
    }
}

impl std::iter::Sum for LayerCost {
    fn sum<I: Iterator<Item = LayerCost>>(iter: I) -> Self {
        iter.fold(LayerCost::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    pub module: String,
    pub in_shapes: Vec<TensorShape>,
    pub out_shape: TensorShape,
    pub cost: LayerCost,
    /// Free-form remark, e.g. the reciprocal-division reading of global pooling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub name: String,
    pub layers: usize,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub per_layer: Vec<LayerRow>,
    pub per_module: Vec<ModuleRow>,
    pub totals: LayerCost,
}

fn mul(layer: &LayerSpec, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::Overflow(layer.name.clone()))
}

pub fn analyze_layer(layer: &LayerSpec, in_shapes: &[TensorShape], out: TensorShape) -> Result<LayerCost> {
    let o = |s: TensorShape| [s.ch as u64, s.h as u64, s.w as u64];
    let [ch_out, h_out, w_out] = o(out);
    let input = in_shapes.first().copied().unwrap_or(out);
    let [ch_in, h_in, w_in] = o(input);
    let mut c = LayerCost { activations: mul(layer, &o(out))?, ..Default::default() };
    match layer.kind {
        LayerKind::Convolution => {
            let k = layer.conv.as_ref().map_or(1, |p| p.kernel as u64);
            c.macc = mul(layer, &[h_out, w_out, ch_in, ch_out, k, k])?;
            c.add = mul(layer, &[h_out, w_out, ch_out])?;
            c.params = mul(layer, &[k, k, ch_in, ch_out])?.checked_add(ch_out).ok_or_else(|| Error::Overflow(layer.name.clone()))?;
        }
        LayerKind::InnerProduct => {
            c.macc = mul(layer, &[ch_in, h_in, w_in, ch_out])?;
            c.add = ch_out;
            c.params = c.macc.checked_add(ch_out).ok_or_else(|| Error::Overflow(layer.name.clone()))?;
        }
        LayerKind::ReLU => c.comp = mul(layer, &o(input))?,
        LayerKind::Pooling => {
            let p = layer.pool.as_ref();
            let window = match p {
                Some(p) if p.global => mul(layer, &[h_in, w_in])?,
                Some(p) => mul(layer, &[p.kernel as u64, p.kernel as u64])?,
                None => 1,
            };
            match p.map_or(PoolMode::Max, |p| p.mode) {
                PoolMode::Max => c.comp = mul(layer, &[h_out, w_out, ch_out, window.saturating_sub(1)])?,
                PoolMode::Avg => {
                    c.add = mul(layer, &[h_out, w_out, ch_out, window])?;
                    c.div = mul(layer, &[h_out, w_out, ch_out])?;
                }
            }
        }
        LayerKind::Softmax => {
            let n = mul(layer, &o(input))?;
            c.exp = n;
            c.add = n.saturating_sub(1);
            c.div = n;
        }
        LayerKind::Concat | LayerKind::Dropout | LayerKind::Data => {}
    }
    Ok(c)
}

/// Counts every layer of a graph. Shapes are inferred if not present yet.
pub fn analyze_network(graph: &NetworkGraph) -> Result<AnalysisReport> {
    let owned;
    let graph = if graph.shapes.len() == graph.layers.len() {
        graph
    } else {
        owned = graph.infer_shapes()?;
        &owned
    };
    let producers = graph.producers()?;
    let order = graph.topo_sort()?;

    let mut report = AnalysisReport::default();
    for &i in &order {
        let layer = &graph.layers[i];
        let ins = graph.input_shapes(i, &producers);
        let out = graph.shapes[&layer.name];
        let cost = analyze_layer(layer, &ins, out)?;
        let note = match (&layer.kind, &layer.pool) {
            (LayerKind::Pooling, Some(p)) if p.global && p.mode == PoolMode::Avg => Some(format!(
                "reciprocal form: {} additions and 1 division (scale by 1/{})",
                cost.add,
                ins.first().map_or(1, |s| s.h as u64 * s.w as u64)
            )),
            _ => None,
        };
        report.totals += cost;
        match report.per_module.iter_mut().find(|m| m.name == layer.module()) {
            Some(m) => {
                m.layers += 1;
                m.cost += cost;
            }
            None => report.per_module.push(ModuleRow { name: layer.module().to_string(), layers: 1, cost }),
        }
        report.per_layer.push(LayerRow {
            name: layer.name.clone(),
            kind: layer.kind,
            module: layer.module().to_string(),
            in_shapes: ins,
            out_shape: out,
            cost,
            note,
        });
    }
    Ok(report)
}

pub const CSV_HEADER: [&str; 12] =
    ["name", "kind", "ch_out", "h_out", "w_out", "macc", "comp", "add", "div", "exp", "params", "activations"];

fn cost_fields(c: &LayerCost) -> [String; 7] {
    [c.macc, c.comp, c.add, c.div, c.exp, c.params, c.activations].map(|v| v.to_string())
}

/// RFC-4180 CSV: one row per layer and a final `TOTAL` row. Text fields are quoted.
pub fn export_csv(report: &AnalysisReport) -> String {
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::NonNumeric).from_writer(Vec::new());
    let io = "writing CSV into memory cannot fail";
    w.write_record(CSV_HEADER).expect(io);
    for r in &report.per_layer {
        let mut rec = vec![
            r.name.clone(),
            r.kind.type_name().to_string(),
            r.out_shape.ch.to_string(),
            r.out_shape.h.to_string(),
            r.out_shape.w.to_string(),
        ];
        rec.extend(cost_fields(&r.cost));
        w.write_record(&rec).expect(io);
    }
    let mut total = vec!["TOTAL".to_string(), String::new(), String::new(), String::new(), String::new()];
    total.extend(cost_fields(&report.totals));
    w.write_record(&total).expect(io);
    String::from_utf8(w.into_inner().expect(io)).expect("CSV output is UTF-8")
}
