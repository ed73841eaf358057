//! Cycle model of the accelerator schedule and what-if projections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accel::{AcceleratorConfig, AcceleratorLayerConfig};

/// Knobs applied on top of an [`AcceleratorConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhatIfScenario {
    /// Inner pipeline streams across iterations instead of draining each time.
    pub flush_fixed: bool,
    pub prefetch_latency: u32,
    /// For 1x1 kernels, the nine multipliers of a PE serve nine output channels.
    pub pack_1x1: bool,
    /// 16-bit fixed point: five times as many PEs fit, weights take half the bytes.
    pub fixed_point_16bit: bool,
    pub clock_mhz: f64,
}

impl Default for WhatIfScenario {
    fn default() -> Self {
        let acc = AcceleratorConfig::default();
        WhatIfScenario {
            flush_fixed: false,
            prefetch_latency: acc.prefetch_latency_cycles,
            pack_1x1: false,
            fixed_point_16bit: false,
            clock_mhz: acc.clock_mhz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("unknown scenario key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("expected key=value, found `{0}`")]
    Malformed(String),
}

impl WhatIfScenario {
    /// The accelerator as built: flushing pipeline, default prefetch, float32.
    pub fn as_built(clock_mhz: f64) -> Self {
        WhatIfScenario { clock_mhz, ..Default::default() }
    }

    /// The as-built datapath with only the flushing bug removed.
    pub fn pipelined(clock_mhz: f64) -> Self {
        WhatIfScenario { flush_fixed: true, clock_mhz, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.prefetch_latency < 1 {
            return Err(ScenarioError::BadValue { key: "prefetch".into(), value: self.prefetch_latency.to_string() });
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(ScenarioError::BadValue { key: "clock".into(), value: self.clock_mhz.to_string() });
        }
        Ok(())
    }

    /// Effective accelerator parameters under this scenario.
    pub fn apply(&self, acc: &AcceleratorConfig) -> AcceleratorConfig {
        AcceleratorConfig {
            n_pe: if self.fixed_point_16bit { acc.n_pe * 5 } else { acc.n_pe },
            prefetch_latency_cycles: self.prefetch_latency,
            clock_mhz: self.clock_mhz,
            ..acc.clone()
        }
    }
}

/// Parses `key=value` pairs separated by commas, starting from `base`.
///
/// Keys: `flush_fixed` (or `flush`, meaning the opposite), `prefetch`,
/// `pack_1x1`, `fixed_point_16bit` (or `fp16`), `clock` (or `clock_mhz`).
pub fn parse_whatif(text: &str, base: WhatIfScenario) -> Result<WhatIfScenario, ScenarioError> {
    let mut s = base;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| ScenarioError::Malformed(part.to_string()))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || ScenarioError::BadValue { key: key.to_string(), value: value.to_string() };
        let flag = || match value.to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" | "on" => Ok(true),
            "0" | "false" | "no" | "off" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "flush_fixed" => s.flush_fixed = flag()?,
            "flush" => s.flush_fixed = !flag()?,
            "prefetch" | "prefetch_latency" => s.prefetch_latency = value.parse().map_err(|_| bad())?,
            "pack_1x1" | "pack" => s.pack_1x1 = flag()?,
            "fixed_point_16bit" | "fixed_point" | "fp16" => s.fixed_point_16bit = flag()?,
            "clock" | "clock_mhz" => s.clock_mhz = value.parse().map_err(|_| bad())?,
            _ => return Err(ScenarioError::UnknownKey(key.to_string())),
        }
    }
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub name: String,
    /// `h_out * w_out * ch_in` passes through the inner loop.
    pub iterations: u64,
    /// Compute cycles per iteration (`c`).
    pub compute_cycles_per_iter: u64,
    pub ideal_cycles_per_iter: u64,
    pub flushed_cycles_per_iter: u64,
    pub ideal_cycles: u64,
    pub flushed_cycles: u64,
    pub weight_load_cycles: u64,
    pub writeback_cycles: u64,
}

impl LayerCycles {
    pub fn cycles(&self, flushing: bool) -> u64 {
        if flushing {
            self.flushed_cycles
        } else {
            self.ideal_cycles
        }
    }
}

/// Cycle record for one layer, both with and without pipeline flushing.
///
/// A flushed iteration is never cheaper than a pipelined one: with a long
/// prefetch and tiny `c`, `max(c, prefetch)` can exceed `2c + F0` when F0 is
/// configured small.
pub fn schedule_layer(cfg: &AcceleratorLayerConfig, acc: &AcceleratorConfig, pack_1x1: bool) -> LayerCycles {
    let iterations = cfg.h_out as u64 * cfg.w_out as u64 * cfg.ch_in as u64;
    let lanes = if pack_1x1 && cfg.k == 1 { 9 * acc.n_pe } else { acc.n_pe } as u64;
    let c = (cfg.ch_out as u64).div_ceil(lanes.max(1));
    let ideal_per = c.max(acc.prefetch_latency_cycles as u64);
    let flushed_per = (2 * c + acc.flush_base_cycles as u64).max(ideal_per);
    let weight_load = cfg.weight_count();
    let writeback = cfg.h_out as u64 * cfg.w_out as u64 * cfg.ch_out as u64;
    LayerCycles {
        name: cfg.name.clone(),
        iterations,
        compute_cycles_per_iter: c,
        ideal_cycles_per_iter: ideal_per,
        flushed_cycles_per_iter: flushed_per,
        ideal_cycles: iterations * ideal_per + weight_load,
        flushed_cycles: iterations * flushed_per + weight_load + writeback,
        weight_load_cycles: weight_load,
        writeback_cycles: writeback,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub per_layer: Vec<LayerCycles>,
    pub ideal_total: u64,
    pub flushed_total: u64,
    /// Which of the two totals the timing figures use.
    pub flushing: bool,
    pub total_cycles: u64,
    pub slowdown_factor: f64,
    pub clock_mhz: f64,
    pub t_frame_ms: f64,
    pub fps_at_clock: f64,
    /// Effective PE count after the scenario is applied.
    pub n_pe: u32,
    /// Weight and bias storage at the scenario's word size.
    pub weight_memory_bytes: u64,
}

pub fn estimate_network(configs: &[AcceleratorLayerConfig], acc: &AcceleratorConfig, scenario: &WhatIfScenario) -> CycleReport {
    let eff = scenario.apply(acc);
    let per_layer: Vec<LayerCycles> = configs.iter().map(|c| schedule_layer(c, &eff, scenario.pack_1x1)).collect();
    let ideal_total: u64 = per_layer.iter().map(|l| l.ideal_cycles).sum();
    let flushed_total: u64 = per_layer.iter().map(|l| l.flushed_cycles).sum();
    let flushing = !scenario.flush_fixed;
    let total_cycles = if flushing { flushed_total } else { ideal_total };
    let t_frame_ms = total_cycles as f64 / (eff.clock_mhz * 1e3);
    let word = if scenario.fixed_point_16bit { 2 } else { 4 };
    CycleReport {
        ideal_total,
        flushed_total,
        flushing,
        total_cycles,
        slowdown_factor: if ideal_total == 0 { 1.0 } else { flushed_total as f64 / ideal_total as f64 },
        clock_mhz: eff.clock_mhz,
        t_frame_ms,
        fps_at_clock: if t_frame_ms > 0.0 { 1e3 / t_frame_ms } else { f64::INFINITY },
        n_pe: eff.n_pe,
        weight_memory_bytes: configs.iter().map(|c| c.weight_count() * word).sum(),
        per_layer,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfReport {
    pub scenario: WhatIfScenario,
    pub report: CycleReport,
    /// Flush-fixed float32 design at the scenario's clock.
    pub baseline: CycleReport,
    /// `baseline.t_frame / report.t_frame`.
    pub speedup: f64,
    /// Speedup over the as-built (flushing) design at the same clock.
    pub speedup_vs_as_built: f64,
}

pub fn whatif(configs: &[AcceleratorLayerConfig], acc: &AcceleratorConfig, scenario: &WhatIfScenario) -> WhatIfReport {
    let report = estimate_network(configs, acc, scenario);
    let pipelined = WhatIfScenario { prefetch_latency: acc.prefetch_latency_cycles, ..WhatIfScenario::pipelined(scenario.clock_mhz) };
    let baseline = estimate_network(configs, acc, &pipelined);
    let as_built = estimate_network(configs, acc, &WhatIfScenario { flush_fixed: false, ..pipelined });
    WhatIfReport {
        scenario: scenario.clone(),
        speedup: baseline.t_frame_ms / report.t_frame_ms,
        speedup_vs_as_built: as_built.t_frame_ms / report.t_frame_ms,
        report,
        baseline,
    }
}

pub const CYCLES_CSV_HEADER: [&str; 9] = [
    "name",
    "iterations",
    "compute_cycles_per_iter",
    "ideal_cycles_per_iter",
    "flushed_cycles_per_iter",
    "ideal_cycles",
    "flushed_cycles",
    "weight_load_cycles",
    "writeback_cycles",
];

/// Same quoting rules as the analyzer CSV; ends with a `TOTAL` row.
pub fn export_cycles_csv(report: &CycleReport) -> String {
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::NonNumeric).from_writer(Vec::new());
    let io = "writing CSV into memory cannot fail";
    w.write_record(CYCLES_CSV_HEADER).expect(io);
    for l in &report.per_layer {
        let nums = [
            l.iterations,
            l.compute_cycles_per_iter,
            l.ideal_cycles_per_iter,
            l.flushed_cycles_per_iter,
            l.ideal_cycles,
            l.flushed_cycles,
            l.weight_load_cycles,
            l.writeback_cycles,
        ];
        let mut rec = vec![l.name.clone()];
        rec.extend(nums.iter().map(u64::to_string));
        w.write_record(&rec).expect(io);
    }
    let sum = |f: fn(&LayerCycles) -> u64| report.per_layer.iter().map(f).sum::<u64>().to_string();
    let total = [
        "TOTAL".to_string(),
        sum(|l| l.iterations),
        String::new(),
        String::new(),
        String::new(),
        report.ideal_total.to_string(),
        report.flushed_total.to_string(),
        sum(|l| l.weight_load_cycles),
        sum(|l| l.writeback_cycles),
    ];
    w.write_record(&total).expect(io);
    String::from_utf8(w.into_inner().expect(io)).expect("CSV output is UTF-8")
}
