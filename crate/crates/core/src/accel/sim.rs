use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::engine::{self, LayerWeights, Tensor3D, WeightMap};
use crate::ir::TensorShape;

use super::cache::{macc_3x3, ICache, Occupancy};
use super::config::{AcceleratorConfig, AcceleratorLayerConfig, CompiledNetwork};
use super::SimError;

/// DRAM word transactions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemTraceCounters {
    pub input_reads: u64,
    pub weight_reads: u64,
    pub output_writes: u64,
    pub output_reads: u64,
    /// Pooled channel means handed to the host.
    pub gpool_writes: u64,
}

impl AddAssign for MemTraceCounters {
    fn add_assign(&mut self, o: Self) {
        self.input_reads += o.input_reads;
        self.weight_reads += o.weight_reads;
        self.output_writes += o.output_writes;
        self.output_reads += o.output_reads;
        self.gpool_writes += o.gpool_writes;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub name: String,
    pub counters: MemTraceCounters,
    pub occupancy: Occupancy,
    /// DRAM addresses read through the ICache, in fetch order (only when tracing).
    #[serde(skip)]
    pub input_addrs: Vec<u64>,
    /// DRAM addresses written from the OCache, in write order (only when tracing).
    #[serde(skip)]
    pub output_addrs: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub trace_addresses: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionLayout {
    pub base: u64,
    pub shape: TensorShape,
}

/// Flat word-addressed memory. Feature maps are stored pixel-major with
/// channels innermost: `base + (y * w + x) * ch + c`.
#[derive(Debug, Clone)]
pub struct Dram {
    words: Vec<f32>,
    layout: Vec<RegionLayout>,
}

impl Dram {
    pub fn new(regions: &[TensorShape]) -> Self {
        let mut base = 0u64;
        let layout = regions
            .iter()
            .map(|&shape| {
                let r = RegionLayout { base, shape };
                base += shape.elements();
                r
            })
            .collect();
        Dram { words: vec![0.0; base as usize], layout }
    }

    pub fn layout(&self) -> &[RegionLayout] {
        &self.layout
    }

    #[inline]
    pub fn addr(&self, region: usize, y: u32, x: u32, c: u32) -> u64 {
        let r = &self.layout[region];
        r.base + (y as u64 * r.shape.w as u64 + x as u64) * r.shape.ch as u64 + c as u64
    }

    #[inline]
    fn read(&self, addr: u64) -> f32 {
        self.words[addr as usize]
    }

    #[inline]
    fn write(&mut self, addr: u64, v: f32) {
        self.words[addr as usize] = v;
    }

    /// Host upload of a channel-major tensor into a region (not counted).
    pub fn upload(&mut self, region: usize, t: &Tensor3D) -> Result<(), SimError> {
        let shape = self.layout[region].shape;
        if shape != t.shape {
            return Err(SimError::ShapeMismatch(format!("region holds {shape}, tensor is {}", t.shape)));
        }
        for c in 0..shape.ch {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    let a = self.addr(region, y, x, c);
                    self.write(a, t.get(c as usize, y as usize, x as usize));
                }
            }
        }
        Ok(())
    }

    /// Host download of a region as a channel-major tensor.
    pub fn download(&self, region: usize) -> Tensor3D {
        let shape = self.layout[region].shape;
        let mut t = Tensor3D::zeros(shape);
        for c in 0..shape.ch {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    let i = t.index(c as usize, y as usize, x as usize);
                    t.data[i] = self.read(self.addr(region, y, x, c));
                }
            }
        }
        t
    }
}

/// Per-inference simulator state.
pub struct SimState {
    pub acc: AcceleratorConfig,
    pub options: SimOptions,
    pub dram: Dram,
    /// Host copy of the pooled channel means, sized to the pooled region.
    pub pooled: Vec<f32>,
}

impl SimState {
    pub fn new(acc: AcceleratorConfig, options: SimOptions, regions: &[TensorShape]) -> Self {
        SimState { acc, options, dram: Dram::new(regions), pooled: Vec::new() }
    }
}

fn overflow(cfg: &AcceleratorLayerConfig, cache: &'static str, needed: u64, capacity: u32) -> Result<(), SimError> {
    if needed > capacity as u64 {
        return Err(SimError::CacheOverflow { layer: cfg.name.clone(), cache, needed, capacity: capacity as u64 });
    }
    Ok(())
}

/// Executes one layer's loop nest: rows, columns, input channels, then
/// output channels spread over the PEs.
pub fn run_layer(state: &mut SimState, cfg: &AcceleratorLayerConfig, weights: &LayerWeights) -> Result<LayerTrace, SimError> {
    let acc = state.acc.clone();
    if !matches!(cfg.k, 1 | 3) || !matches!(cfg.s, 1 | 2) {
        return Err(SimError::UnsupportedForAccelerator {
            layer: cfg.name.clone(),
            reason: format!("k={} s={} is outside the datapath", cfg.k, cfg.s),
        });
    }
    if (weights.ch_in, weights.ch_out, weights.k) != (cfg.ch_in, cfg.ch_out, cfg.k) || !weights.is_consistent() {
        return Err(SimError::WeightShape {
            layer: cfg.name.clone(),
            detail: format!("got {}->{} k={}, need {}->{} k={}", weights.ch_in, weights.ch_out, weights.k, cfg.ch_in, cfg.ch_out, cfg.k),
        });
    }
    overflow(cfg, "ocache", cfg.ch_out as u64, acc.ocache_capacity)?;
    overflow(cfg, "wcache", cfg.weight_count(), acc.wcache_capacity)?;
    if cfg.is_global_pool_consumer {
        overflow(cfg, "gpool", cfg.ch_out as u64, acc.gpool_capacity)?;
    }
    let mut icache = ICache::new(&acc, cfg.w_in, cfg.ch_in, &cfg.name)?;

    let mut trace = LayerTrace {
        name: cfg.name.clone(),
        counters: MemTraceCounters::default(),
        occupancy: Occupancy::default(),
        input_addrs: Vec::new(),
        output_addrs: Vec::new(),
    };
    let tracing = state.options.trace_addresses;
    let (ch_in, ch_out) = (cfg.ch_in as usize, cfg.ch_out as usize);

    // WCache: one 9-slot kernel per (ci, co); 1x1 kernels use the centre slot.
    let mut wcache = vec![[0f32; 9]; ch_in * ch_out];
    for ci in 0..ch_in {
        for co in 0..ch_out {
            let slot = &mut wcache[ci * ch_out + co];
            if cfg.k == 1 {
                slot[4] = weights.filters[weights.filter_index(co, ci, 0, 0)];
            } else {
                for j in 0..3 {
                    for i in 0..3 {
                        slot[j * 3 + i] = weights.filters[weights.filter_index(co, ci, j, i)];
                    }
                }
            }
        }
    }
    let bias = weights.bias.clone();
    trace.counters.weight_reads += cfg.weight_count();
    trace.occupancy.wcache = cfg.weight_count();

    let mut ocache = vec![0f32; ch_out];
    let mut gpool = vec![0f32; if cfg.is_global_pool_consumer { ch_out } else { 0 }];
    let mut fetched = vec![false; cfg.h_in as usize];
    let (s, pad) = (cfg.s as i64, cfg.pad() as i64);
    let offset = cfg.channel_offset();

    for y in 0..cfg.h_out {
        for j in 0..cfg.k as i64 {
            let row = s * y as i64 + j - pad;
            if row < 0 || row >= cfg.h_in as i64 {
                continue;
            }
            let row = row as u32;
            if icache.holds(row) {
                continue;
            }
            if std::mem::replace(&mut fetched[row as usize], true) {
                return Err(SimError::Refetch { layer: cfg.name.clone(), row });
            }
            let dram = &state.dram;
            let addrs: Vec<u64> = (0..cfg.w_in)
                .flat_map(|x| (0..cfg.ch_in).map(move |ci| (x, ci)))
                .map(|(x, ci)| dram.addr(cfg.input_region, row, x, ci))
                .collect();
            icache.fill(row, addrs.iter().map(|&a| dram.read(a)));
            trace.counters.input_reads += addrs.len() as u64;
            if tracing {
                trace.input_addrs.extend_from_slice(&addrs);
            }
            trace.occupancy.icache = trace.occupancy.icache.max(icache.occupancy());
        }

        for x in 0..cfg.w_out {
            ocache.iter_mut().for_each(|v| *v = 0.0);
            let (cy, cx) = (s * y as i64, s * x as i64);
            for ci in 0..cfg.ch_in {
                // pixel buffer, zero-padded on the fly
                let mut pixels = [0f32; 9];
                if cfg.k == 1 {
                    pixels[4] = icache.read(cy as u32, cx as u32, ci);
                } else {
                    for j in 0..3i64 {
                        let r = cy + j - 1;
                        if r < 0 || r >= cfg.h_in as i64 {
                            continue;
                        }
                        for i in 0..3i64 {
                            let c = cx + i - 1;
                            if c >= 0 && c < cfg.w_in as i64 {
                                pixels[(j * 3 + i) as usize] = icache.read(r as u32, c as u32, ci);
                            }
                        }
                    }
                }
                // PE `co % n_pe` owns output channel `co`
                let kernels = &wcache[ci as usize * ch_out..(ci as usize + 1) * ch_out];
                for (acc_co, kernel) in ocache.iter_mut().zip(kernels) {
                    *acc_co += macc_3x3(&pixels, kernel);
                }
            }
            trace.occupancy.ocache = ch_out as u64;
            for co in 0..ch_out {
                let mut v = ocache[co] + bias[co];
                if cfg.fuse_relu {
                    v = v.max(0.0);
                }
                let a = state.dram.addr(cfg.output_region, y, x, co as u32 + offset);
                state.dram.write(a, v);
                trace.counters.output_writes += 1;
                if tracing {
                    trace.output_addrs.push(a);
                }
                if cfg.is_global_pool_consumer {
                    gpool[co] += v;
                }
            }
        }
    }

    if cfg.is_global_pool_consumer {
        trace.occupancy.gpool = ch_out as u64;
        let region_ch = state.dram.layout()[cfg.output_region].shape.ch as usize;
        state.pooled.resize(region_ch, 0.0);
        let scale = 1.0 / (cfg.h_out * cfg.w_out) as f32;
        for (co, sum) in gpool.iter().enumerate() {
            state.pooled[offset as usize + co] = sum * scale;
            trace.counters.gpool_writes += 1;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Class probabilities when the network ends in softmax, otherwise the
    /// pooled vector or the last feature map.
    pub output: Tensor3D,
    pub layers: Vec<LayerTrace>,
    pub totals: MemTraceCounters,
    pub peak: Occupancy,
    pub dram: Dram,
}

impl SimOutput {
    /// Feature map written by the named accelerator layer (its whole output region).
    pub fn region_of(&self, net: &CompiledNetwork, layer: &str) -> Option<Tensor3D> {
        net.layers.iter().find(|l| l.name == layer).map(|l| self.dram.download(l.output_region))
    }
}

pub fn run_network(
    net: &CompiledNetwork,
    acc: &AcceleratorConfig,
    weights: &WeightMap,
    input: &Tensor3D,
    options: SimOptions,
) -> Result<SimOutput, SimError> {
    let mut state = SimState::new(acc.clone(), options, &net.regions);
    state.dram.upload(0, input)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut totals = MemTraceCounters::default();
    let mut peak = Occupancy::default();
    for cfg in &net.layers {
        let w = weights.get(&cfg.name).ok_or_else(|| SimError::MissingWeights(cfg.name.clone()))?;
        let t = run_layer(&mut state, cfg, w)?;
        totals += t.counters;
        peak = peak.max(t.occupancy);
        layers.push(t);
    }
    let output = if net.epilogue.global_pool.is_some() {
        let ch = net.regions[net.output_region].ch;
        let pooled = Tensor3D::from_vec(TensorShape::new(ch, 1, 1), state.pooled.clone())?;
        if net.epilogue.softmax.is_some() {
            engine::softmax(&pooled)?
        } else {
            pooled
        }
    } else {
        state.dram.download(net.output_region)
    };
    if !output.is_finite() {
        return Err(SimError::Engine(engine::EngineError::NonFiniteResult("accelerator output".into())));
    }
    Ok(SimOutput { output, layers, totals, peak, dram: state.dram })
}
