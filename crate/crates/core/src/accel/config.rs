use serde::{Deserialize, Serialize};

use crate::ir::TensorShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    /// Parallel processing elements; each owns the output channels `co ≡ pe (mod n_pe)`.
    pub n_pe: u32,
    pub icache_lines: u32,
    /// Elements per ICache line (one input row across all input channels).
    pub icache_line_capacity: u32,
    pub icache_capacity: u32,
    pub wcache_capacity: u32,
    pub ocache_capacity: u32,
    pub gpool_capacity: u32,
    /// Cycles to preload the pixel buffer from the ICache.
    pub prefetch_latency_cycles: u32,
    /// Fixed fill/drain overhead per iteration when the inner pipeline is flushed.
    pub flush_base_cycles: u32,
    pub clock_mhz: f64,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        AcceleratorConfig {
            n_pe: 16,
            icache_lines: 4,
            icache_line_capacity: 8192,
            icache_capacity: 4 * 8192,
            wcache_capacity: 16 * 3 * 1024 * 9,
            ocache_capacity: 512,
            gpool_capacity: 512,
            prefetch_latency_cycles: 9,
            flush_base_cycles: 62,
            clock_mhz: 100.0,
        }
    }
}

/// One convolution as the accelerator executes it (the per-layer setup record).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratorLayerConfig {
    pub name: String,
    pub w_in: u32,
    pub h_in: u32,
    pub w_out: u32,
    pub h_out: u32,
    pub ch_in: u32,
    pub ch_out: u32,
    pub k: u32,
    pub s: u32,
    /// Writes channels `[0, ch_out)` of a shared output region.
    pub is_1st_split: bool,
    /// Writes channels `[ch_out, 2*ch_out)` of the region its partner started.
    pub is_2nd_split: bool,
    pub fuse_relu: bool,
    /// Output also feeds the global average pooling stage.
    pub is_global_pool_consumer: bool,
    /// DRAM region read by this layer.
    pub input_region: usize,
    /// DRAM region written by this layer.
    pub output_region: usize,
}

impl AcceleratorLayerConfig {
    pub fn pad(&self) -> u32 {
        self.k / 2
    }

    pub fn weight_count(&self) -> u64 {
        (self.k * self.k) as u64 * self.ch_in as u64 * self.ch_out as u64 + self.ch_out as u64
    }

    /// First output channel this layer writes in its output region.
    pub fn channel_offset(&self) -> u32 {
        if self.is_2nd_split {
            self.ch_out
        } else {
            0
        }
    }

    pub fn input_shape(&self) -> TensorShape {
        TensorShape::new(self.ch_in, self.h_in, self.w_in)
    }

    pub fn output_shape(&self) -> TensorShape {
        TensorShape::new(self.ch_out, self.h_out, self.w_out)
    }
}

/// Host-side stages that follow the last convolution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epilogue {
    /// Name of the global average pooling layer, if any.
    pub global_pool: Option<String>,
    /// Name of the softmax layer, if any.
    pub softmax: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledNetwork {
    pub input_shape: TensorShape,
    /// Feature-map regions in DRAM; region 0 holds the input image.
    pub regions: Vec<TensorShape>,
    pub layers: Vec<AcceleratorLayerConfig>,
    pub epilogue: Epilogue,
    /// Region holding the final convolution output.
    pub output_region: usize,
}
