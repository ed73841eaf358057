//! Cycle-free functional model of the convolution accelerator: DRAM regions,
//! on-chip caches and the 9-input MACC datapath.

mod cache;
mod compile;
mod config;
mod sim;

use thiserror::Error;

use crate::engine::EngineError;
use crate::ir::GraphError;

pub use cache::{icache_slot, macc_3x3, Occupancy};
pub use compile::compile;
pub use config::{AcceleratorConfig, AcceleratorLayerConfig, CompiledNetwork, Epilogue};
pub use sim::{run_layer, run_network, Dram, LayerTrace, MemTraceCounters, RegionLayout, SimOptions, SimOutput, SimState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("layer `{layer}` cannot run on the accelerator: {reason}")]
    UnsupportedForAccelerator { layer: String, reason: String },
    #[error("layer `{layer}` needs {needed} elements of {cache}, capacity is {capacity}")]
    CacheOverflow { layer: String, cache: &'static str, needed: u64, capacity: u64 },
    #[error("input line of {width} elements exceeds the {capacity}-element ICache line")]
    LineTooWide { width: u64, capacity: u64 },
    #[error("no weights for accelerator layer `{0}`")]
    MissingWeights(String),
    #[error("weights for layer `{layer}` do not match: {detail}")]
    WeightShape { layer: String, detail: String },
    #[error("layer `{layer}` fetched input row {row} twice")]
    Refetch { layer: String, row: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
