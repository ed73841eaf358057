//! Topology analysis, reference inference and accelerator simulation for
//! small convolutional networks described in Caffe prototxt.

pub mod accel;
pub mod analyzer;
pub mod engine;
pub mod error;
pub mod ir;
pub mod perf;
pub mod presets;
pub mod prototxt;
pub mod weights;

pub use error::{Error, Result};
