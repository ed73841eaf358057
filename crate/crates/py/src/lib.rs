//! Python bindings. Reports come back as plain dicts and lists.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use znq_core::accel::{self, AcceleratorConfig, SimOptions};
use znq_core::analyzer::analyze_network;
use znq_core::engine::{self, Accumulation, Tensor3D, WeightMap};
use znq_core::ir::NetworkGraph;
use znq_core::perf::{whatif, WhatIfScenario};
use znq_core::{presets, prototxt, weights};

create_exception!(znq, ZnqError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    ZnqError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A parsed network with inferred shapes.
#[pyclass(module = "znq", frozen)]
pub struct Network {
    graph: NetworkGraph,
}

/// Parameters for every weighted layer of one network.
#[pyclass(module = "znq", frozen)]
pub struct Weights {
    map: WeightMap,
}

fn load(text: &str) -> PyResult<NetworkGraph> {
    let g = prototxt::parse(text).map_err(err)?;
    if let Some(d) = g.validate().into_iter().find(|d| d.severity == znq_core::ir::Severity::Error) {
        return Err(err(d));
    }
    g.infer_shapes().map_err(err)
}

impl Network {
    fn input(&self, data: Option<Vec<f32>>, seed: u64) -> PyResult<Tensor3D> {
        let shape = self.graph.data_shape().ok_or_else(|| err("network has no data layer"))?;
        let data = match data {
            Some(d) => d,
            None => {
                let mut rng = weights::SplitMix64::new(seed);
                (0..shape.elements()).map(|_| rng.next_symmetric(1.0)).collect()
            }
        };
        Tensor3D::from_vec(shape, data).map_err(err)
    }

    fn weights<'a>(&self, w: &'a Weights) -> PyResult<&'a WeightMap> {
        weights::check_against(&self.graph, &w.map).map_err(err)?;
        Ok(&w.map)
    }
}

#[pymethods]
impl Network {
    #[staticmethod]
    fn from_prototxt(text: &str) -> PyResult<Self> {
        Ok(Network { graph: load(text)? })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p = presets::find(name).ok_or_else(|| err(format!("unknown preset `{name}`")))?;
        Self::from_prototxt(p.prototxt)
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.graph.name.clone()
    }

    #[getter]
    fn input_shape(&self) -> Option<(u32, u32, u32)> {
        self.graph.data_shape().map(|s| (s.ch, s.h, s.w))
    }

    fn layer_names(&self) -> Vec<String> {
        self.graph.layers.iter().map(|l| l.name.clone()).collect()
    }

    fn to_prototxt(&self) -> String {
        prototxt::serialize(&self.graph)
    }

    /// Warnings (errors were rejected at load time).
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.graph.validate())
    }

    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analyze_network(&self.graph).map_err(err)?)
    }

    #[pyo3(signature = (*, flush_fixed=false, prefetch_latency=9, pack_1x1=false, fixed_point_16bit=false, clock_mhz=100.0))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        flush_fixed: bool,
        prefetch_latency: u32,
        pack_1x1: bool,
        fixed_point_16bit: bool,
        clock_mhz: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = WhatIfScenario { flush_fixed, prefetch_latency, pack_1x1, fixed_point_16bit, clock_mhz };
        s.validate().map_err(err)?;
        let net = accel::compile(&self.graph).map_err(err)?;
        to_py(py, &whatif(&net.layers, &AcceleratorConfig::default(), &s))
    }

    fn random_weights(&self, seed: u64) -> PyResult<Weights> {
        Ok(Weights { map: weights::random_weights(&self.graph, seed).map_err(err)? })
    }

    /// Reference forward pass. `data` is CHW-flattened; omitted means a seeded random input.
    #[pyo3(signature = (weights, data=None, seed=0))]
    fn infer(&self, weights: &Weights, data: Option<Vec<f32>>, seed: u64) -> PyResult<Vec<f32>> {
        let input = self.input(data, seed)?;
        let out = engine::run_network(&self.graph, self.weights(weights)?, &input, Accumulation::Sequential).map_err(err)?;
        Ok(out.data)
    }

    /// Accelerator run. Returns `{"output", "totals", "peak", "layers"}`.
    #[pyo3(signature = (weights, data=None, seed=0))]
    fn simulate<'py>(&self, py: Python<'py>, weights: &Weights, data: Option<Vec<f32>>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let input = self.input(data, seed)?;
        let net = accel::compile(&self.graph).map_err(err)?;
        let out = accel::run_network(&net, &AcceleratorConfig::default(), self.weights(weights)?, &input, SimOptions::default()).map_err(err)?;
        #[derive(Serialize)]
        struct Sim<'a> {
            output: &'a [f32],
            totals: accel::MemTraceCounters,
            peak: accel::Occupancy,
            layers: &'a [accel::LayerTrace],
        }
        to_py(py, &Sim { output: &out.output.data, totals: out.totals, peak: out.peak, layers: &out.layers })
    }

    fn __repr__(&self) -> String {
        format!("Network({:?}, {} layers)", self.graph.name.as_deref().unwrap_or(""), self.graph.layers.len())
    }
}

#[pymethods]
impl Weights {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Weights { map: weights::load_weights(path).map_err(err)? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        weights::save_weights(path, &self.map).map_err(err)
    }

    fn layer_names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    fn parameter_count(&self) -> usize {
        self.map.values().map(|w| w.filters.len() + w.bias.len()).sum()
    }

    fn __len__(&self) -> usize {
        self.map.len()
    }
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    presets::ALL.iter().map(|p| p.name).collect()
}

#[pymodule]
fn znq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Weights>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add("ZnqError", m.py().get_type::<ZnqError>())?;
    Ok(())
}
