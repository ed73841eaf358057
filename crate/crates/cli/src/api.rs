//! Request/response types shared by the command line and the HTTP service.
//!
//! Every JSON document either front end emits goes through [`to_json`], so
//! the same request yields the same bytes on both paths.

use std::path::Path;

use serde::{Deserialize, Serialize};

use znq_core::accel::{self, AcceleratorConfig, LayerTrace, MemTraceCounters, Occupancy, SimOptions};
use znq_core::analyzer::{analyze_network, AnalysisReport, LayerCost};
use znq_core::engine::{self, Accumulation, Tensor3D, WeightMap};
use znq_core::ir::{Diagnostic, NetworkGraph, Severity, TensorShape};
use znq_core::perf::{whatif, CycleReport, WhatIfScenario};
use znq_core::presets;
use znq_core::prototxt::{self, LayerSpans, SourceSpan};
use znq_core::weights::{self, SplitMix64};

/// Structured failure: `code` is a stable identifier, `span` points into the prototxt when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
}

impl ApiError {
    pub fn new(code: impl Into<String>, message: impl ToString) -> Self {
        ApiError { code: code.into(), message: message.to_string(), span: None }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a ApiError,
}

pub fn error_json(e: &ApiError) -> String {
    to_json(&ErrorBody { error: e })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("API types always serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Analyze,
    Infer,
    Simulate,
    Estimate,
}

/// One unit of work. `weights_ref` is a ZNQW path or `random:<seed>`;
/// `input_ref` is a ZNQT path or `random:<seed>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub action: Action,
    pub prototxt: String,
    #[serde(default)]
    pub weights_ref: Option<String>,
    #[serde(default)]
    pub input_ref: Option<String>,
    #[serde(default)]
    pub scenario: Option<WhatIfScenario>,
    /// Simulation only: also run the reference engine and report the error.
    #[serde(default)]
    pub verify: bool,
}

impl JobRequest {
    pub fn new(action: Action, prototxt: impl Into<String>) -> Self {
        JobRequest { action, prototxt: prototxt.into(), weights_ref: None, input_ref: None, scenario: None, verify: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticJson {
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    pub rule: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<SourceSpan>,
}

fn diagnostic_json(d: Diagnostic, spans: &LayerSpans) -> DiagnosticJson {
    let span = d.layer.as_ref().and_then(|l| spans.get(l)).copied();
    DiagnosticJson { severity: d.severity, layer: d.layer, rule: d.rule, message: d.message, span }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeJson {
    pub ch: u32,
    pub h: u32,
    pub w: u32,
}

impl From<TensorShape> for ShapeJson {
    fn from(s: TensorShape) -> Self {
        ShapeJson { ch: s.ch, h: s.h, w: s.w }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerJson {
    pub name: String,
    pub kind: &'static str,
    pub module: String,
    pub in_shapes: Vec<ShapeJson>,
    pub out_shape: ShapeJson,
    #[serde(flatten)]
    pub cost: LayerCost,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModuleJson {
    pub name: String,
    pub layers: usize,
    #[serde(flatten)]
    pub cost: LayerCost,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub layers: Vec<LayerJson>,
    pub modules: Vec<ModuleJson>,
    pub totals: LayerCost,
    pub diagnostics: Vec<DiagnosticJson>,
}

impl AnalyzeResponse {
    fn new(graph: &NetworkGraph, report: AnalysisReport, diagnostics: Vec<DiagnosticJson>) -> Self {
        AnalyzeResponse {
            name: graph.name.clone(),
            layers: report
                .per_layer
                .into_iter()
                .map(|r| LayerJson {
                    name: r.name,
                    kind: r.kind.type_name(),
                    module: r.module,
                    in_shapes: r.in_shapes.into_iter().map(Into::into).collect(),
                    out_shape: r.out_shape.into(),
                    cost: r.cost,
                    note: r.note,
                })
                .collect(),
            modules: report.per_module.into_iter().map(|m| ModuleJson { name: m.name, layers: m.layers, cost: m.cost }).collect(),
            totals: report.totals,
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateResponse {
    pub valid: bool,
    pub diagnostics: Vec<DiagnosticJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResponse {
    pub scenario: WhatIfScenario,
    #[serde(flatten)]
    pub report: CycleReport,
    /// Versus the flush-fixed float32 design at the same clock.
    pub speedup: f64,
    pub speedup_vs_as_built: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassScore {
    pub class: usize,
    pub probability: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferResponse {
    pub output_shape: ShapeJson,
    pub top5: Vec<ClassScore>,
    #[serde(skip)]
    pub output: Tensor3D,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerCountersJson {
    pub name: String,
    #[serde(flatten)]
    pub counters: MemTraceCounters,
    pub peak: Occupancy,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyJson {
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Output equals the engine's accelerator-order mode bit for bit.
    pub bit_exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateResponse {
    pub output_shape: ShapeJson,
    pub top5: Vec<ClassScore>,
    pub totals: MemTraceCounters,
    pub peak: Occupancy,
    pub layers: Vec<LayerCountersJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyJson>,
    #[serde(skip)]
    pub output: Tensor3D,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum JobResponse {
    Analyze(AnalyzeResponse),
    Estimate(EstimateResponse),
    Infer(InferResponse),
    Simulate(SimulateResponse),
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetJson {
    pub name: &'static str,
    pub description: &'static str,
    pub prototxt: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetsResponse {
    pub presets: Vec<PresetJson>,
}

pub fn presets() -> PresetsResponse {
    PresetsResponse {
        presets: presets::ALL.iter().map(|p| PresetJson { name: p.name, description: p.description, prototxt: p.prototxt }).collect(),
    }
}

/// Relative tolerance `simulate --verify` accepts.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

fn parse(text: &str) -> Result<(NetworkGraph, LayerSpans), ApiError> {
    prototxt::parse_with_spans(text).map_err(|e| ApiError { code: e.code().to_string(), span: e.span(), message: e.to_string() })
}

pub fn validate(text: &str) -> Result<ValidateResponse, ApiError> {
    let (graph, spans) = parse(text)?;
    let diagnostics: Vec<DiagnosticJson> = graph.validate().into_iter().map(|d| diagnostic_json(d, &spans)).collect();
    Ok(ValidateResponse { valid: !diagnostics.iter().any(|d| d.severity == Severity::Error), diagnostics })
}

/// Parses, validates and infers shapes; validation errors become an `InvalidGraph` error.
fn load_graph(text: &str) -> Result<(NetworkGraph, Vec<DiagnosticJson>), ApiError> {
    let (graph, spans) = parse(text)?;
    let diagnostics: Vec<DiagnosticJson> = graph.validate().into_iter().map(|d| diagnostic_json(d, &spans)).collect();
    if let Some(first) = diagnostics.iter().find(|d| d.severity == Severity::Error) {
        let n = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
        let more = if n > 1 { format!(" (and {} more)", n - 1) } else { String::new() };
        let who = first.layer.as_deref().map(|l| format!("{l}: ")).unwrap_or_default();
        return Err(ApiError { code: "InvalidGraph".into(), message: format!("{who}{}{more}", first.message), span: first.span });
    }
    let graph = graph.infer_shapes().map_err(|e| ApiError::new("GraphError", e))?;
    Ok((graph, diagnostics))
}

fn seed_ref(r: &str) -> Option<Result<u64, ApiError>> {
    r.strip_prefix("random:").map(|s| s.parse().map_err(|_| ApiError::new("BadReference", format!("`{r}`: seed must be an unsigned integer"))))
}

fn load_weights(graph: &NetworkGraph, r: Option<&str>) -> Result<WeightMap, ApiError> {
    let r = r.ok_or_else(|| ApiError::new("MissingField", "weights_ref is required"))?;
    let w = match seed_ref(r) {
        Some(seed) => weights::random_weights(graph, seed?),
        None => weights::load_weights(Path::new(r)),
    }
    .map_err(|e| ApiError::new("WeightsError", e))?;
    weights::check_against(graph, &w).map_err(|e| ApiError::new("WeightsError", e))?;
    Ok(w)
}

fn load_input(graph: &NetworkGraph, r: Option<&str>) -> Result<Tensor3D, ApiError> {
    let r = r.ok_or_else(|| ApiError::new("MissingField", "input_ref is required"))?;
    let shape = graph.data_shape().ok_or_else(|| ApiError::new("GraphError", "network has no data layer"))?;
    match seed_ref(r) {
        Some(seed) => {
            let mut rng = SplitMix64::new(seed?);
            let data = (0..shape.elements()).map(|_| rng.next_symmetric(1.0)).collect();
            Tensor3D::from_vec(shape, data).map_err(|e| ApiError::new("EngineError", e))
        }
        None => {
            let t = weights::load_tensor(Path::new(r)).map_err(|e| ApiError::new("WeightsError", e))?;
            if t.shape != shape {
                return Err(ApiError::new("ShapeMismatch", format!("input is {}, network expects {shape}", t.shape)));
            }
            Ok(t)
        }
    }
}

fn top5(t: &Tensor3D) -> Vec<ClassScore> {
    let mut idx: Vec<usize> = (0..t.data.len()).collect();
    idx.sort_by(|&a, &b| t.data[b].total_cmp(&t.data[a]).then(a.cmp(&b)));
    idx.into_iter().take(5).map(|class| ClassScore { class, probability: t.data[class] }).collect()
}

pub fn analyze(text: &str) -> Result<(AnalyzeResponse, AnalysisReport), ApiError> {
    let (graph, diagnostics) = load_graph(text)?;
    let report = analyze_network(&graph).map_err(|e| ApiError::new("AnalysisError", e))?;
    Ok((AnalyzeResponse::new(&graph, report.clone(), diagnostics), report))
}

pub fn estimate(text: &str, scenario: &WhatIfScenario) -> Result<EstimateResponse, ApiError> {
    scenario.validate().map_err(|e| ApiError::new("InvalidScenario", e))?;
    let (graph, _) = load_graph(text)?;
    let net = accel::compile(&graph).map_err(|e| ApiError::new("UnsupportedForAccelerator", e))?;
    let w = whatif(&net.layers, &AcceleratorConfig::default(), scenario);
    Ok(EstimateResponse { scenario: w.scenario, report: w.report, speedup: w.speedup, speedup_vs_as_built: w.speedup_vs_as_built })
}

pub fn infer(job: &JobRequest) -> Result<InferResponse, ApiError> {
    let (graph, _) = load_graph(&job.prototxt)?;
    let w = load_weights(&graph, job.weights_ref.as_deref())?;
    let input = load_input(&graph, job.input_ref.as_deref())?;
    let output = engine::run_network(&graph, &w, &input, Accumulation::Sequential).map_err(|e| ApiError::new("EngineError", e))?;
    Ok(InferResponse { output_shape: output.shape.into(), top5: top5(&output), output })
}

pub fn simulate(job: &JobRequest) -> Result<SimulateResponse, ApiError> {
    let (graph, _) = load_graph(&job.prototxt)?;
    let net = accel::compile(&graph).map_err(|e| ApiError::new("UnsupportedForAccelerator", e))?;
    let w = load_weights(&graph, job.weights_ref.as_deref())?;
    let input = load_input(&graph, job.input_ref.as_deref())?;
    let sim = accel::run_network(&net, &AcceleratorConfig::default(), &w, &input, SimOptions::default())
        .map_err(|e| ApiError::new("SimulationError", e))?;
    let verify = if job.verify {
        let seq = engine::run_network(&graph, &w, &input, Accumulation::Sequential).map_err(|e| ApiError::new("EngineError", e))?;
        let tree = engine::run_network(&graph, &w, &input, Accumulation::AdderTree).map_err(|e| ApiError::new("EngineError", e))?;
        Some(VerifyJson { max_rel_error: max_rel_error(&seq, &sim.output), tolerance: VERIFY_TOLERANCE, bit_exact: tree == sim.output })
    } else {
        None
    };
    let layers = sim.layers.iter().map(|t: &LayerTrace| LayerCountersJson { name: t.name.clone(), counters: t.counters, peak: t.occupancy }).collect();
    Ok(SimulateResponse {
        output_shape: sim.output.shape.into(),
        top5: top5(&sim.output),
        totals: sim.totals,
        peak: sim.peak,
        layers,
        verify,
        output: sim.output,
    })
}

/// `|a - b| / max(|a|, |b|)` maximised over elements; equal elements count as zero.
pub fn max_rel_error(a: &Tensor3D, b: &Tensor3D) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| if x == y { 0.0 } else { (x as f64 - y as f64).abs() / (x.abs().max(y.abs()) as f64) })
        .fold(0.0, f64::max)
}

pub fn execute(job: &JobRequest) -> Result<JobResponse, ApiError> {
    Ok(match job.action {
        Action::Analyze => JobResponse::Analyze(analyze(&job.prototxt)?.0),
        Action::Estimate => JobResponse::Estimate(estimate(&job.prototxt, &job.scenario.clone().unwrap_or_default())?),
        Action::Infer => JobResponse::Infer(infer(job)?),
        Action::Simulate => JobResponse::Simulate(simulate(job)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top5_breaks_ties_by_index() {
        let t = Tensor3D::from_vec(TensorShape::new(6, 1, 1), vec![0.1, 0.3, 0.3, 0.0, 0.2, 0.1]).unwrap();
        let classes: Vec<usize> = top5(&t).iter().map(|s| s.class).collect();
        assert_eq!(classes, [1, 2, 4, 0, 5]);
    }

    #[test]
    fn rel_error_ignores_exact_zeros() {
        let a = Tensor3D::from_vec(TensorShape::new(3, 1, 1), vec![0.0, 1.0, -2.0]).unwrap();
        let b = Tensor3D::from_vec(TensorShape::new(3, 1, 1), vec![0.0, 1.0, -2.2]).unwrap();
        assert!((max_rel_error(&a, &b) - 0.2 / 2.2).abs() < 1e-6);
    }

    #[test]
    fn seed_references() {
        assert_eq!(seed_ref("random:17").unwrap().unwrap(), 17);
        assert_eq!(seed_ref("random:x").unwrap().unwrap_err().code, "BadReference");
        assert!(seed_ref("weights.znqw").is_none());
    }

    #[test]
    fn error_body_shape() {
        let e = ApiError::new("X", "boom");
        assert_eq!(error_json(&e), "{\n  \"error\": {\n    \"code\": \"X\",\n    \"message\": \"boom\"\n  }\n}\n");
    }
}
