use thiserror::Error;

use crate::accel::SimError;
use crate::engine::EngineError;
use crate::ir::GraphError;
use crate::perf::ScenarioError;
use crate::prototxt::ParseError;
use crate::weights::WeightsError;

/// Umbrella error for callers that chain several stages (parse, infer, simulate).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("arithmetic overflow while counting layer `{0}`")]
    Overflow(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
