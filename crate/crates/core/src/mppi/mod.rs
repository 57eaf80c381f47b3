//! Model predictive path integral control over a selectable sampling space.

mod config;
mod cost;
mod noise;
mod solver;

pub use config::{space_bounds, ControlSequence, CostWeights, MppiConfig, TailInit};
pub use cost::{stage_cost, stage_terms, terminal_cost, Scene, StageInput, StageTerms};
pub use noise::{fill_sample_noise, iteration_key, sample_noise, NoiseTensor};
pub use solver::{
    build_candidates, compute_weights, MppiSolver, RolloutResult, SampleBatch, StepDiagnostics, StepOutput,
};

#[derive(Debug, thiserror::Error)]
pub enum MppiError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
