//! Episode runner, metrics, configuration files and result tables.

mod batch;
mod config;
mod episode;

pub use batch::{run_batch, summarize, BatchResult, BatchSummary, EpisodeRow};
pub use config::{ControllerKind, RunConfig, SolverParams};
pub use episode::{
    align_goal_headings, build_controller, compute_metrics, episode_seed, episode_world, run_episode, run_in_world,
    terminal_anchor, EpisodeGrids, EpisodeMetrics,
    EpisodeTrace, Outcome, TickRecord,
};

use crate::mppi::MppiError;
use crate::planner::PlanError;
use crate::world::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Mppi(#[from] MppiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
