//! Stage and terminal costs.

use crate::kinematics::{Control3, Pose2, VehicleCommand8};
use crate::planner::ReferencePath;
use crate::world::{in_collision, InflatedGrid};

use super::{CostWeights, MppiConfig};

/// Read-only world state shared by all rollouts of one solve.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub grid: &'a InflatedGrid,
    pub path: &'a ReferencePath,
    pub goal: Pose2,
}

/// Unweighted stage cost components, plus the coupling term already scaled
/// by gamma.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTerms {
    pub dist_sq: f64,
    pub angle_sq: f64,
    pub speed_sq: f64,
    pub collision: f64,
    pub command: f64,
    pub coupling: f64,
}

impl StageTerms {
    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.w_dist * self.dist_sq
            + w.w_angle * self.angle_sq
            + w.w_speed * self.speed_sq
            + w.w_collision * self.collision
            + self.command
            + self.coupling
    }
}

/// Inputs of one stage evaluation.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    /// Pose reached after applying the candidate row.
    pub pose: &'a Pose2,
    /// Twist realized by the candidate row.
    pub twist: &'a Control3,
    /// Candidate row in the sampling space.
    pub candidate: &'a [f64],
    /// Warm-start row at the same time index; `None` drops the coupling term.
    pub mean: Option<&'a [f64]>,
    pub command: &'a VehicleCommand8,
    pub prev_command: &'a VehicleCommand8,
}

pub fn stage_terms(input: &StageInput<'_>, scene: &Scene<'_>, cfg: &MppiConfig) -> StageTerms {
    let err = scene.path.query_errors(input.pose);
    let speed_err = input.twist.speed() - cfg.v_des;
    let coupling = match input.mean {
        Some(mean) if cfg.gamma != 0.0 => {
            let mut acc = 0.0;
            for ((u, v), s) in mean.iter().zip(input.candidate).zip(&cfg.sigma) {
                acc += u * v / s;
            }
            cfg.gamma * acc
        }
        _ => 0.0,
    };
    StageTerms {
        dist_sq: err.dist * err.dist,
        angle_sq: err.angle * err.angle,
        speed_sq: speed_err * speed_err,
        collision: f64::from(in_collision(scene.grid, input.pose)),
        command: input.command.distance(input.prev_command),
        coupling,
    }
}

/// Weighted stage cost.
pub fn stage_cost(input: &StageInput<'_>, scene: &Scene<'_>, weights: &CostWeights, cfg: &MppiConfig) -> f64 {
    stage_terms(input, scene, cfg).weighted(weights)
}

/// Quadratic distance to the goal position.
pub fn terminal_cost(p: &Pose2, goal: &Pose2, weights: &CostWeights) -> f64 {
    let dx = p.x - goal.x;
    let dy = p.y - goal.y;
    weights.w_goal * (dx * dx + dy * dy)
}
