//! Closed-loop episodes and their metrics.

use std::io::Write;

use crate::hybrid::{Controller, HybridController, SingleSpaceController, ThreeDofVariant};
use crate::kinematics::{propagate, ControlSpace, Pose2, VehicleCommand8};
use crate::mppi::{MppiSolver, Scene};
use crate::planner::{plan, PlanError, ReferencePath};
use crate::world::{generate, in_collision, inflate, InflatedGrid, World};

use super::{ControllerKind, HarnessError, RunConfig};

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    NoPath,
}

impl Outcome {
    /// Label used in the results table; empty for success.
    pub fn failure_kind(self) -> &'static str {
        match self {
            Outcome::Success => "",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
            Outcome::NoPath => "no_path",
        }
    }
}

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    /// Pose the controller observed.
    pub pose: Pose2,
    pub goal: usize,
    pub mode: ControlSpace,
    pub command: VehicleCommand8,
    pub solve_time_ms: f64,
    /// Optimal-trajectory cost reported by the solver.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub control_dt: f64,
    pub ticks: Vec<TickRecord>,
    /// Start pose followed by the pose after every tick.
    pub poses: Vec<Pose2>,
    pub goals_reached: usize,
    pub outcome: Outcome,
}

impl EpisodeTrace {
    /// Per-tick CSV: pose, mode, the eight command values and solve time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "tick", "goal", "x", "y", "theta", "mode", "steer_fl", "steer_fr", "steer_rl", "steer_rr", "speed_fl",
            "speed_fr", "speed_rl", "speed_rr", "solve_ms", "cost",
        ])?;
        for (k, t) in self.ticks.iter().enumerate() {
            let mut rec = vec![
                k.to_string(),
                t.goal.to_string(),
                t.pose.x.to_string(),
                t.pose.y.to_string(),
                t.pose.theta.to_string(),
                t.mode.label().to_string(),
            ];
            rec.extend(t.command.to_array().iter().map(|v| v.to_string()));
            rec.push(t.solve_time_ms.to_string());
            rec.push(t.cost.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub success: bool,
    /// Mean optimal-trajectory cost per tick.
    pub cost: f64,
    pub calc_time_ms: f64,
    /// Mean absolute steering angle rate over wheels and ticks [rad/s].
    pub steering_rate: f64,
    /// Mean absolute wheel speed change rate [m/s^2].
    pub wheel_acc: f64,
    pub traj_len_m: f64,
    pub episode_time_s: f64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn compute_metrics(trace: &EpisodeTrace) -> EpisodeMetrics {
    let n = trace.ticks.len();
    let dt = trace.control_dt;
    let mut steer = 0.0;
    let mut acc = 0.0;
    for pair in trace.ticks.windows(2) {
        let (a, b) = (&pair[0].command, &pair[1].command);
        for w in 0..4 {
            steer += (b.steer[w] - a.steer[w]).abs() / dt;
            acc += (b.speed[w] - a.speed[w]).abs() / dt;
        }
    }
    let deltas = 4 * n.saturating_sub(1);
    EpisodeMetrics {
        success: trace.outcome == Outcome::Success,
        cost: mean(trace.ticks.iter().map(|t| t.cost).sum(), n),
        calc_time_ms: mean(trace.ticks.iter().map(|t| t.solve_time_ms).sum(), n),
        steering_rate: mean(steer, deltas),
        wheel_acc: mean(acc, deltas),
        traj_len_m: trace.poses.windows(2).map(|p| p[0].distance(&p[1])).sum(),
        episode_time_s: n as f64 * dt,
    }
}

/// Seed of episode `index` under master seed `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

pub fn build_controller(cfg: &RunConfig, kind: ControllerKind, seed: u64) -> Result<Box<dyn Controller>, HarnessError> {
    let solver = |space, variant| {
        MppiSolver::new(cfg.mppi_config(space, variant, seed), cfg.weights, cfg.geometry, cfg.limits)
    };
    Ok(match kind {
        ControllerKind::Mppi3a => Box::new(SingleSpaceController::new(
            kind.name(),
            solver(ControlSpace::ThreeDof, ThreeDofVariant::A)?,
        )),
        ControllerKind::Mppi3b => Box::new(SingleSpaceController::new(
            kind.name(),
            solver(ControlSpace::ThreeDof, ThreeDofVariant::B)?,
        )),
        ControllerKind::Mppi4 => Box::new(SingleSpaceController::new(
            kind.name(),
            solver(ControlSpace::FourDof, ThreeDofVariant::A)?,
        )),
        ControllerKind::Hybrid => {
            let h = cfg.hybrid_config();
            Box::new(HybridController::new(
                h,
                solver(ControlSpace::ThreeDof, h.variant)?,
                solver(ControlSpace::FourDof, h.variant)?,
            )?)
        }
    })
}

fn reached(p: &Pose2, goal: &Pose2, cfg: &RunConfig) -> bool {
    p.distance(goal) < cfg.goal_tolerance && p.heading_error(goal) < cfg.goal_heading_tolerance
}

/// Grids of one episode: the collision grid and the more conservative
/// planning grid.
#[derive(Debug, Clone)]
pub struct EpisodeGrids {
    pub collision: InflatedGrid,
    pub planning: InflatedGrid,
}

impl EpisodeGrids {
    pub fn new(world: &World, clearance: f64, plan_margin: f64) -> Result<Self, HarnessError> {
        Ok(Self {
            collision: inflate(&world.grid, clearance)?,
            planning: inflate(&world.grid, clearance + plan_margin)?,
        })
    }

    /// Plans on the planning grid, falling back to the collision grid when
    /// the extra margin blocks every route.
    pub fn plan(&self, start: &Pose2, goal: &Pose2, spacing: f64) -> Result<ReferencePath, PlanError> {
        plan(&self.planning, start, goal, spacing).or_else(|_| plan(&self.collision, start, goal, spacing))
    }
}

/// Drives `controller` through the goals of `world`.
pub fn run_in_world(
    cfg: &RunConfig,
    world: &World,
    grids: &EpisodeGrids,
    controller: &mut dyn Controller,
) -> Result<EpisodeTrace, HarnessError> {
    let grid = &grids.collision;
    let max_ticks = (cfg.goal_timeout / cfg.control_dt - 1e-9).ceil() as usize;
    let mut pose = world.start;
    let mut prev = VehicleCommand8::default();
    let mut trace = EpisodeTrace {
        control_dt: cfg.control_dt,
        ticks: Vec::new(),
        poses: vec![pose],
        goals_reached: 0,
        outcome: Outcome::Success,
    };
    controller.reset();
    for (gi, goal) in world.goals.iter().enumerate() {
        if reached(&pose, goal, cfg) {
            trace.goals_reached += 1;
            continue;
        }
        let path = match grids.plan(&pose, goal, cfg.path_spacing) {
            Ok(p) => p,
            Err(_) => {
                trace.outcome = Outcome::NoPath;
                return Ok(trace);
            }
        };
        let mut ticks = 0;
        loop {
            if ticks >= max_ticks {
                trace.outcome = Outcome::Timeout;
                return Ok(trace);
            }
            let scene = Scene {
                grid,
                path: &path,
                goal: terminal_anchor(&path, &pose, goal, cfg.terminal_lookahead),
            };
            let out = controller.step(&pose, &scene, &prev)?;
            let twist = out.command.implied_control3(&cfg.geometry).clamped(&cfg.limits);
            let observed = pose;
            pose = propagate(&pose, &twist, cfg.control_dt);
            trace.ticks.push(TickRecord {
                pose: observed,
                goal: gi,
                mode: out.mode,
                command: out.command,
                solve_time_ms: if cfg.record_timing {
                    out.diagnostics.solve_time_ms
                } else {
                    0.0
                },
                cost: out.diagnostics.optimal_cost,
            });
            trace.poses.push(pose);
            prev = out.command;
            ticks += 1;
            if in_collision(grid, &pose) == 1 {
                trace.outcome = Outcome::Collision;
                return Ok(trace);
            }
            if reached(&pose, goal, cfg) {
                trace.goals_reached += 1;
                break;
            }
        }
    }
    Ok(trace)
}

/// Point the terminal cost pulls towards: `lookahead` metres down the path
/// from the vehicle, or the goal once the path ends within that distance.
pub fn terminal_anchor(path: &ReferencePath, pose: &Pose2, goal: &Pose2, lookahead: f64) -> Pose2 {
    if !lookahead.is_finite() || path.query_errors(pose).progress + lookahead >= path.length() {
        return *goal;
    }
    path.lookahead_point(pose, lookahead)
}

/// Generated world and grids of episode `index`.
pub fn episode_world(cfg: &RunConfig, index: usize) -> Result<(World, EpisodeGrids), HarnessError> {
    let mut scenario = cfg.scenario.clone();
    scenario.seed = episode_seed(cfg.seed, index);
    let mut world = generate(&scenario)?;
    let grids = EpisodeGrids::new(&world, scenario.clearance, cfg.plan_margin)?;
    align_goal_headings(&mut world, &grids, cfg.path_spacing);
    Ok((world, grids))
}

/// Distance over which the arrival direction of a leg is measured [m].
const ARRIVAL_SPAN: f64 = 0.5;

/// Points every goal along the direction its planned leg arrives from, so the
/// heading tolerance can be met by driving the path. Legs that cannot be
/// planned keep their generated heading and fail later as `no_path`.
pub fn align_goal_headings(world: &mut World, grids: &EpisodeGrids, spacing: f64) {
    let mut from = world.start;
    for goal in &mut world.goals {
        if let Ok(path) = grids.plan(&from, goal, spacing) {
            let wps = path.waypoints();
            if wps.len() >= 2 {
                let cut = path.length() - ARRIVAL_SPAN;
                let a = wps[path.arc_lengths().partition_point(|&s| s < cut).min(wps.len() - 2)];
                let b = path.last();
                goal.theta = (b.y - a.y).atan2(b.x - a.x);
            }
        }
        from = *goal;
    }
}

/// Runs episode `index` of `cfg` with its configured controller.
pub fn run_episode(cfg: &RunConfig, index: usize) -> Result<(EpisodeMetrics, EpisodeTrace), HarnessError> {
    let (world, grids) = episode_world(cfg, index)?;
    let mut controller = build_controller(cfg, cfg.controller, episode_seed(cfg.seed, index))?;
    let trace = run_in_world(cfg, &world, &grids, controller.as_mut())?;
    Ok((compute_metrics(&trace), trace))
}
