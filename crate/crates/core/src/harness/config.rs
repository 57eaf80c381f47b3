//! Run configuration and its flat `key = value` file format.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::hybrid::{HybridConfig, ThreeDofVariant};
use crate::kinematics::{ControlLimits, ControlSpace, VehicleGeometry};
use crate::mppi::{CostWeights, MppiConfig, TailInit};
use crate::planner::DEFAULT_SPACING;
use crate::world::{Scenario, ScenarioKind};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Mppi3a,
    Mppi3b,
    Mppi4,
    Hybrid,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Mppi3a, Self::Mppi3b, Self::Mppi4, Self::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mppi3a => "mppi3a",
            Self::Mppi3b => "mppi3b",
            Self::Mppi4 => "mppi4",
            Self::Hybrid => "hybrid",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown controller {s:?}")))
    }
}

/// Solver parameters shared by every sampling space.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub samples: usize,
    pub horizon: usize,
    pub dt: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub v_des: f64,
    pub tail: TailInit,
    pub workers: usize,
    pub sigma_3a: Vec<f64>,
    pub sigma_3b: Vec<f64>,
    pub sigma_4: Vec<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        let a = MppiConfig::mppi3a();
        Self {
            samples: a.samples,
            horizon: a.horizon,
            dt: a.dt,
            alpha: a.alpha,
            lambda: a.lambda,
            gamma: a.gamma,
            v_des: a.v_des,
            tail: a.tail,
            workers: a.workers,
            sigma_3a: a.sigma,
            sigma_3b: MppiConfig::mppi3b().sigma,
            sigma_4: MppiConfig::mppi4().sigma,
        }
    }
}

/// Everything needed to run a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Scenario template; each episode overrides its seed.
    pub scenario: Scenario,
    pub controller: ControllerKind,
    pub episodes: usize,
    /// Master seed; episode `i` uses `seed ^ i`.
    pub seed: u64,
    /// Per-goal time budget [s].
    pub goal_timeout: f64,
    /// Control interval [s].
    pub control_dt: f64,
    pub goal_tolerance: f64,
    pub goal_heading_tolerance: f64,
    /// When false, solve times are recorded as zero so output depends only
    /// on the configuration.
    pub record_timing: bool,
    pub path_spacing: f64,
    /// Extra inflation of the planning grid beyond the collision clearance
    /// [m]; keeps reference paths out of gaps the vehicle barely fits.
    pub plan_margin: f64,
    /// Arc length ahead of the vehicle at which the terminal cost is
    /// anchored [m]; infinite anchors it at the goal itself.
    pub terminal_lookahead: f64,
    /// Episodes run concurrently; 1 runs them in order, 0 uses the global
    /// pool.
    pub episode_workers: usize,
    pub solver: SolverParams,
    pub weights: CostWeights,
    /// Switching thresholds; the variant field is ignored in favour of
    /// [`RunConfig::hybrid_variant`].
    pub hybrid: HybridConfig,
    /// Twist-space variant paired with the 4DoF space. `None` follows the
    /// scenario: 3D(a) in the garden, 3D(b) in the maze.
    pub hybrid_variant: Option<ThreeDofVariant>,
    pub geometry: VehicleGeometry,
    pub limits: ControlLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::cylinder_garden(0),
            controller: ControllerKind::Hybrid,
            episodes: 30,
            seed: 0,
            goal_timeout: 60.0,
            control_dt: 0.05,
            goal_tolerance: 0.2,
            goal_heading_tolerance: 0.2,
            record_timing: true,
            path_spacing: DEFAULT_SPACING,
            plan_margin: 0.3,
            terminal_lookahead: 2.0,
            episode_workers: 1,
            solver: SolverParams::default(),
            weights: CostWeights::default(),
            hybrid: HybridConfig::default(),
            hybrid_variant: None,
            geometry: VehicleGeometry::default(),
            limits: ControlLimits::default(),
        }
    }
}

impl RunConfig {
    /// Switching configuration with the variant resolved.
    pub fn hybrid_config(&self) -> HybridConfig {
        let variant = self.hybrid_variant.unwrap_or(match self.scenario.kind {
            ScenarioKind::CylinderGarden => ThreeDofVariant::A,
            ScenarioKind::Maze => ThreeDofVariant::B,
        });
        HybridConfig { variant, ..self.hybrid }
    }

    /// Solver configuration for one space preset with the given seed.
    pub fn mppi_config(&self, space: ControlSpace, variant: ThreeDofVariant, seed: u64) -> MppiConfig {
        let s = &self.solver;
        let (base, sigma) = match (space, variant) {
            (ControlSpace::FourDof, _) => (MppiConfig::mppi4(), &s.sigma_4),
            (ControlSpace::ThreeDof, ThreeDofVariant::A) => (MppiConfig::mppi3a(), &s.sigma_3a),
            (ControlSpace::ThreeDof, ThreeDofVariant::B) => (MppiConfig::mppi3b(), &s.sigma_3b),
        };
        MppiConfig {
            samples: s.samples,
            horizon: s.horizon,
            dt: s.dt,
            alpha: s.alpha,
            lambda: s.lambda,
            gamma: s.gamma,
            sigma: sigma.clone(),
            seed,
            v_des: s.v_des,
            tail: s.tail,
            workers: s.workers,
            ..base
        }
        .with_limits(&self.limits)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.goal_timeout > 0.0 && self.goal_timeout.is_finite()) {
            return bad("goal_timeout must be positive");
        }
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return bad("control_dt must be positive");
        }
        if !(self.goal_tolerance > 0.0 && self.goal_heading_tolerance > 0.0) {
            return bad("goal tolerances must be positive");
        }
        if !(self.path_spacing > 0.0) {
            return bad("path_spacing must be positive");
        }
        if !(self.plan_margin >= 0.0 && self.plan_margin.is_finite()) {
            return bad("plan_margin must be non-negative");
        }
        if !(self.terminal_lookahead >= 0.0) {
            return bad("terminal_lookahead must be non-negative");
        }
        self.scenario.validate()?;
        self.hybrid.validate()?;
        self.weights.validate()?;
        self.geometry.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for space in [ControlSpace::ThreeDof, ControlSpace::FourDof] {
            for v in [ThreeDofVariant::A, ThreeDofVariant::B] {
                self.mppi_config(space, v, 0).validate()?;
            }
        }
        Ok(())
    }

    /// Applies a `key = value` text on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<(), HarnessError> {
        let entries = parse_entries(text)?;
        // the scenario kind resets the scenario, so it goes first
        for key in ["scenario", "kind"] {
            if let Some((line, value)) = entries.get(key) {
                self.set(key, value).map_err(|e| at_line(*line, e))?;
            }
        }
        for (key, (line, value)) in &entries {
            if key != "scenario" && key != "kind" {
                self.set(key, value).map_err(|e| at_line(*line, e))?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path)?;
        self.apply_str(&text)
    }

    /// Parses a config text on top of the defaults.
    pub fn from_str_config(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Sets the scenario from a builtin name or a scenario file.
    pub fn set_scenario(&mut self, spec: &str) -> Result<(), HarnessError> {
        if let Some(s) = Scenario::builtin(spec, self.scenario.seed) {
            self.scenario = s;
            return Ok(());
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(HarnessError::Config(format!(
                "scenario {spec:?} is neither a builtin (cylinder_garden, maze) nor a file"
            )));
        }
        let text = std::fs::read_to_string(path)?;
        let entries = parse_entries(&text)?;
        let mut scenario = self.scenario.clone();
        if let Some((line, kind)) = entries.get("kind") {
            let kind: ScenarioKind = kind.parse().map_err(|e| at_line(*line, HarnessError::from(e)))?;
            scenario = Scenario::builtin(kind.name(), scenario.seed).expect("every kind has a builtin");
        }
        for (key, (line, value)) in &entries {
            if key == "kind" {
                continue;
            }
            if !set_scenario_field(&mut scenario, key, value).map_err(|e| at_line(*line, e))? {
                return Err(at_line(*line, HarnessError::Config(format!("unknown scenario key {key:?}"))));
            }
        }
        self.scenario = scenario;
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        if set_scenario_field(&mut self.scenario, key, value)? {
            return Ok(());
        }
        let s = &mut self.solver;
        match key {
            "scenario" | "kind" => self.set_scenario(value)?,
            "controller" => self.controller = value.parse()?,
            "episodes" => self.episodes = num(key, value)?,
            "goal_timeout" => self.goal_timeout = num(key, value)?,
            "control_dt" => self.control_dt = num(key, value)?,
            "goal_tolerance" => self.goal_tolerance = num(key, value)?,
            "goal_heading_tolerance" => self.goal_heading_tolerance = num(key, value)?,
            "record_timing" => self.record_timing = num(key, value)?,
            "path_spacing" => self.path_spacing = num(key, value)?,
            "plan_margin" => self.plan_margin = num(key, value)?,
            "terminal_lookahead" => self.terminal_lookahead = num(key, value)?,
            "episode_workers" => self.episode_workers = num(key, value)?,
            "samples" => s.samples = num(key, value)?,
            "horizon" => s.horizon = num(key, value)?,
            "dt" => s.dt = num(key, value)?,
            "alpha" => s.alpha = num(key, value)?,
            "lambda" => s.lambda = num(key, value)?,
            "gamma" => s.gamma = num(key, value)?,
            "v_des" => s.v_des = num(key, value)?,
            "workers" => s.workers = num(key, value)?,
            "tail" => {
                s.tail = match value {
                    "copy_last" => TailInit::CopyLast,
                    "zero" => TailInit::Zero,
                    _ => return Err(HarnessError::Config(format!("tail must be copy_last or zero, got {value:?}"))),
                }
            }
            "sigma_3a" => s.sigma_3a = list(key, value)?,
            "sigma_3b" => s.sigma_3b = list(key, value)?,
            "sigma_4" => s.sigma_4 = list(key, value)?,
            "w_dist" => self.weights.w_dist = num(key, value)?,
            "w_angle" => self.weights.w_angle = num(key, value)?,
            "w_speed" => self.weights.w_speed = num(key, value)?,
            "w_collision" => self.weights.w_collision = num(key, value)?,
            "w_goal" => self.weights.w_goal = num(key, value)?,
            "d_thresh" => self.hybrid.d_thresh = num(key, value)?,
            "theta_thresh" => self.hybrid.theta_thresh = num(key, value)?,
            "hysteresis" => self.hybrid.hysteresis = num(key, value)?,
            "hybrid_variant" => {
                self.hybrid_variant = match value {
                    "a" | "3a" => Some(ThreeDofVariant::A),
                    "b" | "3b" => Some(ThreeDofVariant::B),
                    _ => return Err(HarnessError::Config(format!("hybrid_variant must be a or b, got {value:?}"))),
                }
            }
            "l_f" => self.geometry.l_f = num(key, value)?,
            "l_r" => self.geometry.l_r = num(key, value)?,
            "d_l" => self.geometry.d_l = num(key, value)?,
            "d_r" => self.geometry.d_r = num(key, value)?,
            "v_max" => self.limits.v_max = num(key, value)?,
            "omega_max" => self.limits.omega_max = num(key, value)?,
            "steer_max" => self.limits.steer_max = num(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

/// Returns `Ok(false)` when `key` is not a scenario field.
fn set_scenario_field(s: &mut Scenario, key: &str, value: &str) -> Result<bool, HarnessError> {
    match key {
        "width_m" => s.width_m = num(key, value)?,
        "height_m" => s.height_m = num(key, value)?,
        "resolution" => s.resolution = num(key, value)?,
        "cylinder_radius" => s.cylinder_radius = num(key, value)?,
        "cylinder_count" => s.cylinder_count = num(key, value)?,
        "maze_corridor" => s.maze_corridor = num(key, value)?,
        "maze_wall_thickness" => s.maze_wall_thickness = num(key, value)?,
        "wall_density" => s.wall_density = num(key, value)?,
        "clearance" => s.clearance = num(key, value)?,
        "goal_margin" => s.goal_margin = num(key, value)?,
        "goal_count" => s.goal_count = num(key, value)?,
        "goal_min_separation" => s.goal_min_separation = num(key, value)?,
        "goal_max_separation" => s.goal_max_separation = num(key, value)?,
        "max_attempts" => s.max_attempts = num(key, value)?,
        "scenario_seed" => s.seed = num(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn at_line(line: usize, e: HarnessError) -> HarnessError {
    HarnessError::Config(format!("line {line}: {e}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value {value:?} for {key}")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>, HarnessError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

/// `key -> (line, value)`; duplicate keys are rejected.
fn parse_entries(text: &str) -> Result<BTreeMap<String, (usize, String)>, HarnessError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(HarnessError::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), (n + 1, value.trim().to_string())).is_some() {
            return Err(HarnessError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(out)
}
