use std::time::Instant;

use rayon::prelude::*;

use crate::kinematics::{control3_to_command, ControlLimits, ControlSpace, Pose2, VehicleCommand8, VehicleGeometry};
use crate::kinematics::propagate;
use crate::world::in_collision;

use super::cost::{stage_terms, terminal_cost, Scene, StageInput};
use super::noise::{fill_sample_noise, iteration_key, NoiseTensor};
use super::{ControlSequence, CostWeights, MppiConfig, MppiError};

/// Cost and trajectory of one simulated control sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub cost: f64,
    /// Pose after each step.
    pub poses: Vec<Pose2>,
    pub collisions: Vec<bool>,
    pub commands: Vec<VehicleCommand8>,
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub space: ControlSpace,
    pub solve_time_ms: f64,
    /// Stage plus terminal cost of the updated sequence, without the
    /// coupling term.
    pub optimal_cost: f64,
    pub optimal_poses: Vec<Pose2>,
    pub optimal_collisions: Vec<bool>,
    pub min_sample_cost: f64,
    pub mean_sample_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Command for the first row of the updated sequence.
    pub command: VehicleCommand8,
    /// Updated sequence before shifting.
    pub optimal: ControlSequence,
    /// Shifted warm start for the next solve.
    pub next: ControlSequence,
    pub diagnostics: StepDiagnostics,
}

/// Evaluated candidates of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Raw noise, `K x T x n`, sample-major.
    pub noise: Vec<f64>,
    /// Evaluated sequences, same layout, already clamped.
    pub candidates: Vec<f64>,
    pub costs: Vec<f64>,
}

impl SampleBatch {
    pub fn candidate(&self, k: usize) -> &[f64] {
        let len = self.candidates.len() / self.costs.len();
        &self.candidates[k * len..(k + 1) * len]
    }
}

/// Normalized exponential weights, shifted by the minimum cost.
pub fn compute_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let rho = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|s| (-(s - rho) / lambda).exp()).collect();
    let eta: f64 = w.iter().sum();
    for v in &mut w {
        *v /= eta;
    }
    w
}

/// Fills one candidate from its noise: samples below `exploit` are centered
/// on the warm start, the rest on zero. Rows are clamped to the bounds.
fn shape_candidate(noise_to_candidate: &mut [f64], mean: &[f64], exploit: bool, cfg: &MppiConfig) {
    let n = cfg.dim();
    for (i, v) in noise_to_candidate.iter_mut().enumerate() {
        let base = if exploit { mean[i] } else { 0.0 };
        let d = i % n;
        *v = (base + *v).clamp(cfg.lower[d], cfg.upper[d]);
    }
}

/// Candidate sequences for every sample.
pub fn build_candidates(u: &ControlSequence, noise: &NoiseTensor, cfg: &MppiConfig) -> Result<Vec<f64>, MppiError> {
    if noise.dim != u.dim() || noise.horizon != u.horizon() || noise.samples != cfg.samples {
        return Err(MppiError::Dimension(format!(
            "noise {}x{}x{} does not match K={} T={} n={}",
            noise.samples,
            noise.horizon,
            noise.dim,
            cfg.samples,
            u.horizon(),
            u.dim()
        )));
    }
    let exploit = cfg.exploitation_count();
    let mut out = noise.data.clone();
    let len = u.as_slice().len();
    for (k, chunk) in out.chunks_exact_mut(len).enumerate() {
        shape_candidate(chunk, u.as_slice(), k < exploit, cfg);
    }
    Ok(out)
}

/// MPPI over one sampling space.
pub struct MppiSolver {
    cfg: MppiConfig,
    weights: CostWeights,
    geometry: VehicleGeometry,
    limits: ControlLimits,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for MppiSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MppiSolver")
            .field("cfg", &self.cfg)
            .field("weights", &self.weights)
            .field("geometry", &self.geometry)
            .field("limits", &self.limits)
            .finish()
    }
}

impl MppiSolver {
    pub fn new(
        cfg: MppiConfig,
        weights: CostWeights,
        geometry: VehicleGeometry,
        limits: ControlLimits,
    ) -> Result<Self, MppiError> {
        cfg.validate()?;
        weights.validate()?;
        geometry.validate().map_err(|e| MppiError::Config(e.to_string()))?;
        let pool = if cfg.workers > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| MppiError::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg,
            weights,
            geometry,
            limits,
            pool,
        })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn geometry(&self) -> &VehicleGeometry {
        &self.geometry
    }

    pub fn limits(&self) -> &ControlLimits {
        &self.limits
    }

    pub fn space(&self) -> ControlSpace {
        self.cfg.space
    }

    /// Initial warm start: all zeros.
    pub fn initial_sequence(&self) -> ControlSequence {
        ControlSequence::zeros(self.cfg.space, self.cfg.horizon)
    }

    /// Simulates `candidate` from `x0`, calling `sink` after every step.
    fn simulate(
        &self,
        x0: &Pose2,
        candidate: &[f64],
        mean: Option<&[f64]>,
        prev_command: &VehicleCommand8,
        scene: &Scene<'_>,
        mut sink: impl FnMut(&Pose2, &VehicleCommand8, bool),
    ) -> f64 {
        let n = self.cfg.dim();
        let space = self.cfg.space;
        let mut pose = *x0;
        let mut prev = *prev_command;
        let mut cost = 0.0;
        for (t, row) in candidate.chunks_exact(n).enumerate() {
            let twist = space.to_control3(row, &self.geometry, &self.limits);
            let command = control3_to_command(twist, &self.geometry, &prev);
            pose = propagate(&pose, &twist, self.cfg.dt);
            let terms = stage_terms(
                &StageInput {
                    pose: &pose,
                    twist: &twist,
                    candidate: row,
                    mean: mean.map(|m| &m[t * n..(t + 1) * n]),
                    command: &command,
                    prev_command: &prev,
                },
                scene,
                &self.cfg,
            );
            cost += terms.weighted(&self.weights);
            sink(&pose, &command, terms.collision > 0.0);
            prev = command;
        }
        cost + terminal_cost(&pose, &scene.goal, &self.weights)
    }

    /// Total cost of a sequence. `mean`, when given, enables the coupling
    /// term against that warm start.
    pub fn rollout(
        &self,
        x0: &Pose2,
        candidate: &ControlSequence,
        mean: Option<&ControlSequence>,
        prev_command: &VehicleCommand8,
        scene: &Scene<'_>,
    ) -> Result<RolloutResult, MppiError> {
        self.check_sequence(candidate)?;
        if let Some(m) = mean {
            self.check_sequence(m)?;
        }
        let t = candidate.horizon();
        let mut poses = Vec::with_capacity(t);
        let mut collisions = Vec::with_capacity(t);
        let mut commands = Vec::with_capacity(t);
        let cost = self.simulate(
            x0,
            candidate.as_slice(),
            mean.map(|m| m.as_slice()),
            prev_command,
            scene,
            |p, c, hit| {
                poses.push(*p);
                commands.push(*c);
                collisions.push(hit);
            },
        );
        debug_assert!(poses
            .iter()
            .zip(&collisions)
            .all(|(p, hit)| (in_collision(scene.grid, p) == 1) == *hit));
        Ok(RolloutResult {
            cost,
            poses,
            collisions,
            commands,
        })
    }

    fn check_sequence(&self, u: &ControlSequence) -> Result<(), MppiError> {
        if u.space() != self.cfg.space || u.horizon() != self.cfg.horizon {
            return Err(MppiError::Dimension(format!(
                "sequence is {} x {} in {}, solver expects {} x {} in {}",
                u.horizon(),
                u.dim(),
                u.space().label(),
                self.cfg.horizon,
                self.cfg.dim(),
                self.cfg.space.label()
            )));
        }
        Ok(())
    }

    /// Samples, clamps and scores every candidate of solve `iteration`.
    pub fn evaluate_samples(
        &self,
        x0: &Pose2,
        u: &ControlSequence,
        prev_command: &VehicleCommand8,
        scene: &Scene<'_>,
        iteration: u64,
    ) -> Result<SampleBatch, MppiError> {
        self.check_sequence(u)?;
        let cfg = &self.cfg;
        let len = cfg.horizon * cfg.dim();
        let exploit = cfg.exploitation_count();
        let std_dev: Vec<f64> = cfg.sigma.iter().map(|v| v.sqrt()).collect();
        let key = iteration_key(cfg.seed, iteration);
        let mean = u.as_slice();

        let mut noise = vec![0.0; cfg.samples * len];
        let mut candidates = vec![0.0; cfg.samples * len];
        let mut costs = vec![0.0; cfg.samples];
        let work = |(k, ((eps, cand), cost)): (usize, ((&mut [f64], &mut [f64]), &mut f64))| {
            fill_sample_noise(key, k, &std_dev, eps);
            cand.copy_from_slice(eps);
            shape_candidate(cand, mean, k < exploit, cfg);
            *cost = self.simulate(x0, cand, Some(mean), prev_command, scene, |_, _, _| {});
        };
        let mut run = || {
            noise
                .par_chunks_mut(len)
                .zip(candidates.par_chunks_mut(len))
                .zip(costs.par_iter_mut())
                .enumerate()
                .for_each(work)
        };
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
        Ok(SampleBatch {
            noise,
            candidates,
            costs,
        })
    }

    /// One MPPI iteration from state `x0` with warm start `u`.
    pub fn step(
        &self,
        x0: &Pose2,
        u: &ControlSequence,
        prev_command: &VehicleCommand8,
        scene: &Scene<'_>,
        iteration: u64,
    ) -> Result<StepOutput, MppiError> {
        let started = Instant::now();
        let batch = self.evaluate_samples(x0, u, prev_command, scene, iteration)?;
        let weights = compute_weights(&batch.costs, self.cfg.lambda);

        let mean = u.as_slice();
        let len = mean.len();
        let mut delta = vec![0.0; len];
        for (k, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let eps = &batch.noise[k * len..(k + 1) * len];
            for i in 0..len {
                delta[i] += w * eps[i];
            }
        }
        let updated: Vec<f64> = mean.iter().zip(&delta).map(|(m, d)| m + d).collect();
        let mut optimal = ControlSequence::from_flat(self.cfg.space, updated)?;
        optimal.clamp_to(&self.cfg.lower, &self.cfg.upper);

        let twist = self.cfg.space.to_control3(optimal.row(0), &self.geometry, &self.limits);
        let command = control3_to_command(twist, &self.geometry, prev_command);
        let best = self.rollout(x0, &optimal, None, prev_command, scene)?;
        let next = optimal.shifted(self.cfg.tail);

        let min_sample_cost = batch.costs.iter().copied().fold(f64::INFINITY, f64::min);
        let mean_sample_cost = batch.costs.iter().sum::<f64>() / batch.costs.len() as f64;
        Ok(StepOutput {
            command,
            optimal,
            next,
            diagnostics: StepDiagnostics {
                space: self.cfg.space,
                solve_time_ms: started.elapsed().as_secs_f64() * 1e3,
                optimal_cost: best.cost,
                optimal_poses: best.poses,
                optimal_collisions: best.collisions,
                min_sample_cost,
                mean_sample_cost,
            },
        })
    }
}
