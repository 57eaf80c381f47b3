//! Seeded batches of episodes and the results table.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::episode::{run_episode, EpisodeMetrics, Outcome};
use super::{HarnessError, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub index: usize,
    pub metrics: EpisodeMetrics,
    pub outcome: Outcome,
}

/// Batch aggregate. Metric means are taken over successful episodes, or
/// over all episodes when none succeeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSummary {
    pub episodes: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    pub cost: f64,
    pub calc_time_ms: f64,
    pub steering_rate: f64,
    pub wheel_acc: f64,
    pub traj_len_m: f64,
    pub episode_time_s: f64,
}

pub fn summarize(rows: &[EpisodeRow]) -> BatchSummary {
    let mut sorted: Vec<&EpisodeRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let successes = sorted.iter().filter(|r| r.metrics.success).count();
    let pool: Vec<&EpisodeMetrics> = sorted
        .iter()
        .filter(|r| successes == 0 || r.metrics.success)
        .map(|r| &r.metrics)
        .collect();
    let avg = |f: fn(&EpisodeMetrics) -> f64| {
        if pool.is_empty() {
            0.0
        } else {
            pool.iter().map(|m| f(m)).sum::<f64>() / pool.len() as f64
        }
    };
    BatchSummary {
        episodes: rows.len(),
        successes,
        success_rate: if rows.is_empty() {
            0.0
        } else {
            100.0 * successes as f64 / rows.len() as f64
        },
        cost: avg(|m| m.cost),
        calc_time_ms: avg(|m| m.calc_time_ms),
        steering_rate: avg(|m| m.steering_rate),
        wheel_acc: avg(|m| m.wheel_acc),
        traj_len_m: avg(|m| m.traj_len_m),
        episode_time_s: avg(|m| m.episode_time_s),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub rows: Vec<EpisodeRow>,
    pub summary: BatchSummary,
}

impl BatchResult {
    /// One row per episode followed by a `summary` row whose success column
    /// holds the success percentage.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "episode",
            "success",
            "cost",
            "calc_time_ms",
            "steering_rate",
            "wheel_acc",
            "traj_len_m",
            "episode_time_s",
            "failure_kind",
        ])?;
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.index.to_string(),
                u8::from(m.success).to_string(),
                m.cost.to_string(),
                m.calc_time_ms.to_string(),
                m.steering_rate.to_string(),
                m.wheel_acc.to_string(),
                m.traj_len_m.to_string(),
                m.episode_time_s.to_string(),
                r.outcome.failure_kind().to_string(),
            ])?;
        }
        let s = &self.summary;
        w.write_record([
            "summary".to_string(),
            s.success_rate.to_string(),
            s.cost.to_string(),
            s.calc_time_ms.to_string(),
            s.steering_rate.to_string(),
            s.wheel_acc.to_string(),
            s.traj_len_m.to_string(),
            s.episode_time_s.to_string(),
            String::new(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg.episodes` episodes; traces go to `trace_dir` when given.
pub fn run_batch(cfg: &RunConfig, trace_dir: Option<&Path>) -> Result<BatchResult, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let one = |index: usize| -> Result<EpisodeRow, HarnessError> {
        let (metrics, trace) = run_episode(cfg, index)?;
        if let Some(dir) = trace_dir {
            let name = format!("{}_episode_{index:04}.csv", cfg.controller.name());
            trace.write_csv(std::fs::File::create(dir.join(name))?)?;
        }
        Ok(EpisodeRow {
            index,
            metrics,
            outcome: trace.outcome,
        })
    };
    let rows: Result<Vec<EpisodeRow>, HarnessError> = match cfg.episode_workers {
        1 => (0..cfg.episodes).map(one).collect(),
        0 => (0..cfg.episodes).into_par_iter().map(one).collect(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(|| (0..cfg.episodes).into_par_iter().map(one).collect()),
    };
    let rows = rows?;
    let summary = summarize(&rows);
    Ok(BatchResult { rows, summary })
}
