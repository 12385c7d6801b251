//! Experiment runners and their table-shaped aggregation.

use anyhow::{ensure, Result};
use nbv_core::planners::episode::{run_episode, EpisodeLog, ViewRecord};
use nbv_core::planners::PlannerKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::scenarios::{node_scenarios, occlusion_scenarios, Scenario};

/// View indices reported for the occlusion experiment.
pub const OCCLUSION_VIEWS: [usize; 5] = [0, 5, 10, 15, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub experiment: String,
    pub scenario: String,
    pub scenario_index: usize,
    pub planner: PlannerKind,
    pub seed: u64,
    pub config_hash: String,
    pub log: EpisodeLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs every (scenario, planner) pair. Episodes run concurrently; results
/// come back in scenario order, then planner order.
pub fn run_scenarios(cfg: &ExperimentConfig, experiment: &str, scenarios: &[Scenario]) -> Result<ExperimentResults> {
    let hash = cfg.hash();
    let jobs: Vec<(&Scenario, PlannerKind)> = scenarios
        .iter()
        .flat_map(|s| cfg.planners.iter().map(move |&p| (s, p)))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(scenario, planner)| {
            let setup = scenario.setup(cfg, planner)?;
            let log = run_episode(&setup).log;
            Ok(EpisodeResult {
                experiment: experiment.to_string(),
                scenario: scenario.id.clone(),
                scenario_index: scenario.index,
                planner,
                seed: setup.seed,
                config_hash: hash.clone(),
                log,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResults {
        experiment: experiment.to_string(),
        config_hash: hash,
        config: cfg.clone(),
        episodes,
    })
}

pub fn run_occlusion_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_scenarios(cfg, "occlusion", &occlusion_scenarios(cfg)?)
}

pub fn run_node_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_scenarios(cfg, "nodes", &node_scenarios(cfg)?)
}

/// Mean over the current tracks of their position std.
pub fn mean_track_std(view: &ViewRecord) -> Option<f64> {
    mean(view.tracks.iter().map(|t| t.std))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// One planner at one view index, averaged over the episodes that reached it.
/// Optional metrics average over the episodes where they are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub planner: PlannerKind,
    pub view: usize,
    pub episodes: usize,
    pub coverage: f64,
    pub ray_calls: f64,
    pub distance: f64,
    pub f1: Option<f64>,
    pub occluded_recall: Option<f64>,
    pub position_std: Option<f64>,
}

pub fn summarize(results: &ExperimentResults, views: &[usize]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for planner in results.config.planners.iter().copied() {
        for &view in views {
            let records: Vec<&ViewRecord> = results
                .episodes
                .iter()
                .filter(|e| e.planner == planner)
                .filter_map(|e| e.log.views.get(view))
                .collect();
            if records.is_empty() {
                continue;
            }
            let n = records.len() as f64;
            rows.push(SummaryRow {
                planner,
                view,
                episodes: records.len(),
                coverage: records.iter().map(|r| r.coverage).sum::<f64>() / n,
                ray_calls: records.iter().map(|r| r.ray_calls as f64).sum::<f64>() / n,
                distance: records.iter().map(|r| r.distance).sum::<f64>() / n,
                f1: mean(records.iter().filter_map(|r| r.f1.map(|f| f.f1))),
                occluded_recall: pooled_recall(results, planner, view),
                position_std: mean(records.iter().filter_map(|r| mean_track_std(r))),
            });
        }
    }
    rows
}

/// Initially undetected nodes found by `view`, over initially undetected
/// nodes, pooled across the planner's episodes.
fn pooled_recall(results: &ExperimentResults, planner: PlannerKind, view: usize) -> Option<f64> {
    let (found, total) = results
        .episodes
        .iter()
        .filter(|e| e.planner == planner)
        .filter_map(|e| {
            let n = e.log.initially_undetected.len() as f64;
            e.log.views.get(view)?.occluded_recall.map(|r| (r * n, n))
        })
        .fold((0.0, 0.0), |(f, t), (a, b)| (f + a, t + b));
    (total > 0.0).then(|| found / total)
}

pub fn summary_row(rows: &[SummaryRow], planner: PlannerKind, view: usize) -> Option<&SummaryRow> {
    rows.iter().find(|r| r.planner == planner && r.view == view)
}

/// Episodes that stopped on an error, as `(scenario, planner, message)`.
pub fn failures(results: &ExperimentResults) -> Vec<(String, PlannerKind, String)> {
    results
        .episodes
        .iter()
        .filter_map(|e| e.log.error.as_ref().map(|m| (e.scenario.clone(), e.planner, m.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub alpha: f64,
    pub mean_coverage: f64,
    /// Share of planning steps that needed the stall perturbation.
    pub stall_rate: f64,
    /// Mean camera travel of the first step, m.
    pub first_step: f64,
}

impl AlphaTrial {
    pub fn stalls(&self) -> bool {
        self.stall_rate > 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuning {
    pub alpha: f64,
    pub trials: Vec<AlphaTrial>,
}

/// Grid search over step sizes on the occlusion scenarios with the gradient
/// planner, maximising mean coverage after `tune.viewpoints` views. Ties
/// (within 1e-9 percentage points) go to the smallest non-stalling step; if
/// every step stalls, the smallest step is returned.
pub fn tune_alpha(cfg: &ExperimentConfig) -> Result<AlphaTuning> {
    ensure!(!cfg.tune.alphas.is_empty(), "no step sizes to search");
    let mut base = cfg.clone();
    base.planners = vec![PlannerKind::Gradient];
    base.occlusion.viewpoints = cfg.tune.viewpoints;
    let scenarios = occlusion_scenarios(&base)?;
    let mut trials = Vec::new();
    for &alpha in &cfg.tune.alphas {
        let mut run = base.clone();
        run.planner.step_size = alpha;
        let res = run_scenarios(&run, "tune-alpha", &scenarios)?;
        let logs: Vec<&EpisodeLog> = res.episodes.iter().map(|e| &e.log).collect();
        let finals: Vec<f64> = logs.iter().filter_map(|l| l.final_view()).map(|v| v.coverage).collect();
        let steps: Vec<_> = logs.iter().flat_map(|l| l.views.iter().filter_map(|v| v.step.as_ref())).collect();
        let firsts: Vec<f64> = logs.iter().filter_map(|l| l.views.get(1)).map(|v| v.distance).collect();
        trials.push(AlphaTrial {
            alpha,
            mean_coverage: mean(finals.into_iter()).unwrap_or(0.0),
            stall_rate: if steps.is_empty() { 0.0 } else { steps.iter().filter(|s| s.perturbed).count() as f64 / steps.len() as f64 },
            first_step: mean(firsts.into_iter()).unwrap_or(0.0),
        });
    }
    Ok(AlphaTuning {
        alpha: pick_alpha(&trials),
        trials,
    })
}

fn pick_alpha(trials: &[AlphaTrial]) -> f64 {
    let smallest = |it: &mut dyn Iterator<Item = &AlphaTrial>| it.map(|t| t.alpha).fold(f64::INFINITY, f64::min);
    let moving: Vec<&AlphaTrial> = trials.iter().filter(|t| !t.stalls()).collect();
    if moving.is_empty() {
        return smallest(&mut trials.iter());
    }
    let best = moving.iter().map(|t| t.mean_coverage).fold(f64::NEG_INFINITY, f64::max);
    smallest(&mut moving.iter().copied().filter(|t| t.mean_coverage >= best - 1e-9))
}
