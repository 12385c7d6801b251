//! Pass/fail checks over experiment results, shared by `--check` and the
//! acceptance tests.

use std::fmt;

use anyhow::Result;
use nbv_core::geometry::{Aabb, Vec3, Viewpoint};
use nbv_core::planners::PlannerKind;
use nbv_core::scene::SemanticClass;
use nbv_core::semantic_grid::{SemanticGrid, SensorModel};
use nbv_core::utility::{check_gradient, RaySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::experiments::{summarize, summary_row, ExperimentResults, SummaryRow};

pub const MIN_COVERAGE: f64 = 80.0;
pub const MAX_COVERAGE_GAP: f64 = 10.0;
pub const MAX_DISTANCE_RATIO: f64 = 0.5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn row(rows: &[SummaryRow], planner: PlannerKind, view: usize) -> Option<&SummaryRow> {
    summary_row(rows, planner, view)
}

fn final_view(results: &ExperimentResults) -> usize {
    results
        .episodes
        .iter()
        .map(|e| e.log.views.len().saturating_sub(1))
        .max()
        .unwrap_or(0)
}

/// Exact per-episode ray-call totals: one per step for the gradient planner,
/// one per candidate for sampling, none for random.
pub fn ray_call_check(results: &ExperimentResults) -> Check {
    let cfg = &results.config;
    let mut bad = Vec::new();
    for e in &results.episodes {
        let Some(last) = e.log.final_view() else {
            bad.push(format!("{}/{} has no views", e.scenario, e.planner));
            continue;
        };
        let per_step = match e.planner {
            PlannerKind::Gradient => 1,
            PlannerKind::Sampling => cfg.planner.candidate_count,
            PlannerKind::Random => 0,
        };
        if last.ray_calls != per_step * last.view {
            bad.push(format!("{}/{} {} calls after {} steps", e.scenario, e.planner, last.ray_calls, last.view));
        }
    }
    let totals: Vec<String> = cfg
        .planners
        .iter()
        .map(|&p| {
            let calls = results.episodes.iter().find(|e| e.planner == p).and_then(|e| e.log.final_view()).map_or(0, |v| v.ray_calls);
            format!("{p}={calls}")
        })
        .collect();
    Check::new("ray-call accounting", bad.is_empty() && results.episodes.iter().all(|e| e.log.error.is_none()), if bad.is_empty() { totals.join(" ") } else { bad.join("; ") })
}

pub fn occlusion_checks(results: &ExperimentResults) -> Vec<Check> {
    let rows = summarize(results, &[final_view(results)]);
    let view = final_view(results);
    let get = |p| row(&rows, p, view);
    let (Some(g), Some(s), Some(r)) = (get(PlannerKind::Gradient), get(PlannerKind::Sampling), get(PlannerKind::Random)) else {
        return vec![Check::new("occlusion ordinals", false, "all three planners are required".into())];
    };
    let errors = results.episodes.iter().filter(|e| e.log.error.is_some()).count();
    vec![
        ray_call_check(results),
        Check::new(
            "coverage floor",
            g.coverage >= MIN_COVERAGE && s.coverage >= MIN_COVERAGE,
            format!("GradientNBV {:.2}% SamplingNBV {:.2}% (need >= {MIN_COVERAGE}%)", g.coverage, s.coverage),
        ),
        Check::new(
            "random below informed planners",
            r.coverage <= g.coverage && r.coverage <= s.coverage,
            format!("Random {:.2}%", r.coverage),
        ),
        Check::new(
            "gradient close to sampling",
            (g.coverage - s.coverage).abs() <= MAX_COVERAGE_GAP,
            format!("gap {:.2} points (need <= {MAX_COVERAGE_GAP})", (g.coverage - s.coverage).abs()),
        ),
        Check::new(
            "shorter trajectories",
            g.distance <= MAX_DISTANCE_RATIO * s.distance,
            format!("GradientNBV {:.3} m vs SamplingNBV {:.3} m (need ratio <= {MAX_DISTANCE_RATIO})", g.distance, s.distance),
        ),
        Check::new("episodes completed", errors == 0, format!("{errors} episode errors")),
    ]
}

/// True when each value is at most its predecessor.
pub fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

pub fn node_checks(results: &ExperimentResults) -> Vec<Check> {
    let last = final_view(results);
    let views: Vec<usize> = (0..=last).collect();
    let rows = summarize(results, &views);
    let mut checks = Vec::new();
    match (row(&rows, PlannerKind::Gradient, last), row(&rows, PlannerKind::Random, last)) {
        (Some(g), Some(r)) => {
            let (gf, rf) = (g.f1.unwrap_or(0.0), r.f1.unwrap_or(0.0));
            checks.push(Check::new("F1 gradient >= random", gf >= rf, format!("{gf:.2} vs {rf:.2} at view {last}")));
            let (gr, rr) = (g.occluded_recall.unwrap_or(0.0), r.occluded_recall.unwrap_or(0.0));
            checks.push(Check::new("occluded recall gradient >= random", gr >= rr, format!("{gr:.3} vs {rr:.3} at view {last}")));
        }
        _ => checks.push(Check::new("node ordinals", false, "GradientNBV and Random are required".into())),
    }
    for &planner in &results.config.planners {
        let stds: Vec<f64> = views.iter().filter_map(|&v| row(&rows, planner, v)).filter_map(|r| r.position_std).collect();
        let text: Vec<String> = stds.iter().map(|s| format!("{:.5}", s)).collect();
        checks.push(Check::new(
            &format!("{planner} position std non-increasing"),
            stds.len() == views.len() && non_increasing(&stds),
            text.join(" "),
        ));
    }
    let errors = results.episodes.iter().filter(|e| e.log.error.is_some()).count();
    checks.push(Check::new("episodes completed", errors == 0, format!("{errors} episode errors")));
    checks
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub pairs: usize,
    pub max_relative_error: f64,
    pub excluded_samples: usize,
}

/// Random grid with an unknown ROI block and random occupancy and
/// semantic probabilities everywhere.
pub fn random_grid(rng: &mut impl Rng) -> Result<SemanticGrid> {
    let bounds = Aabb::cube(Vec3::zeros(), 0.4);
    let roi_center = Vec3::new(rng.random_range(0.0..0.1), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let mut grid = SemanticGrid::new(&bounds, 0.01, &Aabb::cube(roi_center, 0.06), SensorModel::default())?;
    for i in 0..grid.len() {
        let class = if rng.random_bool(0.5) { SemanticClass::FruitNode } else { SemanticClass::Background };
        grid.set_voxel(i, rng.random_range(0.12..0.97), class, rng.random_range(0.001..0.999));
    }
    Ok(grid)
}

pub fn random_viewpoint(rng: &mut impl Rng) -> Viewpoint {
    Viewpoint::new(
        Vec3::new(rng.random_range(-0.35..-0.15), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
        Vec3::new(rng.random_range(0.0..0.1), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
    )
}

/// Analytic against central-difference gradients over `pairs` random
/// (grid, viewpoint) pairs.
pub fn gradcheck(pairs: usize, seed: u64, spec: &RaySpec) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        pairs,
        max_relative_error: 0.0,
        excluded_samples: 0,
    };
    for _ in 0..pairs {
        let grid = random_grid(&mut rng)?;
        let vp = random_viewpoint(&mut rng);
        let c = check_gradient(&grid, &vp, spec, GRADIENT_STEP)?;
        report.max_relative_error = report.max_relative_error.max(c.max_relative_error);
        report.excluded_samples += c.excluded_samples;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonicity_helper() {
        assert!(non_increasing(&[3.0, 2.0, 2.0, 1.0]));
        assert!(!non_increasing(&[3.0, 3.5]));
        assert!(non_increasing(&[]));
    }

    #[test]
    fn small_gradcheck_passes() {
        let spec = RaySpec { rays_x: 6, rays_y: 4, ..RaySpec::default() };
        let r = gradcheck(3, 1, &spec).unwrap();
        assert!(r.max_relative_error < GRADIENT_TOLERANCE, "{r:?}");
    }
}
