use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{plan_step, PlanStep, PlannerConfig, PlannerError, PlannerKind};
use crate::camera::{capture, DepthNoise, Intrinsics};
use crate::detector::{detect, detections_to_semantic_image, DetectorNoise};
use crate::geometry::{Aabb, Vec3, Viewpoint, Workspace};
use crate::metrics::{occluded_node_recall, reconstruction_f1, roi_coverage, CoverageLog, F1Score};
use crate::scene::{NodeTruth, Scene};
use crate::seeds;
use crate::semantic_grid::{SemanticGrid, SensorModel};
use crate::tracker::{Measurement, TrackState, TrackerConfig};
use crate::utility::RaySpec;

/// Ground truth used to score the reconstruction inside `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Target {
    pub region: Aabb,
    pub points: Vec<Vec3>,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeSetup<'a> {
    pub scene: &'a Scene,
    pub workspace: Workspace,
    pub grid_bounds: Aabb,
    pub grid_resolution: f64,
    pub sensor: SensorModel,
    pub intrinsics: Intrinsics,
    pub depth_noise: Option<DepthNoise>,
    pub detector: DetectorNoise,
    pub tracker: TrackerConfig,
    pub ray_spec: RaySpec,
    pub planner: PlannerKind,
    pub planner_config: PlannerConfig,
    pub initial: Viewpoint,
    pub f1_target: Option<F1Target>,
    /// Nodes considered by the occluded-node recall.
    pub nodes: Vec<NodeTruth>,
    /// Node the ROI was placed on, if any.
    pub roi_node: Option<i32>,
    pub recall_radius: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub id: usize,
    pub mean: Vec3,
    pub std: f64,
    pub label: crate::scene::SemanticClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view: usize,
    pub viewpoint: Viewpoint,
    pub coverage: f64,
    /// Cumulative over the planning steps that led here.
    pub ray_calls: usize,
    pub distance: f64,
    /// Step that produced this view; `None` for view 0.
    pub step: Option<PlanStep>,
    pub detections: usize,
    pub tracks: Vec<TrackSummary>,
    /// Std of the track matched to the ROI node, when one is within the recall radius.
    pub roi_node_std: Option<f64>,
    pub f1: Option<F1Score>,
    pub occluded_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub planner: PlannerKind,
    pub seed: u64,
    pub views: Vec<ViewRecord>,
    pub initially_undetected: Vec<i32>,
    pub error: Option<String>,
}

impl EpisodeLog {
    pub fn final_view(&self) -> Option<&ViewRecord> {
        self.views.last()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub log: EpisodeLog,
    pub grid: Option<SemanticGrid>,
}

/// Stream labels under the episode seed.
const STREAM_SENSOR: u64 = 1;
const STREAM_DETECTOR: u64 = 2;
const STREAM_PLANNER: u64 = 3;
const STREAM_STALL: u64 = 4;

/// Capture, detect, fuse, track, then plan the next viewpoint, for view 0
/// through `max_viewpoints`. Errors stop the loop and are recorded in the
/// log along with every view completed so far.
pub fn run_episode(setup: &EpisodeSetup) -> EpisodeOutcome {
    let mut log = EpisodeLog {
        planner: setup.planner,
        seed: setup.seed,
        views: Vec::new(),
        initially_undetected: Vec::new(),
        error: None,
    };
    let grid = match SemanticGrid::new(&setup.grid_bounds, setup.grid_resolution, &setup.workspace.roi(), setup.sensor) {
        Ok(g) => g,
        Err(e) => {
            log.error = Some(e.to_string());
            return EpisodeOutcome { log, grid: None };
        }
    };
    let mut state = EpisodeState {
        grid,
        coverage: CoverageLog::default(),
        tracks: TrackState::new(setup.tracker),
        sensor_rng: ChaCha8Rng::seed_from_u64(seeds::derive(setup.seed, STREAM_SENSOR)),
        detector_rng: ChaCha8Rng::seed_from_u64(seeds::derive(setup.seed, STREAM_DETECTOR)),
        planner_rng: ChaCha8Rng::seed_from_u64(seeds::derive(setup.seed, STREAM_PLANNER)),
    };
    if let Err(e) = episode_loop(setup, &mut state, &mut log) {
        log.error = Some(e);
    }
    EpisodeOutcome { log, grid: Some(state.grid) }
}

struct EpisodeState {
    grid: SemanticGrid,
    coverage: CoverageLog,
    tracks: TrackState,
    sensor_rng: ChaCha8Rng,
    detector_rng: ChaCha8Rng,
    planner_rng: ChaCha8Rng,
}

fn episode_loop(setup: &EpisodeSetup, st: &mut EpisodeState, log: &mut EpisodeLog) -> Result<(), String> {
    setup.planner_config.validate().map_err(|e| e.to_string())?;
    let cfg = PlannerConfig {
        seed: seeds::derive(setup.seed, STREAM_STALL),
        ..setup.planner_config
    };
    let mut vp = setup.workspace.project(&setup.initial);
    let mut step: Option<PlanStep> = None;
    let mut ray_calls = 0;
    let mut distance = 0.0;
    for view in 0..=cfg.max_viewpoints {
        let pose = vp.pose().map_err(|e| e.to_string())?;
        let frame = capture(setup.scene, &pose, &setup.intrinsics, setup.depth_noise.as_ref(), &mut st.sensor_rng, view);
        let detections = detect(&frame, &setup.detector, &mut st.detector_rng);
        let semantics = detections_to_semantic_image(&detections, &frame);
        let summary = st.grid.integrate_frame(&frame, &semantics).map_err(|e| e.to_string())?;
        st.coverage.record(&summary);
        let measurements: Vec<Measurement> = detections.iter().map(Measurement::from).collect();
        st.tracks.process(&measurements).map_err(|e| e.to_string())?;

        if view == 0 {
            log.initially_undetected = setup
                .nodes
                .iter()
                .filter(|n| {
                    !detections
                        .iter()
                        .any(|d| d.class == n.class && (d.position - n.position).norm() <= setup.recall_radius)
                })
                .map(|n| n.instance)
                .collect();
        }

        let coverage = roi_coverage(&st.grid, &st.coverage).map_err(|e| e.to_string())?;
        let f1 = match &setup.f1_target {
            Some(t) => {
                let recon: Vec<Vec3> = st.grid.export_pointcloud(&t.region).into_iter().map(|p| p.position).collect();
                Some(reconstruction_f1(&recon, &t.points, t.tolerance).map_err(|e| e.to_string())?)
            }
            None => None,
        };
        let roi_node_std = setup.roi_node.and_then(|id| {
            let truth = setup.nodes.iter().find(|n| n.instance == id)?;
            st.tracks
                .tracks
                .iter()
                .filter(|t| (t.mean - truth.position).norm() <= setup.recall_radius)
                .min_by(|a, b| (a.mean - truth.position).norm().total_cmp(&(b.mean - truth.position).norm()))
                .map(|t| t.position_std())
        });
        log.views.push(ViewRecord {
            view,
            viewpoint: vp,
            coverage,
            ray_calls,
            distance,
            step: step.take(),
            detections: detections.len(),
            tracks: st
                .tracks
                .tracks
                .iter()
                .map(|t| TrackSummary {
                    id: t.id,
                    mean: t.mean,
                    std: t.position_std(),
                    label: t.label,
                })
                .collect(),
            roi_node_std,
            f1,
            occluded_recall: occluded_node_recall(&st.tracks.tracks, &setup.nodes, &log.initially_undetected, setup.recall_radius),
        });

        if view < cfg.max_viewpoints {
            let next = plan_step(setup.planner, &st.grid, &setup.workspace, &vp, &cfg, &setup.ray_spec, &mut st.planner_rng, view)
                .map_err(|e: PlannerError| e.to_string())?;
            ray_calls += next.ray_calls;
            distance += (next.viewpoint.camera - vp.camera).norm();
            vp = next.viewpoint;
            step = Some(next);
        }
    }
    Ok(())
}
