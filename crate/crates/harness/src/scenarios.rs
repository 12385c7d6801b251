//! Scenario construction for the two experiments. Every random choice is
//! drawn from a stream derived from the master seed and the scenario's
//! position in the sweep, never from the planner, so all planners see the
//! same worlds and start poses.

use anyhow::{ensure, Context, Result};
use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use nbv_core::geometry::{Aabb, Vec3, Viewpoint, Workspace};
use nbv_core::planners::episode::{EpisodeSetup, F1Target};
use nbv_core::planners::{PlannerConfig, PlannerKind};
use nbv_core::scene::{generate_plant, generate_target, NodeTruth, OccluderSide, Scene, SceneSpec};
use nbv_core::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CameraVolumeConfig, ExperimentConfig};

pub const ROI_EDGE: f64 = 0.06;

const EXPERIMENT_OCCLUSION: u64 = 1;
const EXPERIMENT_NODES: u64 = 2;
const PLANT_STREAM: u64 = 0x504c;

/// A world plus everything needed to start an episode in it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub index: usize,
    pub seed: u64,
    pub scene: Scene,
    pub workspace: Workspace,
    pub initial: Viewpoint,
    pub nodes: Vec<NodeTruth>,
    pub roi_node: i32,
    pub f1_target: Option<F1Target>,
    pub max_viewpoints: usize,
    pub step_size: Option<f64>,
}

impl Scenario {
    /// Episode setup for `planner`; the episode seed depends on the scenario
    /// seed and the planner id only.
    pub fn setup<'a>(&'a self, cfg: &ExperimentConfig, planner: PlannerKind) -> Result<EpisodeSetup<'a>> {
        let intrinsics = cfg.camera.intrinsics()?;
        Ok(EpisodeSetup {
            scene: &self.scene,
            workspace: self.workspace,
            grid_bounds: self.workspace.target_volume,
            grid_resolution: cfg.grid.resolution,
            sensor: cfg.grid.sensor,
            intrinsics,
            depth_noise: cfg.camera.depth_noise,
            detector: cfg.detector,
            tracker: cfg.tracker,
            ray_spec: cfg.rays.spec(&intrinsics),
            planner,
            planner_config: PlannerConfig {
                max_viewpoints: self.max_viewpoints,
                step_size: self.step_size.unwrap_or(cfg.planner.step_size),
                ..cfg.planner
            },
            initial: self.initial,
            f1_target: self.f1_target.clone(),
            nodes: self.nodes.clone(),
            roi_node: Some(self.roi_node),
            recall_radius: cfg.nodes.recall_radius,
            seed: seeds::derive(self.seed, planner.id()),
        })
    }
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..half)
    } else {
        0.0
    }
}

/// Strictly inside `(-half, half)`, so a jittered ROI always keeps its node.
fn open_symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    loop {
        let v = symmetric(rng, half);
        if v.abs() < half || half <= 0.0 {
            return v;
        }
    }
}

fn camera_volume(roi_center: &Vec3, cv: &CameraVolumeConfig) -> Result<Aabb> {
    Ok(Aabb::new(
        roi_center + Vec3::new(cv.x_min, -cv.half_y, -cv.half_z),
        roi_center + Vec3::new(cv.x_max, cv.half_y, cv.half_z),
    )?)
}

/// Frontal start: the camera sits `distance` in front (-x) of the ROI centre,
/// jittered per axis, and looks at the ROI centre.
fn initial_view(rng: &mut ChaCha8Rng, roi_center: &Vec3, distance: f64, jitter: f64) -> Viewpoint {
    let offset = Vec3::new(
        -distance + symmetric(rng, jitter),
        symmetric(rng, jitter),
        symmetric(rng, jitter),
    );
    Viewpoint::new(roi_center + offset, *roi_center)
}

/// Sides × initial seeds, sides outermost.
pub fn occlusion_scenarios(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    let oc = &cfg.occlusion;
    let mut out = Vec::new();
    for (s, side) in oc.sides.iter().enumerate() {
        for k in 0..oc.initial_seeds {
            let seed = seeds::derive_path(cfg.seed, &[EXPERIMENT_OCCLUSION, side_code(*side), k as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = Vec3::new(0.0, symmetric(&mut rng, oc.target_jitter), symmetric(&mut rng, oc.target_jitter));
            let spec = SceneSpec::new(seed)
                .with_mesh(generate_target(oc.target_radius), Isometry3::translation(base.x, base.y, base.z))
                .with_occluder(*side, base, &oc.occluder);
            let scene = Scene::build(&spec);
            let nodes = scene.node_truths();
            let node = *nodes.first().context("target mesh has no node")?;
            let roi_center = node.position;
            let workspace = Workspace::new(
                Aabb::cube(roi_center, oc.target_volume_edge),
                camera_volume(&roi_center, &oc.camera_volume)?,
                roi_center,
                ROI_EDGE,
            )?;
            let initial = workspace.project(&initial_view(&mut rng, &roi_center, oc.initial_distance, oc.initial_jitter));
            out.push(Scenario {
                id: format!("{side}-{k}"),
                index: s * oc.initial_seeds + k,
                seed,
                scene,
                workspace,
                initial,
                nodes,
                roi_node: node.instance,
                f1_target: None,
                max_viewpoints: oc.viewpoints,
                step_size: None,
            });
        }
    }
    Ok(out)
}

fn side_code(side: OccluderSide) -> u64 {
    match side {
        OccluderSide::Left => 0,
        OccluderSide::Right => 1,
        OccluderSide::Top => 2,
        OccluderSide::Bottom => 3,
    }
}

/// Plants × target nodes × z-rotations, plants outermost.
pub fn node_scenarios(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    let nc = &cfg.nodes;
    ensure!(nc.rotations > 0, "rotations must be positive");
    if let Some(a) = nc.step_size {
        ensure!(a > 0.0 && a.is_finite(), "node step size must be positive, got {a}");
    }
    let mut out = Vec::new();
    for p in 0..nc.plants {
        let mesh = generate_plant(seeds::derive_path(cfg.seed, &[EXPERIMENT_NODES, PLANT_STREAM, p as u64]), &nc.plant)?;
        let instances = mesh.node_instances();
        for (n, &instance) in instances.iter().enumerate() {
            for r in 0..nc.rotations {
                let seed = seeds::derive_path(cfg.seed, &[EXPERIMENT_NODES, p as u64, n as u64, r as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let angle = std::f64::consts::TAU * r as f64 / nc.rotations as f64;
                let base = Vec3::new(0.0, symmetric(&mut rng, nc.plant_jitter), symmetric(&mut rng, nc.plant_jitter));
                let transform = Isometry3::from_parts(
                    Translation3::from(base),
                    UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle),
                );
                let scene = Scene::build(&SceneSpec::new(seed).with_mesh(mesh.clone(), transform));
                let nodes = scene.node_truths();
                let node = *nodes
                    .iter()
                    .find(|t| t.instance == instance)
                    .context("node instance missing from scene")?;
                let roi_center = node.position
                    + Vec3::new(
                        open_symmetric(&mut rng, nc.roi_jitter),
                        open_symmetric(&mut rng, nc.roi_jitter),
                        open_symmetric(&mut rng, nc.roi_jitter),
                    );
                let roi = Aabb::cube(roi_center, ROI_EDGE);
                ensure!(roi.contains(&node.position), "ROI misses its node in scenario p{p}-n{n}-r{r}");
                // Detection metrics cover the nodes inside the target ROI.
                let nodes: Vec<NodeTruth> = nodes.into_iter().filter(|t| roi.contains(&t.position)).collect();
                let workspace = Workspace::new(Aabb::cube(roi_center, nc.target_volume_edge), camera_volume(&roi_center, &nc.camera_volume)?, roi_center, ROI_EDGE)
                    .with_context(|| format!("workspace for scenario p{p}-n{n}-r{r}"))?;
                let truth_region = Aabb::cube(node.position, ROI_EDGE);
                let points = scene
                    .ground_truth_points(&truth_region, nc.truth_spacing)?
                    .into_iter()
                    .map(|p| p.position)
                    .collect();
                let initial = workspace.project(&initial_view(&mut rng, &roi_center, nc.initial_distance, nc.initial_jitter));
                out.push(Scenario {
                    id: format!("p{p}-n{n}-r{r}"),
                    index: out.len(),
                    seed,
                    scene,
                    workspace,
                    initial,
                    nodes,
                    roi_node: instance,
                    f1_target: Some(F1Target {
                        region: truth_region,
                        points,
                        tolerance: nc.f1_tolerance,
                    }),
                    max_viewpoints: nc.viewpoints,
                    step_size: nc.step_size,
                });
            }
        }
    }
    Ok(out)
}
