//! Experiment configuration. One JSON document with a section per module;
//! missing fields fall back to the desk-scale defaults.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use nbv_core::camera::{DepthNoise, Intrinsics};
use nbv_core::detector::DetectorNoise;
use nbv_core::planners::{PlannerConfig, PlannerKind};
use nbv_core::scene::{OccluderShape, OccluderSide, PlantParams};
use nbv_core::semantic_grid::SensorModel;
use nbv_core::tracker::TrackerConfig;
use nbv_core::utility::RaySpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub depth_noise: Option<DepthNoise>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 180,
            hfov_deg: 70.0,
            min_depth: 0.1,
            max_depth: 1.5,
            depth_noise: Some(DepthNoise::default()),
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Ok(Intrinsics::from_hfov(self.width, self.height, self.hfov_deg, self.min_depth, self.max_depth)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayConfig {
    pub rays_x: usize,
    pub rays_y: usize,
    pub samples_per_ray: usize,
    pub t_near: f64,
    pub t_far: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            rays_x: 32,
            rays_y: 18,
            samples_per_ray: 128,
            t_near: 0.10,
            t_far: 0.75,
        }
    }
}

impl RayConfig {
    /// Ray grid spanning the camera's field of view.
    pub fn spec(&self, camera: &Intrinsics) -> RaySpec {
        RaySpec {
            t_near: self.t_near,
            t_far: self.t_far,
            samples_per_ray: self.samples_per_ray,
            ..RaySpec::for_intrinsics(camera, self.rays_x, self.rays_y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub resolution: f64,
    pub sensor: SensorModel,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 0.01,
            sensor: SensorModel::default(),
        }
    }
}

/// Camera workspace relative to the ROI centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraVolumeConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub half_y: f64,
    pub half_z: f64,
}

impl Default for CameraVolumeConfig {
    fn default() -> Self {
        Self {
            x_min: -0.6,
            x_max: -0.2,
            half_y: 0.3,
            half_z: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub sides: Vec<OccluderSide>,
    pub initial_seeds: usize,
    pub viewpoints: usize,
    pub target_radius: f64,
    pub occluder: OccluderShape,
    /// Half range of the uniform target placement jitter in y and z, m.
    pub target_jitter: f64,
    pub target_volume_edge: f64,
    pub camera_volume: CameraVolumeConfig,
    pub initial_distance: f64,
    /// Half range of the uniform jitter on the initial camera position, m.
    pub initial_jitter: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            sides: OccluderSide::ALL.to_vec(),
            initial_seeds: 4,
            viewpoints: 20,
            target_radius: 0.015,
            occluder: OccluderShape::default(),
            target_jitter: 0.15,
            target_volume_edge: 0.2,
            camera_volume: CameraVolumeConfig::default(),
            initial_distance: 0.5,
            initial_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    pub plants: usize,
    pub rotations: usize,
    pub viewpoints: usize,
    pub plant: PlantParams,
    /// Half range of the ROI offset from the true node, exclusive, m.
    pub roi_jitter: f64,
    /// Half range of the plant placement jitter in y and z, m.
    pub plant_jitter: f64,
    /// Edge of the target volume cube centred on the ROI, m.
    pub target_volume_edge: f64,
    pub camera_volume: CameraVolumeConfig,
    pub initial_distance: f64,
    pub initial_jitter: f64,
    pub f1_tolerance: f64,
    pub truth_spacing: f64,
    pub recall_radius: f64,
    /// Gradient step size for node episodes, overriding `planner.step_size`.
    /// The ROI starts mostly observed here, so gains and gradients are
    /// several times smaller than in the occlusion scenes.
    pub step_size: Option<f64>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            plants: 4,
            rotations: 4,
            viewpoints: 5,
            plant: PlantParams::default(),
            roi_jitter: 0.03,
            plant_jitter: 0.1,
            target_volume_edge: 0.2,
            camera_volume: CameraVolumeConfig::default(),
            initial_distance: 0.5,
            initial_jitter: 0.05,
            f1_tolerance: 0.01,
            truth_spacing: 0.002,
            recall_radius: 0.02,
            step_size: Some(0.024),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub alphas: Vec<f64>,
    pub viewpoints: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2, 3.2e-2],
            viewpoints: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub seed: u64,
    pub planners: Vec<PlannerKind>,
    pub camera: CameraConfig,
    pub rays: RayConfig,
    pub grid: GridConfig,
    pub planner: PlannerConfig,
    pub detector: DetectorNoise,
    pub tracker: TrackerConfig,
    pub occlusion: OcclusionConfig,
    pub nodes: NodeConfig,
    pub tune: TuneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            scale: Scale::Desk,
            seed: 0,
            planners: PlannerKind::ALL.to_vec(),
            camera: CameraConfig::default(),
            rays: RayConfig::default(),
            grid: GridConfig::default(),
            planner: PlannerConfig::default(),
            detector: DetectorNoise::default(),
            tracker: TrackerConfig::default(),
            occlusion: OcclusionConfig::default(),
            nodes: NodeConfig::default(),
            tune: TuneConfig::default(),
        }
    }

    /// Full sensor resolution and the complete node experiment.
    pub fn full() -> Self {
        let mut cfg = Self::desk();
        cfg.scale = Scale::Full;
        cfg.camera.width = 960;
        cfg.camera.height = 540;
        cfg.nodes.plants = 8;
        cfg.nodes.rotations = 12;
        cfg
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Full => Self::full(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Content hash in the style of a git blob id, over the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", json.len()).as_bytes());
        h.update(json.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}
