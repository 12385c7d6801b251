//! Poses, axis-aligned boxes and the 5-DoF look-at viewpoint.
//!
//! Camera frame convention: +x right, +y down, +z forward (optical axis).
//! A [`CameraPose`] rotation maps camera-frame vectors to world frame, so its
//! columns are the world-frame right, down and forward axes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// World up used to resolve camera roll.
pub const WORLD_UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);
/// Up axis substituted when the viewing direction is parallel to [`WORLD_UP`].
pub const FALLBACK_UP: Vec3 = Vec3::new(1.0, 0.0, 0.0);

const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("viewing direction is parallel to the up axis")]
    DegenerateLookAt,
    #[error("camera and target positions coincide")]
    ZeroBaseline,
    #[error("camera and target volumes intersect")]
    OverlappingVolumes,
    #[error("region of interest does not fit inside the target volume")]
    RoiOutsideTarget,
    #[error("degenerate box: min {min:?} max {max:?}")]
    DegenerateBox { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(GeometryError::DegenerateBox {
                min: min.into(),
                max: max.into(),
            });
        }
        Ok(Self { min, max })
    }

    pub fn from_center(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            min: center - half_extents,
            max: center + half_extents,
        }
    }

    pub fn cube(center: Vec3, edge: f64) -> Self {
        Self::from_center(center, Vec3::repeat(edge * 0.5))
    }

    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// True when the interiors overlap. Boxes that only share a face do not
    /// intersect.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    /// Slab test. Returns the parametric entry/exit interval of
    /// `origin + t * dir` clipped to `[t_min, t_max]`.
    pub fn ray_interval(&self, origin: &Vec3, inv_dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf means the ray lies in the slab plane; keep the interval.
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Euclidean projection onto a box (componentwise clamp).
pub fn project_to_box(point: &Vec3, bounds: &Aabb) -> Vec3 {
    Vec3::new(
        point.x.clamp(bounds.min.x, bounds.max.x),
        point.y.clamp(bounds.min.y, bounds.max.y),
        point.z.clamp(bounds.min.z, bounds.max.z),
    )
}

/// The optimisation parameter: camera position and the point it looks at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub camera: Vec3,
    pub target: Vec3,
}

impl Viewpoint {
    pub fn new(camera: Vec3, target: Vec3) -> Self {
        Self { camera, target }
    }

    pub fn pose(&self) -> Result<CameraPose, GeometryError> {
        look_at_or_fallback(&self.camera, &self.target)
    }

    /// Packs as `[camera, target]`, matching the gradient layout.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.camera.x,
            self.camera.y,
            self.camera.z,
            self.target.x,
            self.target.y,
            self.target.z,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            camera: Vec3::new(v[0], v[1], v[2]),
            target: Vec3::new(v[3], v[4], v[5]),
        }
    }

    /// Distance in parameter space, both positions included.
    pub fn distance(&self, other: &Viewpoint) -> f64 {
        ((self.camera - other.camera).norm_squared() + (self.target - other.target).norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    /// Columns: right, down, forward in world coordinates.
    pub rotation: Mat3,
}

impl CameraPose {
    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.column(1).into_owned()
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn up(&self) -> Vec3 {
        -self.down()
    }

    pub fn camera_to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.position + self.rotation * p_cam
    }

    pub fn world_to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_world - self.position)
    }
}

/// Builds the look-at pose. Fails when the direction is parallel to `world_up`
/// or the two positions coincide.
pub fn look_at(camera: &Vec3, target: &Vec3, world_up: &Vec3) -> Result<CameraPose, GeometryError> {
    let delta = target - camera;
    let dist = delta.norm();
    if dist <= f64::EPSILON {
        return Err(GeometryError::ZeroBaseline);
    }
    let forward = delta / dist;
    let side = forward.cross(world_up);
    let side_norm = side.norm();
    if side_norm < PARALLEL_EPS {
        return Err(GeometryError::DegenerateLookAt);
    }
    let right = side / side_norm;
    let up = right.cross(&forward);
    let rotation = Mat3::from_columns(&[right, -up, forward]);
    Ok(CameraPose {
        position: *camera,
        rotation,
    })
}

/// [`look_at`] with [`WORLD_UP`], substituting [`FALLBACK_UP`] on the
/// singular branch.
pub fn look_at_or_fallback(camera: &Vec3, target: &Vec3) -> Result<CameraPose, GeometryError> {
    match look_at(camera, target, &WORLD_UP) {
        Err(GeometryError::DegenerateLookAt) => look_at(camera, target, &FALLBACK_UP),
        other => other,
    }
}

/// Camera and target volumes plus the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub target_volume: Aabb,
    pub camera_volume: Aabb,
    pub roi_center: Vec3,
    pub roi_edge: f64,
}

pub const DEFAULT_ROI_EDGE: f64 = 0.06;

impl Workspace {
    pub fn new(target_volume: Aabb, camera_volume: Aabb, roi_center: Vec3, roi_edge: f64) -> Result<Self, GeometryError> {
        let ws = Self {
            target_volume,
            camera_volume,
            roi_center,
            roi_edge,
        };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.target_volume.intersects(&self.camera_volume) {
            return Err(GeometryError::OverlappingVolumes);
        }
        if !self.target_volume.contains_box(&self.roi()) {
            return Err(GeometryError::RoiOutsideTarget);
        }
        Ok(())
    }

    pub fn roi(&self) -> Aabb {
        Aabb::cube(self.roi_center, self.roi_edge)
    }

    /// Projects camera into the camera volume and target into the target volume.
    pub fn project(&self, vp: &Viewpoint) -> Viewpoint {
        Viewpoint {
            camera: project_to_box(&vp.camera, &self.camera_volume),
            target: project_to_box(&vp.target, &self.target_volume),
        }
    }

    pub fn is_feasible(&self, vp: &Viewpoint) -> bool {
        self.camera_volume.contains(&vp.camera) && self.target_volume.contains(&vp.target)
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
