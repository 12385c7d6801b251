//! Simulated depth + semantic camera: pinhole ray casting against a [`Scene`].

use std::path::Path;

use image::{ImageBuffer, Luma};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraPose, Vec3};
use crate::scene::{Label, LabeledPoint, Scene, SemanticClass};

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

pub const DEFAULT_HFOV_DEG: f64 = 70.0;

impl Default for Intrinsics {
    fn default() -> Self {
        Self::from_hfov(960, 540, DEFAULT_HFOV_DEG, 0.1, 1.5).expect("default intrinsics are valid")
    }
}

impl Intrinsics {
    /// Square pixels with the principal point at the image centre.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64, min_depth: f64, max_depth: f64) -> Result<Self, CameraError> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(CameraError::InvalidIntrinsics(format!("field of view {hfov_deg} out of range")));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        let intr = Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            min_depth,
            max_depth,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("empty image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(0.0 < self.min_depth && self.min_depth < self.max_depth) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "need 0 < min_depth < max_depth, got {} / {}",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame ray through pixel coordinates `(u, v)`, scaled to unit depth.
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Ray through the centre of pixel index `idx`, unit depth.
    pub fn pixel_ray(&self, idx: usize) -> Vec3 {
        let (u, v) = (idx % self.width as usize, idx / self.width as usize);
        self.unproject(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Continuous pixel coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, p_cam: &Vec3) -> Option<(f64, f64)> {
        (p_cam.z > 0.0).then(|| (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy))
    }

    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            ..*self
        }
    }
}

/// Zero-mean Gaussian depth noise with standard deviation `a + b * depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    pub a: f64,
    pub b: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self { a: 0.002, b: 0.002 }
    }
}

impl DepthNoise {
    pub fn std_at(&self, depth: f64) -> f64 {
        self.a + self.b * depth
    }
}

/// Depth value of a pixel that saw nothing within range.
pub const NO_RETURN: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub intrinsics: Intrinsics,
    pub pose: CameraPose,
    pub step: usize,
    /// Depth along the optical axis, row-major. [`NO_RETURN`] where nothing
    /// was hit within `max_depth`; NaN where the nearest surface was closer
    /// than `min_depth` (no measurement).
    pub depth: Vec<f64>,
    /// Label of the surface seen by each pixel; `None` wherever depth is not finite.
    pub labels: Vec<Option<Label>>,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    /// World-frame direction of the pixel ray, unit length.
    pub fn ray_direction(&self, idx: usize) -> Vec3 {
        (self.pose.rotation * self.intrinsics.pixel_ray(idx)).normalize()
    }

    pub fn world_point(&self, idx: usize) -> Option<Vec3> {
        let z = self.depth[idx];
        z.is_finite()
            .then(|| self.pose.camera_to_world(&(self.intrinsics.pixel_ray(idx) * z)))
    }

    pub fn count_class(&self, class: SemanticClass) -> usize {
        self.labels.iter().flatten().filter(|l| l.class == class).count()
    }

    /// 16-bit depth in millimetres (0 = no measurement).
    pub fn write_depth_png(&self, path: &Path) -> Result<(), CameraError> {
        let img = ImageBuffer::<Luma<u16>, _>::from_fn(self.intrinsics.width, self.intrinsics.height, |u, v| {
            let z = self.depth[v as usize * self.width() + u as usize];
            Luma([if z.is_finite() {
                (z * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }])
        });
        img.save(path)?;
        Ok(())
    }

    /// 8-bit class image: 0 none, 85 background, 170 fruit node, 255 leaf node.
    pub fn write_label_png(&self, path: &Path) -> Result<(), CameraError> {
        let img = ImageBuffer::<Luma<u8>, _>::from_fn(self.intrinsics.width, self.intrinsics.height, |u, v| {
            let label = self.labels[v as usize * self.width() + u as usize];
            Luma([match label.map(|l| l.class) {
                None => 0,
                Some(SemanticClass::Background) => 85,
                Some(SemanticClass::FruitNode) => 170,
                Some(SemanticClass::LeafNode) => 255,
            }])
        });
        img.save(path)?;
        Ok(())
    }
}

/// Renders depth and labels by casting one ray per pixel centre. Noise, when
/// given, is drawn from `rng` in pixel order so captures are reproducible.
pub fn capture<R: Rng + ?Sized>(
    scene: &Scene,
    pose: &CameraPose,
    intrinsics: &Intrinsics,
    noise: Option<&DepthNoise>,
    rng: &mut R,
    step: usize,
) -> Frame {
    let width = intrinsics.width as usize;
    let n = intrinsics.pixel_count();
    let mut depth = vec![NO_RETURN; n];
    let mut labels = vec![None; n];
    depth
        .par_chunks_mut(width)
        .zip(labels.par_chunks_mut(width))
        .enumerate()
        .for_each(|(row, (depth_row, label_row))| {
            for col in 0..width {
                // Unit-depth direction: the hit parameter is the optical-axis depth.
                let dir = pose.rotation * intrinsics.pixel_ray(row * width + col);
                if let Some(hit) = scene.intersect(&pose.position, &dir, 0.0, intrinsics.max_depth) {
                    if hit.t < intrinsics.min_depth {
                        depth_row[col] = f64::NAN;
                    } else {
                        depth_row[col] = hit.t;
                        label_row[col] = Some(hit.label);
                    }
                }
            }
        });
    if let Some(noise) = noise {
        for z in depth.iter_mut().filter(|z| z.is_finite()) {
            let std = noise.std_at(*z);
            if std > 0.0 {
                let sample = Normal::new(0.0, std).expect("finite std").sample(rng);
                *z = (*z + sample).clamp(intrinsics.min_depth, intrinsics.max_depth);
            }
        }
    }
    Frame {
        intrinsics: *intrinsics,
        pose: *pose,
        step,
        depth,
        labels,
    }
}

/// One world-space point per finite-depth pixel, carrying its label.
pub fn frame_to_pointcloud(frame: &Frame) -> Vec<LabeledPoint> {
    (0..frame.depth.len())
        .filter_map(|idx| {
            let position = frame.world_point(idx)?;
            Some(LabeledPoint {
                position,
                label: frame.labels[idx]?,
            })
        })
        .collect()
}
