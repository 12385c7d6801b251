//! Dense 4-channel voxel grid: occupancy, semantic class, semantic
//! probability and region-of-interest flag, with log-odds fusion of frames.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Frame;
use crate::geometry::{Aabb, Vec3};
use crate::scene::{Label, LabeledPoint, SemanticClass, NO_INSTANCE};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("semantic image has {got} pixels, frame has {expected}")]
    SemanticSizeMismatch { expected: usize, got: usize },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Inverse sensor model and clamping bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub p_hit: f64,
    pub p_miss: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Clamping bounds for the semantic probability.
    pub semantic_min: f64,
    pub semantic_max: f64,
    /// Initial semantic probability of non-ROI voxels, labelled background.
    pub background_prior: f64,
    /// When set, every voxel a ray crosses before its hit also receives a
    /// background measurement with this confidence, so seen-through space
    /// stops carrying semantic entropy. With `None` only hit voxels get
    /// semantic updates, and empty ROI space keeps its full bit forever.
    pub free_space_confidence: Option<f64>,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            p_hit: 0.7,
            p_miss: 0.4,
            p_min: 0.12,
            p_max: 0.97,
            semantic_min: SEMANTIC_EPS,
            semantic_max: 1.0 - SEMANTIC_EPS,
            background_prior: BACKGROUND_PRIOR,
            free_space_confidence: Some(FREE_SPACE_CONFIDENCE),
        }
    }
}

pub const INITIAL_OCCUPANCY: f64 = 0.5;
/// Default semantic probability of non-ROI voxels, labelled background.
///
/// Stated as confidence in the background label so that background
/// measurements confirm it. A prior near zero has the same entropy but sits
/// at the opposite end from observed background voxels, and interpolating
/// between the two lights up every observed surface with spurious entropy.
pub const BACKGROUND_PRIOR: f64 = 1.0 - SEMANTIC_EPS;
/// Semantic probabilities are clamped to `[SEMANTIC_EPS, 1 - SEMANTIC_EPS]`.
/// Small enough that settled voxels carry about 3e-5 bits, so the large
/// non-ROI volume adds next to nothing to the gain.
pub const SEMANTIC_EPS: f64 = 1e-6;
pub const FREE_SPACE_CONFIDENCE: f64 = 0.6;
pub const ROI_PRIOR: f64 = 0.5;
/// Margin around 0.5 used to call a voxel free or occupied.
pub const REGION_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelReading {
    pub p_o: f64,
    pub class: SemanticClass,
    pub p_s: f64,
    pub roi: bool,
}

/// One per-pixel semantic measurement fed to the fusion step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticMeasurement {
    pub class: SemanticClass,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSummary {
    pub rays_traced: usize,
    pub hit_updates: usize,
    pub miss_updates: usize,
    /// ROI voxels updated by at least one ray, sorted and unique.
    pub roi_viewed: Vec<usize>,
}

/// Interpolated probabilities and their spatial gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrilinearSample {
    pub p_o: f64,
    pub p_s: f64,
    pub grad_o: Vec3,
    pub grad_s: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionSets {
    pub free: Vec<usize>,
    pub occupied: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub dims: [usize; 3],
    pub resolution: f64,
    pub origin: [f64; 3],
    pub roi_voxels: usize,
    pub occupied: usize,
    pub free: usize,
    pub target: usize,
    pub mean_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    sensor: SensorModel,
    occ_logodds: Vec<f64>,
    occ_prob: Vec<f64>,
    class: Vec<SemanticClass>,
    sem_logodds: Vec<f64>,
    sem_prob: Vec<f64>,
    roi: Vec<bool>,
    roi_indices: Vec<usize>,
}

impl SemanticGrid {
    /// Covers `bounds` with cubic voxels of edge `resolution`. Voxels whose
    /// centre lies in the half-open `roi` box get the ROI flag.
    pub fn new(bounds: &Aabb, resolution: f64, roi: &Aabb, sensor: SensorModel) -> Result<Self, GridError> {
        if !(resolution > 0.0) {
            return Err(GridError::Invalid(format!("resolution must be positive, got {resolution}")));
        }
        if !(sensor.background_prior > 0.0 && sensor.background_prior < 1.0) {
            return Err(GridError::Invalid(format!("background prior must lie in (0, 1), got {}", sensor.background_prior)));
        }
        if let Some(c) = sensor.free_space_confidence {
            if !(c > 0.0 && c < 1.0) {
                return Err(GridError::Invalid(format!("free-space confidence must lie in (0, 1), got {c}")));
            }
        }
        let ext = bounds.extents();
        let dims = [0, 1, 2].map(|i| (ext[i] / resolution - 1e-9).ceil().max(1.0) as usize);
        let n = dims[0] * dims[1] * dims[2];
        let mut grid = Self {
            origin: bounds.min,
            resolution,
            dims,
            sensor,
            occ_logodds: vec![logit(INITIAL_OCCUPANCY); n],
            occ_prob: vec![INITIAL_OCCUPANCY; n],
            class: vec![SemanticClass::Background; n],
            sem_logodds: vec![logit(sensor.background_prior); n],
            sem_prob: vec![sensor.background_prior; n],
            roi: vec![false; n],
            roi_indices: Vec::new(),
        };
        for idx in 0..n {
            let c = grid.voxel_center(idx);
            if (0..3).all(|i| c[i] >= roi.min[i] && c[i] < roi.max[i]) {
                grid.roi[idx] = true;
                grid.sem_logodds[idx] = logit(ROI_PRIOR);
                grid.sem_prob[idx] = ROI_PRIOR;
                grid.roi_indices.push(idx);
            }
        }
        Ok(grid)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn len(&self) -> usize {
        self.occ_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occ_prob.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb {
            min: self.origin,
            max: self.origin + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution,
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn voxel_center(&self, idx: usize) -> Vec3 {
        let [x, y, z] = self.coords(idx);
        self.origin + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.resolution
    }

    pub fn voxel_of(&self, p: &Vec3) -> Option<usize> {
        let mut c = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.resolution).floor();
            if f < 0.0 || f >= self.dims[i] as f64 {
                return None;
            }
            c[i] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn reading(&self, idx: usize) -> VoxelReading {
        VoxelReading {
            p_o: self.occ_prob[idx],
            class: self.class[idx],
            p_s: self.sem_prob[idx],
            roi: self.roi[idx],
        }
    }

    pub fn occupancy_logodds(&self, idx: usize) -> f64 {
        self.occ_logodds[idx]
    }

    pub fn semantic_logodds(&self, idx: usize) -> f64 {
        self.sem_logodds[idx]
    }

    pub fn roi_indices(&self) -> &[usize] {
        &self.roi_indices
    }

    /// Directly sets a voxel's channels. Used to build synthetic grids.
    pub fn set_voxel(&mut self, idx: usize, p_o: f64, class: SemanticClass, p_s: f64) {
        self.occ_logodds[idx] = logit(p_o);
        self.occ_prob[idx] = p_o;
        self.class[idx] = class;
        self.sem_logodds[idx] = logit(p_s);
        self.sem_prob[idx] = p_s;
    }

    fn occ_bounds(&self) -> (f64, f64) {
        (logit(self.sensor.p_min), logit(self.sensor.p_max))
    }

    fn sem_bounds(&self) -> (f64, f64) {
        (logit(self.sensor.semantic_min), logit(self.sensor.semantic_max))
    }

    /// Adds `delta` to the occupancy log-odds of one voxel, clamped.
    pub fn update_occupancy(&mut self, idx: usize, delta: f64) {
        let (lo, hi) = self.occ_bounds();
        let l = (self.occ_logodds[idx] + delta).clamp(lo, hi);
        self.occ_logodds[idx] = l;
        self.occ_prob[idx] = sigmoid(l);
    }

    /// Matching class: log-odds update. Differing class: the pair with the
    /// greater probability wins.
    pub fn update_semantic(&mut self, idx: usize, m: SemanticMeasurement) {
        let (lo, hi) = self.sem_bounds();
        if m.class == self.class[idx] {
            let l = (self.sem_logodds[idx] + logit(m.confidence)).clamp(lo, hi);
            self.sem_logodds[idx] = l;
            self.sem_prob[idx] = sigmoid(l);
        } else if m.confidence > self.sem_prob[idx] {
            let l = logit(m.confidence).clamp(lo, hi);
            self.class[idx] = m.class;
            self.sem_logodds[idx] = l;
            self.sem_prob[idx] = sigmoid(l);
        }
    }

    /// Voxels pierced by the segment `origin + t * dir`, `t` in `[0, t_end]`,
    /// clipped to the grid, in traversal order (3D DDA).
    pub fn traverse(&self, origin: &Vec3, dir: &Vec3, t_end: f64, out: &mut Vec<usize>) {
        out.clear();
        let inv = dir.map(|d| 1.0 / d);
        let Some((t0, t1)) = self.bounds().ray_interval(origin, &inv, 0.0, t_end) else {
            return;
        };
        if t1 <= t0 {
            return;
        }
        let entry = origin + dir * t0;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            let f = ((entry[i] - self.origin[i]) / self.resolution).floor() as i64;
            cell[i] = f.clamp(0, self.dims[i] as i64 - 1);
            if dir[i] > 0.0 {
                step[i] = 1;
                let boundary = self.origin[i] + (cell[i] + 1) as f64 * self.resolution;
                t_max[i] = (boundary - origin[i]) * inv[i];
                t_delta[i] = self.resolution * inv[i];
            } else if dir[i] < 0.0 {
                step[i] = -1;
                let boundary = self.origin[i] + cell[i] as f64 * self.resolution;
                t_max[i] = (boundary - origin[i]) * inv[i];
                t_delta[i] = -self.resolution * inv[i];
            }
        }
        loop {
            out.push(self.index(cell[0] as usize, cell[1] as usize, cell[2] as usize));
            let axis = if t_max[0] < t_max[1] {
                if t_max[0] < t_max[2] { 0 } else { 2 }
            } else if t_max[1] < t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] >= t1 {
                break;
            }
            cell[axis] += step[axis];
            if cell[axis] < 0 || cell[axis] >= self.dims[axis] as i64 {
                break;
            }
            t_max[axis] += t_delta[axis];
        }
    }

    /// Fuses one frame. Every ray applies a miss update to the voxels it
    /// crosses before its hit voxel and a hit update (plus the semantic
    /// measurement) to the hit voxel. Pixels without a return clear free
    /// space up to `max_depth`; invalid (NaN) pixels are skipped.
    pub fn integrate_frame(&mut self, frame: &Frame, semantics: &[Option<SemanticMeasurement>]) -> Result<IntegrationSummary, GridError> {
        if semantics.len() != frame.depth.len() {
            return Err(GridError::SemanticSizeMismatch {
                expected: frame.depth.len(),
                got: semantics.len(),
            });
        }
        let hit_delta = logit(self.sensor.p_hit);
        let miss_delta = logit(self.sensor.p_miss);
        let origin = frame.pose.position;
        let mut summary = IntegrationSummary::default();
        let mut visited = Vec::with_capacity(256);
        let mut roi_seen = vec![false; self.len()];
        for (idx, &z) in frame.depth.iter().enumerate() {
            if z.is_nan() {
                continue;
            }
            let ray_cam = frame.intrinsics.pixel_ray(idx);
            let dir = (frame.pose.rotation * ray_cam).normalize();
            let (range, hit_voxel) = if z.is_finite() {
                let hit = frame.pose.camera_to_world(&(ray_cam * z));
                ((hit - origin).norm(), self.voxel_of(&hit))
            } else {
                (frame.intrinsics.max_depth * ray_cam.norm(), None)
            };
            self.traverse(&origin, &dir, range, &mut visited);
            summary.rays_traced += 1;
            for &v in &visited {
                if Some(v) == hit_voxel {
                    continue;
                }
                self.update_occupancy(v, miss_delta);
                if let Some(confidence) = self.sensor.free_space_confidence {
                    self.update_semantic(v, SemanticMeasurement { class: SemanticClass::Background, confidence });
                }
                summary.miss_updates += 1;
                if self.roi[v] {
                    roi_seen[v] = true;
                }
            }
            if let Some(v) = hit_voxel {
                self.update_occupancy(v, hit_delta);
                if let Some(m) = semantics[idx] {
                    self.update_semantic(v, m);
                }
                summary.hit_updates += 1;
                if self.roi[v] {
                    roi_seen[v] = true;
                }
            }
        }
        summary.roi_viewed = self.roi_indices.iter().copied().filter(|&i| roi_seen[i]).collect();
        Ok(summary)
    }

    /// Trilinear interpolation of occupancy and semantic probability between
    /// voxel centres, with the exact gradient of the interpolant. `None` when
    /// the point is not surrounded by eight voxel centres.
    #[inline]
    pub fn sample(&self, p: &Vec3) -> Option<TrilinearSample> {
        let inv_res = 1.0 / self.resolution;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for i in 0..3 {
            let u = (p[i] - self.origin[i]) * inv_res - 0.5;
            let f = u.floor();
            if !(f >= 0.0 && f + 1.0 < self.dims[i] as f64) {
                return None;
            }
            base[i] = f as usize;
            frac[i] = u - f;
        }
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let i000 = base[0] + sy * base[1] + sz * base[2];
        let idx = [i000, i000 + sx, i000 + sy, i000 + sx + sy, i000 + sz, i000 + sx + sz, i000 + sy + sz, i000 + sx + sy + sz];
        let [fx, fy, fz] = frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        let w = [gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz, gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz];
        // d w / d frac
        let dwx = [-gy * gz, gy * gz, -fy * gz, fy * gz, -gy * fz, gy * fz, -fy * fz, fy * fz];
        let dwy = [-gx * gz, -fx * gz, gx * gz, fx * gz, -gx * fz, -fx * fz, gx * fz, fx * fz];
        let dwz = [-gx * gy, -fx * gy, -gx * fy, -fx * fy, gx * gy, fx * gy, gx * fy, fx * fy];
        let mut s = TrilinearSample {
            p_o: 0.0,
            p_s: 0.0,
            grad_o: Vec3::zeros(),
            grad_s: Vec3::zeros(),
        };
        for k in 0..8 {
            let o = self.occ_prob[idx[k]];
            let sem = self.sem_prob[idx[k]];
            s.p_o += w[k] * o;
            s.p_s += w[k] * sem;
            s.grad_o += Vec3::new(dwx[k], dwy[k], dwz[k]) * o;
            s.grad_s += Vec3::new(dwx[k], dwy[k], dwz[k]) * sem;
        }
        s.grad_o *= inv_res;
        s.grad_s *= inv_res;
        Some(s)
    }

    /// Integer cell (lower corner voxel) used by [`Self::sample`], if any.
    pub fn sample_cell(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut base = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.resolution - 0.5).floor();
            if !(f >= 0.0 && f + 1.0 < self.dims[i] as f64) {
                return None;
            }
            base[i] = f as usize;
        }
        Some(base)
    }

    /// Distance from `p` to the nearest interpolation-cell face, per axis minimum.
    pub fn distance_to_cell_boundary(&self, p: &Vec3) -> f64 {
        (0..3)
            .map(|i| {
                let u = (p[i] - self.origin[i]) / self.resolution - 0.5;
                let f = u - u.floor();
                f.min(1.0 - f) * self.resolution
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occ_prob[idx] > INITIAL_OCCUPANCY + REGION_EPS
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.occ_prob[idx] < INITIAL_OCCUPANCY - REGION_EPS
    }

    pub fn is_target(&self, idx: usize) -> bool {
        self.roi[idx] && self.is_occupied(idx) && self.class[idx].is_node() && self.sem_prob[idx] > 0.5
    }

    pub fn region_queries(&self) -> RegionSets {
        let mut sets = RegionSets::default();
        for idx in 0..self.len() {
            if self.is_occupied(idx) {
                sets.occupied.push(idx);
            } else if self.is_free(idx) {
                sets.free.push(idx);
            }
            if self.is_target(idx) {
                sets.target.push(idx);
            }
        }
        sets
    }

    /// Centres of occupied voxels inside `region`, ordered by voxel index.
    pub fn export_pointcloud(&self, region: &Aabb) -> Vec<LabeledPoint> {
        (0..self.len())
            .filter(|&idx| self.is_occupied(idx))
            .map(|idx| (idx, self.voxel_center(idx)))
            .filter(|(_, c)| region.contains(c))
            .map(|(idx, position)| LabeledPoint {
                position,
                label: Label {
                    class: self.class[idx],
                    instance: NO_INSTANCE,
                },
            })
            .collect()
    }

    pub fn summary(&self) -> GridSummary {
        let sets = self.region_queries();
        GridSummary {
            dims: self.dims,
            resolution: self.resolution,
            origin: self.origin.into(),
            roi_voxels: self.roi_indices.len(),
            occupied: sets.occupied.len(),
            free: sets.free.len(),
            target: sets.target.len(),
            mean_occupancy: self.occ_prob.iter().sum::<f64>() / self.len().max(1) as f64,
        }
    }

    const MAGIC: &'static [u8; 8] = b"NBVGRID1";

    /// Binary snapshot: magic, origin (3 x f64), resolution (f64), dims
    /// (3 x u32), then the occupancy log-odds (f64), class (i8), semantic
    /// log-odds (f64) and ROI (u8) channels. Little endian throughout.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        w.write_all(Self::MAGIC)?;
        for v in self.origin.iter().chain(std::iter::once(&self.resolution)) {
            w.write_all(&v.to_le_bytes())?;
        }
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.occ_logodds {
            w.write_all(&v.to_le_bytes())?;
        }
        let classes: Vec<u8> = self.class.iter().map(|c| c.code() as u8).collect();
        w.write_all(&classes)?;
        for v in &self.sem_logodds {
            w.write_all(&v.to_le_bytes())?;
        }
        let roi: Vec<u8> = self.roi.iter().map(|&r| r as u8).collect();
        w.write_all(&roi)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R, sensor: SensorModel) -> Result<Self, GridError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(GridError::Snapshot("bad magic".into()));
        }
        let mut f8 = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64, GridError> {
            r.read_exact(&mut f8)?;
            Ok(f64::from_le_bytes(f8))
        };
        let origin = Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let resolution = read_f64(&mut r)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let read_f64s = |r: &mut R| -> Result<Vec<f64>, GridError> {
            let mut buf = vec![0u8; 8 * n];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let occ_logodds = read_f64s(&mut r)?;
        let mut classes = vec![0u8; n];
        r.read_exact(&mut classes)?;
        let class = classes
            .into_iter()
            .map(|c| SemanticClass::try_from(c as i8).map_err(GridError::Snapshot))
            .collect::<Result<Vec<_>, _>>()?;
        let sem_logodds = read_f64s(&mut r)?;
        let mut roi_bytes = vec![0u8; n];
        r.read_exact(&mut roi_bytes)?;
        let roi: Vec<bool> = roi_bytes.into_iter().map(|b| b != 0).collect();
        let roi_indices = (0..n).filter(|&i| roi[i]).collect();
        Ok(Self {
            origin,
            resolution,
            dims,
            sensor,
            occ_prob: occ_logodds.iter().map(|&l| sigmoid(l)).collect(),
            occ_logodds,
            class,
            sem_prob: sem_logodds.iter().map(|&l| sigmoid(l)).collect(),
            sem_logodds,
            roi,
            roi_indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, NO_RETURN};
    use crate::geometry::{look_at_or_fallback, CameraPose};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> SemanticGrid {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(0.2, 0.1, 0.1)).unwrap();
        let roi = Aabb::cube(Vec3::new(0.15, 0.05, 0.05), 0.06);
        SemanticGrid::new(&bounds, 0.01, &roi, SensorModel::default()).unwrap()
    }

    /// Single-pixel frame looking along +x from `camera`.
    fn one_pixel_frame(camera: Vec3, depth: f64) -> Frame {
        let intr = Intrinsics::from_hfov(1, 1, 10.0, 0.01, 1.0).unwrap();
        Frame {
            intrinsics: intr,
            pose: look_at_or_fallback(&camera, &(camera + Vec3::x())).unwrap(),
            step: 0,
            depth: vec![depth],
            labels: vec![None],
        }
    }

    #[test]
    fn initial_state() {
        let g = test_grid();
        assert_eq!(g.dims(), [20, 10, 10]);
        assert_eq!(g.roi_indices().len(), 6 * 6 * 6);
        for idx in 0..g.len() {
            let r = g.reading(idx);
            assert_eq!(r.p_o, 0.5);
            assert_eq!(r.class, SemanticClass::Background);
            assert_eq!(r.p_s, if r.roi { ROI_PRIOR } else { BACKGROUND_PRIOR });
        }
        let sets = g.region_queries();
        assert!(sets.free.is_empty() && sets.occupied.is_empty() && sets.target.is_empty());
        assert!(g.export_pointcloud(&g.bounds()).is_empty());
    }

    #[test]
    fn rejects_bad_free_space_confidence() {
        let bounds = Aabb::cube(Vec3::zeros(), 0.1);
        for c in [0.0, 1.0, f64::NAN] {
            let sensor = SensorModel {
                free_space_confidence: Some(c),
                ..SensorModel::default()
            };
            assert!(SemanticGrid::new(&bounds, 0.01, &bounds, sensor).is_err());
        }
    }

    #[test]
    fn single_hit_and_misses() {
        let mut g = test_grid();
        // Ray along the x axis through voxel row (y=5, z=5), hitting at x = 0.095.
        let camera = Vec3::new(-0.05, 0.055, 0.055);
        let frame = one_pixel_frame(camera, 0.145);
        let summary = g.integrate_frame(&frame, &[None]).unwrap();
        assert_eq!(summary.rays_traced, 1);
        assert_eq!(summary.hit_updates, 1);
        assert_eq!(summary.miss_updates, 9);
        let hit = g.index(9, 5, 5);
        assert!((g.reading(hit).p_o - 0.7).abs() < 1e-12);
        let expected_miss = sigmoid(logit(0.5) + logit(0.4));
        for x in 0..9 {
            assert!((g.reading(g.index(x, 5, 5)).p_o - expected_miss).abs() < 1e-12);
            assert!((expected_miss - 0.4).abs() < 1e-12);
        }
        // Untouched voxels stay at the prior.
        assert_eq!(g.reading(g.index(10, 5, 5)).p_o, 0.5);
        assert_eq!(g.reading(g.index(3, 4, 5)).p_o, 0.5);
        // Second identical hit.
        g.integrate_frame(&frame, &[None]).unwrap();
        let twice = sigmoid(2.0 * logit(0.7));
        assert!((g.reading(hit).p_o - twice).abs() < 1e-12);
        assert!((twice - 0.845).abs() < 1e-3);
    }

    #[test]
    fn no_return_clears_to_max_range() {
        let mut g = test_grid();
        let frame = one_pixel_frame(Vec3::new(-0.05, 0.055, 0.055), NO_RETURN);
        let summary = g.integrate_frame(&frame, &[None]).unwrap();
        assert_eq!(summary.hit_updates, 0);
        assert_eq!(summary.miss_updates, 20);
        // Row passes through ROI voxels x in 12..18.
        assert_eq!(summary.roi_viewed.len(), 6);
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let mut g = test_grid();
        let before = g.clone();
        let frame = one_pixel_frame(Vec3::new(-0.05, 0.055, 0.055), f64::NAN);
        g.integrate_frame(&frame, &[None]).unwrap();
        assert_eq!(g, before);
        assert!(g.integrate_frame(&frame, &[]).is_err());
    }

    #[test]
    fn semantic_two_case_rule() {
        let mut g = test_grid();
        let idx = 0;
        g.set_voxel(idx, 0.5, SemanticClass::FruitNode, 0.8);
        g.update_semantic(idx, SemanticMeasurement { class: SemanticClass::LeafNode, confidence: 0.6 });
        assert_eq!(g.reading(idx).class, SemanticClass::FruitNode);
        assert!((g.reading(idx).p_s - 0.8).abs() < 1e-12);
        g.update_semantic(idx, SemanticMeasurement { class: SemanticClass::LeafNode, confidence: 0.9 });
        assert_eq!(g.reading(idx).class, SemanticClass::LeafNode);
        assert!((g.reading(idx).p_s - 0.9).abs() < 1e-12);
        // Matching label: log-odds addition.
        g.update_semantic(idx, SemanticMeasurement { class: SemanticClass::LeafNode, confidence: 0.9 });
        assert!((g.reading(idx).p_s - sigmoid(2.0 * logit(0.9))).abs() < 1e-12);
    }

    #[test]
    fn region_target_definition() {
        let mut g = test_grid();
        let roi_voxel = g.roi_indices()[0];
        g.set_voxel(roi_voxel, 0.9, SemanticClass::FruitNode, 0.9);
        let outside = 0;
        g.set_voxel(outside, 0.9, SemanticClass::FruitNode, 0.9);
        let sets = g.region_queries();
        assert_eq!(sets.target, vec![roi_voxel]);
        assert_eq!(sets.occupied.len(), 2);
        let pts = g.export_pointcloud(&g.bounds());
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].position, g.voxel_center(outside));
    }

    #[test]
    fn wall_voxelization() {
        // Plane at x = 0.105 seen head-on: the only occupied voxels form the x = 10 slab.
        let mut g = test_grid();
        let intr = Intrinsics::from_hfov(40, 40, 20.0, 0.01, 1.0).unwrap();
        let pose: CameraPose = look_at_or_fallback(&Vec3::new(-0.2, 0.05, 0.05), &Vec3::new(1.0, 0.05, 0.05)).unwrap();
        let depth: Vec<f64> = (0..intr.pixel_count()).map(|_| 0.305).collect();
        let frame = Frame {
            intrinsics: intr,
            pose,
            step: 0,
            depth,
            labels: vec![None; intr.pixel_count()],
        };
        g.integrate_frame(&frame, &vec![None; intr.pixel_count()]).unwrap();
        let occupied = g.region_queries().occupied;
        assert!(!occupied.is_empty());
        let mut oracle = Vec::new();
        for idx in 0..intr.pixel_count() {
            let p = frame.world_point(idx).unwrap();
            if let Some(v) = g.voxel_of(&p) {
                oracle.push(v);
            }
        }
        oracle.sort_unstable();
        oracle.dedup();
        assert_eq!(occupied, oracle);
        assert!(occupied.iter().all(|&i| g.coords(i)[0] == 10));
    }

    #[test]
    fn trilinear_lattice_and_constant() {
        let mut g = test_grid();
        let uniform = g.sample(&Vec3::new(0.0731, 0.0412, 0.0555)).unwrap();
        assert!((uniform.p_o - 0.5).abs() < 1e-15);
        assert!(uniform.grad_o.norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for idx in 0..g.len() {
            g.set_voxel(idx, rng.random_range(0.12..0.97), SemanticClass::Background, rng.random_range(0.01..0.99));
        }
        let idx = g.index(4, 4, 4);
        let s = g.sample(&g.voxel_center(idx)).unwrap();
        assert!((s.p_o - g.reading(idx).p_o).abs() < 1e-15);
        let fd_x = (g.reading(g.index(5, 4, 4)).p_o - g.reading(idx).p_o) / g.resolution();
        let fd_z = (g.reading(g.index(4, 4, 5)).p_s - g.reading(idx).p_s) / g.resolution();
        assert!((s.grad_o.x - fd_x).abs() < 1e-9);
        assert!((s.grad_s.z - fd_z).abs() < 1e-9);
        // Border: no eight-neighbour support.
        assert!(g.sample(&Vec3::new(0.002, 0.05, 0.05)).is_none());
        assert!(g.sample(&Vec3::new(-1.0, 0.05, 0.05)).is_none());
    }

    #[test]
    fn trilinear_gradient_matches_central_differences() {
        let mut g = test_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for idx in 0..g.len() {
            g.set_voxel(idx, rng.random_range(0.12..0.97), SemanticClass::Background, rng.random_range(0.01..0.99));
        }
        let h = 1e-5;
        let mut checked = 0;
        while checked < 1000 {
            let p = Vec3::new(rng.random_range(0.006..0.194), rng.random_range(0.006..0.094), rng.random_range(0.006..0.094));
            if g.distance_to_cell_boundary(&p) < 2.0 * h {
                continue;
            }
            let s = g.sample(&p).unwrap();
            for axis in 0..3 {
                let mut e = Vec3::zeros();
                e[axis] = h;
                let (a, b) = (g.sample(&(p + e)).unwrap(), g.sample(&(p - e)).unwrap());
                let fd_o = (a.p_o - b.p_o) / (2.0 * h);
                let fd_s = (a.p_s - b.p_s) / (2.0 * h);
                assert!((fd_o - s.grad_o[axis]).abs() <= 1e-5 * fd_o.abs().max(1.0));
                assert!((fd_s - s.grad_s[axis]).abs() <= 1e-5 * fd_s.abs().max(1.0));
            }
            checked += 1;
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut g = test_grid();
        g.set_voxel(5, 0.8, SemanticClass::LeafNode, 0.7);
        let mut buf = Vec::new();
        g.write_snapshot(&mut buf).unwrap();
        let back = SemanticGrid::read_snapshot(buf.as_slice(), SensorModel::default()).unwrap();
        assert_eq!(back.dims(), g.dims());
        assert_eq!(back.roi_indices(), g.roi_indices());
        assert!((back.reading(5).p_o - 0.8).abs() < 1e-15);
        assert_eq!(back.reading(5).class, SemanticClass::LeafNode);
        assert!(SemanticGrid::read_snapshot(&b"NOTAGRID"[..], SensorModel::default()).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_stay_clamped(updates in proptest::collection::vec((any::<bool>(), 0.5..0.99f64), 1..60)) {
            let mut g = test_grid();
            let s = *g.sensor();
            for (hit, conf) in updates {
                g.update_occupancy(0, if hit { logit(s.p_hit) } else { logit(s.p_miss) });
                g.update_semantic(0, SemanticMeasurement { class: SemanticClass::FruitNode, confidence: conf });
                let r = g.reading(0);
                prop_assert!(r.p_o >= s.p_min - 1e-12 && r.p_o <= s.p_max + 1e-12);
                prop_assert!(r.p_s >= 0.0 && r.p_s <= 1.0);
            }
        }

        #[test]
        fn unclamped_fusion_is_order_independent(mut seq in proptest::collection::vec(any::<bool>(), 1..4), seed in 0u64..1000) {
            // Three updates cannot reach either clamp from 0.5.
            let s = SensorModel::default();
            let apply = |seq: &[bool]| {
                let mut g = test_grid();
                for &hit in seq {
                    g.update_occupancy(1, if hit { logit(s.p_hit) } else { logit(s.p_miss) });
                }
                g.occupancy_logodds(1)
            };
            let a = apply(&seq);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..seq.len()).rev() {
                seq.swap(i, rng.random_range(0..=i));
            }
            prop_assert!((a - apply(&seq)).abs() < 1e-12);
        }

        #[test]
        fn trilinear_is_continuous(x in 0.006..0.19f64, y in 0.006..0.09f64, z in 0.006..0.09f64) {
            let mut g = test_grid();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for idx in 0..g.len() {
                g.set_voxel(idx, rng.random_range(0.12..0.97), SemanticClass::Background, rng.random_range(0.01..0.99));
            }
            let p = Vec3::new(x, y, z);
            let e = Vec3::repeat(1e-9);
            if let (Some(a), Some(b)) = (g.sample(&p), g.sample(&(p + e))) {
                prop_assert!((a.p_o - b.p_o).abs() < 1e-6);
                prop_assert!((a.p_s - b.p_s).abs() < 1e-6);
            }
        }
    }
}
