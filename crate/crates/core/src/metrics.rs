//! Evaluation metrics: ROI coverage, reconstruction F1, trajectory length,
//! occluded-node recall and ray-call totals.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::NodeTruth;
use crate::semantic_grid::{IntegrationSummary, SemanticGrid};
use crate::tracker::NodeTrack;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("the grid has no ROI voxels")]
    EmptyRoi,
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// ROI voxels updated by at least one insertion ray so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageLog {
    viewed: Vec<usize>,
}

impl CoverageLog {
    pub fn record(&mut self, summary: &IntegrationSummary) {
        self.viewed.extend_from_slice(&summary.roi_viewed);
        self.viewed.sort_unstable();
        self.viewed.dedup();
    }

    pub fn viewed(&self) -> &[usize] {
        &self.viewed
    }
}

/// Percentage of ROI voxels seen from at least one viewpoint.
pub fn roi_coverage(grid: &SemanticGrid, log: &CoverageLog) -> Result<f64, MetricsError> {
    let total = grid.roi_indices().len();
    if total == 0 {
        return Err(MetricsError::EmptyRoi);
    }
    Ok(100.0 * log.viewed.len() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    /// Percentages.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Uniform hash of points with cell edge equal to the query radius.
struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { points, cell, buckets }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|i| (p[i] / cell).floor() as i64)
    }

    fn any_within(&self, q: &Vec3, radius: f64) -> bool {
        let k = Self::key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if bucket.iter().any(|&i| (self.points[i] - q).norm() <= radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Symmetric nearest-neighbour matching at tolerance `tau`: precision is the
/// share of reconstructed points with a ground-truth point within `tau`,
/// recall the converse.
pub fn reconstruction_f1(reconstructed: &[Vec3], truth: &[Vec3], tau: f64) -> Result<F1Score, MetricsError> {
    if !(tau > 0.0) {
        return Err(MetricsError::BadTolerance);
    }
    if reconstructed.is_empty() || truth.is_empty() {
        return Ok(F1Score {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let truth_hash = SpatialHash::new(truth, tau);
    let recon_hash = SpatialHash::new(reconstructed, tau);
    let tp_recon = reconstructed.iter().filter(|p| truth_hash.any_within(p, tau)).count();
    let tp_truth = truth.iter().filter(|p| recon_hash.any_within(p, tau)).count();
    let precision = tp_recon as f64 / reconstructed.len() as f64;
    let recall = tp_truth as f64 / truth.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Score {
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        f1: 100.0 * f1,
    })
}

/// Sum of Euclidean distances between consecutive camera positions.
pub fn trajectory_distance(cameras: &[Vec3]) -> f64 {
    cameras.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Ground-truth nodes with a track within `radius` carrying the right label.
pub fn accurately_detected(tracks: &[NodeTrack], truths: &[NodeTruth], radius: f64) -> Vec<i32> {
    truths
        .iter()
        .filter(|n| tracks.iter().any(|t| t.label == n.class && (t.mean - n.position).norm() <= radius))
        .map(|n| n.instance)
        .collect()
}

/// Share of the initially undetected nodes that are accurately detected now;
/// `None` when nothing was undetected initially.
pub fn occluded_node_recall(tracks: &[NodeTrack], truths: &[NodeTruth], initially_undetected: &[i32], radius: f64) -> Option<f64> {
    if initially_undetected.is_empty() {
        return None;
    }
    let found = accurately_detected(tracks, truths, radius);
    let hits = initially_undetected.iter().filter(|i| found.contains(i)).count();
    Some(hits as f64 / initially_undetected.len() as f64)
}

pub fn ray_call_total(counts: impl IntoIterator<Item = usize>) -> usize {
    counts.into_iter().sum()
}
