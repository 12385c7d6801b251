//! Ground-truth instance segmentation with configurable corruption, standing
//! in for a learned node detector.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::camera::Frame;
use crate::geometry::Vec3;
use crate::scene::SemanticClass;
use crate::semantic_grid::SemanticMeasurement;

/// Confidence assigned to non-node pixels of the semantic image.
pub const BACKGROUND_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceModel {
    Fixed { value: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Default for ConfidenceModel {
    /// Mean 0.85.
    fn default() -> Self {
        ConfidenceModel::Beta { alpha: 17.0, beta: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    pub miss_probability: f64,
    /// Rounds of 4-neighbour erosion applied to each mask.
    pub mask_erosion: u32,
    pub confidence: ConfidenceModel,
    /// Instances with fewer surviving pixels are not reported.
    pub min_mask_pixels: usize,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            miss_probability: 0.0,
            mask_erosion: 0,
            confidence: ConfidenceModel::default(),
            min_mask_pixels: 1,
        }
    }
}

impl DetectorNoise {
    /// Exact masks, confidence fixed at 1.
    pub fn off() -> Self {
        Self {
            confidence: ConfidenceModel::Fixed { value: 1.0 },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Ground-truth instance the mask was taken from.
    pub instance: i32,
    pub class: SemanticClass,
    pub confidence: f64,
    /// Row-major pixel indices, ascending.
    pub mask: Vec<usize>,
    pub position: Vec3,
    /// Variance of the masked points along `view_direction`, m².
    pub variance: f64,
    pub view_direction: Vec3,
}

fn erode(mask: &[usize], width: usize, height: usize, rounds: u32) -> Vec<usize> {
    let mut current: Vec<usize> = mask.to_vec();
    for _ in 0..rounds {
        let set: std::collections::BTreeSet<usize> = current.iter().copied().collect();
        current.retain(|&p| {
            let (u, v) = (p % width, p / width);
            u > 0 && u + 1 < width && v > 0 && v + 1 < height && [p - 1, p + 1, p - width, p + width].iter().all(|q| set.contains(q))
        });
        if current.is_empty() {
            break;
        }
    }
    current
}

fn draw_confidence<R: Rng + ?Sized>(model: &ConfidenceModel, rng: &mut R) -> f64 {
    let c = match *model {
        ConfidenceModel::Fixed { value } => value,
        ConfidenceModel::Beta { alpha, beta } => Beta::new(alpha, beta).map_or(0.85, |d| d.sample(rng)),
    };
    c.clamp(1e-6, 1.0)
}

/// Mean of `points` and the population variance of their projections on `axis`.
pub fn mean_and_axial_variance(points: &[Vec3], axis: &Vec3) -> (Vec3, f64) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let mean_depth = mean.dot(axis);
    let variance = points.iter().map(|p| (p.dot(axis) - mean_depth).powi(2)).sum::<f64>() / n;
    (mean, variance)
}

/// Groups node pixels by instance (ascending id), applies misses and
/// erosion, and estimates each surviving node's position and depth spread.
pub fn detect<R: Rng + ?Sized>(frame: &Frame, noise: &DetectorNoise, rng: &mut R) -> Vec<Detection> {
    let mut groups: BTreeMap<i32, (SemanticClass, Vec<usize>)> = BTreeMap::new();
    for (idx, label) in frame.labels.iter().enumerate() {
        if let Some(l) = label.filter(|l| l.class.is_node()) {
            groups.entry(l.instance).or_insert_with(|| (l.class, Vec::new())).1.push(idx);
        }
    }
    let forward = frame.pose.forward();
    let mut out = Vec::new();
    for (instance, (class, pixels)) in groups {
        // Draw both numbers for every instance so the stream does not depend on outcomes.
        let missed = rng.random::<f64>() < noise.miss_probability;
        let confidence = draw_confidence(&noise.confidence, rng);
        if missed {
            continue;
        }
        let mask = erode(&pixels, frame.width(), frame.height(), noise.mask_erosion);
        if mask.is_empty() || mask.len() < noise.min_mask_pixels {
            continue;
        }
        let points: Vec<Vec3> = mask.iter().filter_map(|&p| frame.world_point(p)).collect();
        let (position, variance) = mean_and_axial_variance(&points, &forward);
        out.push(Detection {
            instance,
            class,
            confidence,
            mask,
            position,
            variance,
            view_direction: forward,
        });
    }
    out
}

/// Per-pixel semantic measurements: mask pixels carry their detection's
/// class and confidence (highest confidence wins on overlap), every other
/// pixel with a depth return is background.
pub fn detections_to_semantic_image(detections: &[Detection], frame: &Frame) -> Vec<Option<SemanticMeasurement>> {
    let mut image: Vec<Option<SemanticMeasurement>> = frame
        .depth
        .iter()
        .map(|z| {
            z.is_finite().then_some(SemanticMeasurement {
                class: SemanticClass::Background,
                confidence: BACKGROUND_CONFIDENCE,
            })
        })
        .collect();
    let mut best = vec![f64::NEG_INFINITY; image.len()];
    for d in detections {
        for &p in &d.mask {
            if d.confidence > best[p] {
                best[p] = d.confidence;
                image[p] = Some(SemanticMeasurement {
                    class: d.class,
                    confidence: d.confidence,
                });
            }
        }
    }
    image
}
