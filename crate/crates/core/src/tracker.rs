//! Multi-node tracking across viewpoints: greedy gated association, Kalman
//! position updates and majority-vote labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;
use crate::geometry::{Mat3, Vec3};
use crate::scene::SemanticClass;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("no track with id {0}")]
    UnknownTrack(usize),
    #[error("innovation covariance is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Isotropic process noise added per prediction, m².
    pub process_noise: f64,
    /// Association gate on Euclidean distance, m.
    pub gate: f64,
    /// Measurement standard deviation across the viewing direction, m.
    pub lateral_std: f64,
    /// Lower bound on the measurement variance along the viewing direction, m².
    pub min_axial_variance: f64,
    /// Isotropic initial covariance; `None` uses the first measurement's.
    pub initial_variance: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            process_noise: 1e-8,
            gate: 0.03,
            lateral_std: 0.003,
            min_axial_variance: 1e-6,
            initial_variance: None,
        }
    }
}

/// A world-frame position measurement with its depth spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub position: Vec3,
    pub class: SemanticClass,
    /// Variance along `direction`, m².
    pub axial_variance: f64,
    pub direction: Vec3,
}

impl From<&Detection> for Measurement {
    fn from(d: &Detection) -> Self {
        Self {
            position: d.position,
            class: d.class,
            axial_variance: d.variance,
            direction: d.view_direction,
        }
    }
}

impl Measurement {
    /// `v f fᵀ + σ_lat² (I − f fᵀ)`.
    pub fn covariance(&self, cfg: &TrackerConfig) -> Mat3 {
        let f = self.direction.normalize();
        let ff = f * f.transpose();
        ff * self.axial_variance.max(cfg.min_axial_variance) + (Mat3::identity() - ff) * cfg.lateral_std.powi(2)
    }
}

fn vote_slot(class: SemanticClass) -> usize {
    (class.code() + 1) as usize
}

const CLASSES: [SemanticClass; 3] = [SemanticClass::Background, SemanticClass::FruitNode, SemanticClass::LeafNode];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrack {
    pub id: usize,
    pub mean: Vec3,
    pub covariance: Mat3,
    /// Vote counts indexed background, fruit node, leaf node.
    pub votes: [u32; 3],
    pub label: SemanticClass,
    pub created_step: usize,
    pub updates: usize,
}

impl NodeTrack {
    pub fn position_std(&self) -> f64 {
        (self.covariance.trace() / 3.0).max(0.0).sqrt()
    }

    /// Adds a vote; the label becomes the strict majority, otherwise stays.
    pub fn vote(&mut self, class: SemanticClass) {
        self.votes[vote_slot(class)] += 1;
        let current = self.votes[vote_slot(self.label)];
        if let Some((slot, _)) = self.votes.iter().enumerate().filter(|(_, &v)| v > current).max_by_key(|(i, &v)| (v, std::cmp::Reverse(*i))) {
            self.label = CLASSES[slot];
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// `(track index, measurement index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub config: TrackerConfig,
    pub tracks: Vec<NodeTrack>,
    pub step: usize,
}

impl TrackState {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            step: 0,
        }
    }

    /// Static scene: means and labels are kept, covariance grows by `q I`.
    pub fn predict(&mut self) {
        let q = Mat3::identity() * self.config.process_noise;
        for t in &mut self.tracks {
            t.covariance += q;
        }
    }

    /// Greedy nearest neighbour: gated pairs are taken in order of increasing
    /// distance (ties by track then measurement index), each side at most once.
    pub fn associate(&self, measurements: &[Measurement]) -> Association {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (mi, m) in measurements.iter().enumerate() {
                let d = (t.mean - m.position).norm();
                if d <= self.config.gate {
                    candidates.push((d, ti, mi));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; self.tracks.len()];
        let mut meas_used = vec![false; measurements.len()];
        let mut assoc = Association::default();
        for (_, ti, mi) in candidates {
            if !track_used[ti] && !meas_used[mi] {
                track_used[ti] = true;
                meas_used[mi] = true;
                assoc.pairs.push((ti, mi));
            }
        }
        assoc.unmatched = (0..measurements.len()).filter(|&i| !meas_used[i]).collect();
        assoc
    }

    /// Kalman update with identity measurement model (Joseph form), then a
    /// label vote.
    pub fn update_track(&mut self, track: usize, m: &Measurement) -> Result<(), TrackerError> {
        let r = m.covariance(&self.config);
        let t = &mut self.tracks[track];
        let s = t.covariance + r;
        let s_inv = s.try_inverse().ok_or(TrackerError::Singular)?;
        let k = t.covariance * s_inv;
        t.mean += k * (m.position - t.mean);
        let i_k = Mat3::identity() - k;
        let p = i_k * t.covariance * i_k.transpose() + k * r * k.transpose();
        t.covariance = (p + p.transpose()) * 0.5;
        t.updates += 1;
        t.vote(m.class);
        Ok(())
    }

    pub fn spawn(&mut self, m: &Measurement) -> usize {
        let id = self.tracks.len();
        let covariance = match self.config.initial_variance {
            Some(v) => Mat3::identity() * v,
            None => m.covariance(&self.config),
        };
        let mut track = NodeTrack {
            id,
            mean: m.position,
            covariance,
            votes: [0; 3],
            label: m.class,
            created_step: self.step,
            updates: 0,
        };
        track.vote(m.class);
        self.tracks.push(track);
        id
    }

    /// One full cycle: predict, associate, update matched tracks and spawn
    /// new ones for unmatched measurements.
    pub fn process(&mut self, measurements: &[Measurement]) -> Result<Association, TrackerError> {
        self.predict();
        let assoc = self.associate(measurements);
        for &(ti, mi) in &assoc.pairs {
            self.update_track(ti, &measurements[mi])?;
        }
        for &mi in &assoc.unmatched {
            self.spawn(&measurements[mi]);
        }
        self.step += 1;
        Ok(assoc)
    }

    pub fn position_std(&self, id: usize) -> Result<f64, TrackerError> {
        self.tracks.get(id).map(NodeTrack::position_std).ok_or(TrackerError::UnknownTrack(id))
    }
}
