//! Ground-truth world: labelled triangle meshes, occluder boxes and surface
//! sampling for evaluation.

mod bvh;
mod obj;
mod plant;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

pub use bvh::Bvh;
pub use obj::{load_labeled_obj, parse_obj, write_obj, GroupLabel, LabelSidecar};
pub use plant::{box_mesh, cylinder_mesh, ellipsoid_mesh, generate_plant, generate_target, PlantParams};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("mesh has {triangles} triangles but {labels} labels")]
    LabelCountMismatch { triangles: usize, labels: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("group `{0}` has no entry in the label sidecar")]
    UnlabeledGroup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-voxel / per-triangle semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
#[repr(i8)]
pub enum SemanticClass {
    Background = -1,
    FruitNode = 0,
    LeafNode = 1,
}

impl SemanticClass {
    pub fn is_node(self) -> bool {
        !matches!(self, SemanticClass::Background)
    }

    pub fn code(self) -> i8 {
        self as i8
    }
}

impl From<SemanticClass> for i8 {
    fn from(c: SemanticClass) -> i8 {
        c as i8
    }
}

impl TryFrom<i8> for SemanticClass {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(SemanticClass::Background),
            0 => Ok(SemanticClass::FruitNode),
            1 => Ok(SemanticClass::LeafNode),
            other => Err(format!("unknown semantic class {other}")),
        }
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemanticClass::Background => "background",
            SemanticClass::FruitNode => "fruit_node",
            SemanticClass::LeafNode => "leaf_node",
        })
    }
}

/// Instance id carried by background geometry.
pub const NO_INSTANCE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub class: SemanticClass,
    pub instance: i32,
}

impl Label {
    pub const BACKGROUND: Label = Label {
        class: SemanticClass::Background,
        instance: NO_INSTANCE,
    };

    pub fn node(class: SemanticClass, instance: i32) -> Self {
        Self { class, instance }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub labels: Vec<Label>,
}

const MIN_TRIANGLE_AREA: f64 = 1e-14;

fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl LabeledMesh {
    /// Validates indices and label count, dropping zero-area triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, labels: Vec<Label>) -> Result<Self, SceneError> {
        if triangles.len() != labels.len() {
            return Err(SceneError::LabelCountMismatch {
                triangles: triangles.len(),
                labels: labels.len(),
            });
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(SceneError::IndexOutOfRange {
                    triangle: t,
                    index,
                    count: vertices.len(),
                });
            }
        }
        let (triangles, labels) = triangles
            .into_iter()
            .zip(labels)
            .filter(|(tri, _)| {
                let [a, b, c] = tri.map(|i| vertices[i as usize]);
                triangle_area(&a, &b, &c) > MIN_TRIANGLE_AREA
            })
            .unzip();
        Ok(Self {
            vertices,
            triangles,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Appends another mesh, re-indexing its vertices.
    pub fn append(&mut self, other: &LabeledMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn relabeled(mut self, label: Label) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }

    pub fn transformed(&self, transform: &Isometry3<f64>) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| transform.transform_point(&(*v).into()).coords)
                .collect(),
            triangles: self.triangles.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    /// Distinct node instance ids, sorted.
    pub fn node_instances(&self) -> Vec<i32> {
        let mut ids: Vec<i32> = self
            .labels
            .iter()
            .filter(|l| l.class.is_node())
            .map(|l| l.instance)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedMesh {
    pub mesh: LabeledMesh,
    pub transform: Isometry3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub label: Label,
}

/// Which half of the target an occluder covers, seen from a camera looking
/// along +x. Left/right split along y, top/bottom along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccluderSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl OccluderSide {
    pub const ALL: [OccluderSide; 4] = [
        OccluderSide::Left,
        OccluderSide::Right,
        OccluderSide::Top,
        OccluderSide::Bottom,
    ];

    fn offset_axis(self) -> Vec3 {
        match self {
            OccluderSide::Left => Vec3::y(),
            OccluderSide::Right => -Vec3::y(),
            OccluderSide::Top => Vec3::z(),
            OccluderSide::Bottom => -Vec3::z(),
        }
    }
}

impl fmt::Display for OccluderSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OccluderSide::Left => "left",
            OccluderSide::Right => "right",
            OccluderSide::Top => "top",
            OccluderSide::Bottom => "bottom",
        })
    }
}

/// Occluder box dimensions: `lateral` is the edge across the viewing axis,
/// `depth` the thickness along +x, `standoff` the gap between its back face
/// and the target centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderShape {
    pub lateral: f64,
    pub depth: f64,
    pub standoff: f64,
}

impl Default for OccluderShape {
    fn default() -> Self {
        Self {
            lateral: 0.1,
            depth: 0.04,
            standoff: 0.06,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub meshes: Vec<PlacedMesh>,
    pub occluders: Vec<Occluder>,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Default::default()
        }
    }

    pub fn with_mesh(mut self, mesh: LabeledMesh, transform: Isometry3<f64>) -> Self {
        self.meshes.push(PlacedMesh { mesh, transform });
        self
    }

    /// Places a background box between the camera side (-x) and `target`, its
    /// inner edge on the target's centre line so it hides the named half.
    pub fn with_occluder(mut self, side: OccluderSide, target: Vec3, shape: &OccluderShape) -> Self {
        let axis = side.offset_axis();
        let center = Vec3::new(
            target.x - shape.standoff - 0.5 * shape.depth,
            target.y,
            target.z,
        ) + axis * (0.5 * shape.lateral);
        self.occluders.push(Occluder {
            center,
            half_extents: Vec3::new(0.5 * shape.depth, 0.5 * shape.lateral, 0.5 * shape.lateral),
            label: Label::BACKGROUND,
        });
        self
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    pub label: Label,
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = &self.vertices;
        triangle_area(a, b, c)
    }

    pub fn centroid(&self) -> Vec3 {
        (self.vertices[0] + self.vertices[1] + self.vertices[2]) / 3.0
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        self.vertices.iter().for_each(|v| b.grow(v));
        b
    }

    /// Möller-Trumbore, two-sided. Returns the ray parameter of the hit.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        const EPS: f64 = 1e-12;
        let [v0, v1, v2] = &self.vertices;
        let e1 = v1 - v0;
        let e2 = v2 - v0;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < EPS {
            return None;
        }
        let inv_det = 1.0 / det;
        let s = origin - v0;
        let u = s.dot(&p) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv_det;
        (t >= t_min && t <= t_max).then_some(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    pub label: Label,
}

/// Ground-truth position of one node instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTruth {
    pub instance: i32,
    pub class: SemanticClass,
    /// Area-weighted centroid of the instance's surface.
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub position: Vec3,
    pub label: Label,
}

/// A built, immutable scene ready for ray casting.
#[derive(Debug, Clone)]
pub struct Scene {
    triangles: Vec<Triangle>,
    bvh: Bvh,
}

impl Scene {
    pub fn build(spec: &SceneSpec) -> Self {
        let mut triangles = Vec::new();
        for placed in &spec.meshes {
            let mesh = placed.mesh.transformed(&placed.transform);
            triangles.extend((0..mesh.len()).map(|i| Triangle {
                vertices: mesh.triangle(i),
                label: mesh.labels[i],
            }));
        }
        for occ in &spec.occluders {
            let mesh = box_mesh(occ.center, occ.half_extents, occ.label);
            triangles.extend((0..mesh.len()).map(|i| Triangle {
                vertices: mesh.triangle(i),
                label: mesh.labels[i],
            }));
        }
        Self::from_triangles(triangles)
    }

    pub fn from_triangles(triangles: Vec<Triangle>) -> Self {
        let bvh = Bvh::build(&triangles);
        Self { triangles, bvh }
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    /// Nearest hit along `origin + t * dir` with `t` in `[t_min, t_max]`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<Hit> {
        self.bvh
            .intersect(&self.triangles, origin, dir, t_min, t_max)
            .map(|(triangle, t)| Hit {
                t,
                triangle,
                label: self.triangles[triangle].label,
            })
    }

    /// Area-weighted surface centroid per node instance, ordered by instance id.
    pub fn node_truths(&self) -> Vec<NodeTruth> {
        let mut acc: BTreeMap<i32, (SemanticClass, Vec3, f64)> = BTreeMap::new();
        for tri in self.triangles.iter().filter(|t| t.label.class.is_node()) {
            let area = tri.area();
            let entry = acc
                .entry(tri.label.instance)
                .or_insert((tri.label.class, Vec3::zeros(), 0.0));
            entry.1 += tri.centroid() * area;
            entry.2 += area;
        }
        acc.into_iter()
            .map(|(instance, (class, sum, area))| NodeTruth {
                instance,
                class,
                position: sum / area,
            })
            .collect()
    }

    /// Stratified surface samples restricted to `region`.
    ///
    /// Each triangle is split into `k²` congruent sub-triangles with
    /// `k = ceil(longest_edge / spacing)` and one point is placed at each
    /// sub-triangle centroid, so neighbouring samples are at most `spacing`
    /// apart.
    pub fn ground_truth_points(&self, region: &Aabb, spacing: f64) -> Result<Vec<LabeledPoint>, SceneError> {
        if !(spacing > 0.0) {
            return Err(SceneError::InvalidParams(format!("spacing must be positive, got {spacing}")));
        }
        let mut points = Vec::new();
        if region.is_empty() {
            return Ok(points);
        }
        for tri in &self.triangles {
            // Closed-interval overlap: flat triangles have zero-thickness bounds.
            if !touches(region, &tri.bounds()) {
                continue;
            }
            let [a, b, c] = tri.vertices;
            let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            let k = (longest / spacing).ceil().max(1.0) as usize;
            let kf = k as f64;
            let lattice = |i: f64, j: f64| a + (b - a) * (i / kf) + (c - a) * (j / kf);
            for i in 0..k {
                for j in 0..(k - i) {
                    let (fi, fj) = (i as f64, j as f64);
                    let up = (lattice(fi, fj) + lattice(fi + 1.0, fj) + lattice(fi, fj + 1.0)) / 3.0;
                    if region.contains(&up) {
                        points.push(LabeledPoint {
                            position: up,
                            label: tri.label,
                        });
                    }
                    if i + j + 2 <= k {
                        let down = (lattice(fi + 1.0, fj) + lattice(fi, fj + 1.0) + lattice(fi + 1.0, fj + 1.0)) / 3.0;
                        if region.contains(&down) {
                            points.push(LabeledPoint {
                                position: down,
                                label: tri.label,
                            });
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

fn touches(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|i| a.min[i] <= b.max[i] && b.min[i] <= a.max[i])
}
