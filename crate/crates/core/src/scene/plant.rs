//! Procedural stand-ins for plant meshes.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledMesh, SceneError, SemanticClass};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub stem_height: f64,
    pub node_count: usize,
    /// Leaf panel length.
    pub leaf_size: f64,
    pub stem_radius: f64,
    pub node_radius: f64,
    /// Leaflets hanging around each node, spread evenly in azimuth.
    pub leaflets: usize,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            stem_height: 0.6,
            node_count: 3,
            leaf_size: 0.12,
            stem_radius: 0.006,
            node_radius: 0.01,
            leaflets: 3,
        }
    }
}

fn push(mesh: &mut LabeledMesh, vertices: &[Vec3], triangles: &[[u32; 3]], label: Label) {
    let offset = mesh.vertices.len() as u32;
    mesh.vertices.extend_from_slice(vertices);
    mesh.triangles
        .extend(triangles.iter().map(|t| t.map(|i| i + offset)));
    mesh.labels
        .extend(std::iter::repeat_n(label, triangles.len()));
}

pub fn box_mesh(center: Vec3, half: Vec3, label: Label) -> LabeledMesh {
    let corner = |i: u32| {
        Vec3::new(
            if i & 1 == 0 { -half.x } else { half.x },
            if i & 2 == 0 { -half.y } else { half.y },
            if i & 4 == 0 { -half.z } else { half.z },
        ) + center
    };
    let vertices: Vec<Vec3> = (0..8).map(corner).collect();
    let triangles = [
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    let mut mesh = LabeledMesh::default();
    push(&mut mesh, &vertices, &triangles, label);
    mesh
}

/// Closed cylinder between `a` and `b`.
pub fn cylinder_mesh(a: Vec3, b: Vec3, radius: f64, segments: usize, label: Label) -> LabeledMesh {
    let axis = (b - a).normalize();
    let helper = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for end in [a, b] {
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            vertices.push(end + (u * phi.cos() + v * phi.sin()) * radius);
        }
    }
    let ca = vertices.len() as u32;
    vertices.push(a);
    vertices.push(b);
    let n = segments as u32;
    let mut triangles = Vec::with_capacity(4 * segments);
    for s in 0..n {
        let s1 = (s + 1) % n;
        triangles.push([s, s1, n + s]);
        triangles.push([s1, n + s1, n + s]);
        triangles.push([ca, s1, s]);
        triangles.push([ca + 1, n + s, n + s1]);
    }
    let mut mesh = LabeledMesh::default();
    push(&mut mesh, &vertices, &triangles, label);
    mesh
}

/// UV ellipsoid with axis-aligned radii.
pub fn ellipsoid_mesh(center: Vec3, radii: Vec3, rings: usize, segments: usize, label: Label) -> LabeledMesh {
    let mut vertices = vec![center + Vec3::new(0.0, 0.0, radii.z)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = TAU * s as f64 / segments as f64;
            vertices.push(
                center
                    + Vec3::new(
                        radii.x * theta.sin() * phi.cos(),
                        radii.y * theta.sin() * phi.sin(),
                        radii.z * theta.cos(),
                    ),
            );
        }
    }
    let south = vertices.len() as u32;
    vertices.push(center - Vec3::new(0.0, 0.0, radii.z));
    let n = segments as u32;
    let ring = |r: u32, s: u32| 1 + r * n + (s % n);
    let mut triangles = Vec::new();
    for s in 0..n {
        triangles.push([0, ring(0, s), ring(0, s + 1)]);
        triangles.push([south, ring(rings as u32 - 2, s + 1), ring(rings as u32 - 2, s)]);
    }
    for r in 0..rings as u32 - 2 {
        for s in 0..n {
            triangles.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    let mut mesh = LabeledMesh::default();
    push(&mut mesh, &vertices, &triangles, label);
    mesh
}

/// Slightly curved rectangular panel spanned by `u` (length) and `v` (width),
/// drooping along `-normal` towards the far end.
fn leaf_mesh(base: Vec3, u: Vec3, v: Vec3, length: f64, width: f64, droop: f64, label: Label) -> LabeledMesh {
    const NU: usize = 4;
    const NV: usize = 2;
    let normal = u.cross(&v).normalize();
    let mut vertices = Vec::with_capacity((NU + 1) * (NV + 1));
    for i in 0..=NU {
        let a = i as f64 / NU as f64;
        // Tapered towards both ends.
        let half_w = 0.5 * width * (0.35 + 0.65 * (PI * a).sin());
        for j in 0..=NV {
            let b = j as f64 / NV as f64 * 2.0 - 1.0;
            vertices.push(base + u * (a * length) + v * (b * half_w) - normal * (droop * a * a));
        }
    }
    let idx = |i: usize, j: usize| (i * (NV + 1) + j) as u32;
    let mut triangles = Vec::new();
    for i in 0..NU {
        for j in 0..NV {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut mesh = LabeledMesh::default();
    push(&mut mesh, &vertices, &triangles, label);
    mesh
}

/// A stem along +z with `node_count` node clusters alternating between fruit
/// and leaf nodes, each carrying a petiole and leaf panel. Node instance ids
/// are `0..node_count`; everything else is background.
pub fn generate_plant(seed: u64, params: &PlantParams) -> Result<LabeledMesh, SceneError> {
    let p = params;
    if p.node_count == 0 {
        return Err(SceneError::InvalidParams("node_count must be at least 1".into()));
    }
    for (name, value) in [
        ("stem_height", p.stem_height),
        ("leaf_size", p.leaf_size),
        ("stem_radius", p.stem_radius),
        ("node_radius", p.node_radius),
    ] {
        if !(value > 0.0) {
            return Err(SceneError::InvalidParams(format!("{name} must be positive, got {value}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = cylinder_mesh(Vec3::zeros(), Vec3::new(0.0, 0.0, p.stem_height), p.stem_radius, 12, Label::BACKGROUND);

    let spacing = p.stem_height / (p.node_count as f64 + 1.0);
    let base_azimuth = rng.random_range(0.0..TAU);
    for i in 0..p.node_count {
        let z = spacing * (i as f64 + 1.0) + rng.random_range(-0.1..0.1) * spacing;
        let azimuth = base_azimuth + PI * i as f64 + rng.random_range(-0.4..0.4);
        let radial = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0);
        let tangent = Vec3::new(-azimuth.sin(), azimuth.cos(), 0.0);
        let class = if i % 2 == 0 {
            SemanticClass::FruitNode
        } else {
            SemanticClass::LeafNode
        };
        let center = Vec3::new(0.0, 0.0, z) + radial * (0.8 * p.stem_radius);
        let radii = Vec3::new(p.node_radius, p.node_radius, 1.3 * p.node_radius);
        mesh.append(&ellipsoid_mesh(center, radii, 8, 12, Label::node(class, i as i32)));

        // Petiole rising outwards from the node, ending in a drooping leaf.
        let rise = rng.random_range(0.25..0.5f64);
        let dir = (radial * rise.cos() + Vec3::z() * rise.sin()).normalize();
        let petiole_len = 0.5 * p.leaf_size;
        let start = center + radial * p.node_radius;
        let end = start + dir * petiole_len;
        mesh.append(&cylinder_mesh(start, end, 0.25 * p.stem_radius, 6, Label::BACKGROUND));
        let leaf_dir = (radial * 0.9 - Vec3::z() * 0.2).normalize();
        mesh.append(&leaf_mesh(end, leaf_dir, tangent, p.leaf_size, 0.5 * p.leaf_size, 0.25 * p.leaf_size, Label::BACKGROUND));

        // Leaflets hanging around the node hide it from part of the view sphere.
        let phase = azimuth + if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.9..1.6);
        for k in 0..p.leaflets {
            let side_azimuth = phase + TAU * k as f64 / p.leaflets as f64 + if k > 0 { rng.random_range(-0.2..0.2) } else { 0.0 };
            let side_radial = Vec3::new(side_azimuth.cos(), side_azimuth.sin(), 0.0);
            let side_tangent = Vec3::new(-side_azimuth.sin(), side_azimuth.cos(), 0.0);
            let leaflet_top = Vec3::new(0.0, 0.0, z + 0.6 * p.leaf_size * 0.5) + side_radial * (3.5 * p.node_radius);
            mesh.append(&leaf_mesh(
                leaflet_top,
                (-Vec3::z() + side_radial * 0.3).normalize(),
                side_tangent,
                0.6 * p.leaf_size,
                0.35 * p.leaf_size,
                0.05 * p.leaf_size,
                Label::BACKGROUND,
            ));
        }
    }
    Ok(mesh)
}

/// A single fruit node (instance 0) on a short stem segment, centred at the origin.
pub fn generate_target(radius: f64) -> LabeledMesh {
    let mut mesh = ellipsoid_mesh(
        Vec3::zeros(),
        Vec3::new(radius, radius, 1.2 * radius),
        10,
        16,
        Label::node(SemanticClass::FruitNode, 0),
    );
    let stem = cylinder_mesh(
        Vec3::new(0.0, 0.0, -2.0 * radius),
        Vec3::new(0.0, 0.0, 2.0 * radius),
        0.3 * radius,
        10,
        Label::BACKGROUND,
    );
    mesh.append(&stem);
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn plant_has_requested_instances() {
        let params = PlantParams {
            node_count: 3,
            ..PlantParams::default()
        };
        let mesh = generate_plant(0, &params).unwrap();
        assert_eq!(mesh.node_instances(), vec![0, 1, 2]);
    }

    #[test]
    fn plant_is_deterministic() {
        let a = generate_plant(5, &PlantParams::default()).unwrap();
        let b = generate_plant(5, &PlantParams::default()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = generate_plant(6, &PlantParams::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn plant_node_centroids_near_stem_axis() {
        let params = PlantParams {
            node_count: 5,
            ..PlantParams::default()
        };
        let mesh = generate_plant(1, &params).unwrap();
        let mut centroids: BTreeMap<i32, (Vec3, f64)> = BTreeMap::new();
        for i in 0..mesh.len() {
            let label = mesh.labels[i];
            if !label.class.is_node() {
                continue;
            }
            let [a, b, c] = mesh.triangle(i);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            let e = centroids.entry(label.instance).or_insert((Vec3::zeros(), 0.0));
            e.0 += (a + b + c) / 3.0 * area;
            e.1 += area;
        }
        assert_eq!(centroids.len(), 5);
        for (sum, area) in centroids.values() {
            let c = sum / *area;
            assert!(c.xy().norm() < 0.02, "centroid {c:?} too far from stem");
        }
    }

    #[test]
    fn plant_rejects_bad_params() {
        let bad = PlantParams {
            node_count: 0,
            ..PlantParams::default()
        };
        assert!(generate_plant(0, &bad).is_err());
        let bad = PlantParams {
            leaf_size: -1.0,
            ..PlantParams::default()
        };
        assert!(generate_plant(0, &bad).is_err());
    }

    #[test]
    fn node_classes_alternate() {
        let mesh = generate_plant(9, &PlantParams { node_count: 4, ..PlantParams::default() }).unwrap();
        for l in mesh.labels.iter().filter(|l| l.class.is_node()) {
            let expected = if l.instance % 2 == 0 {
                SemanticClass::FruitNode
            } else {
                SemanticClass::LeafNode
            };
            assert_eq!(l.class, expected);
        }
    }
}
