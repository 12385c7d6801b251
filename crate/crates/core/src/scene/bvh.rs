use crate::geometry::{Aabb, Vec3};

use super::Triangle;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    // Leaf: range into `order`. Interior: `left` child index, right = left + 1.
    start: u32,
    count: u32,
    left: u32,
}

/// Bounding volume hierarchy over a triangle soup, median split on the
/// longest centroid axis.
#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(triangles: &[Triangle]) -> Self {
        if triangles.is_empty() {
            return Self::default();
        }
        let bounds: Vec<Aabb> = triangles.iter().map(Triangle::bounds).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(Triangle::centroid).collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1),
            order: (0..triangles.len() as u32).collect(),
        };
        bvh.nodes.push(Node {
            bounds: Aabb::empty(),
            start: 0,
            count: triangles.len() as u32,
            left: 0,
        });
        bvh.subdivide(0, &bounds, &centroids);
        bvh
    }

    fn subdivide(&mut self, node: usize, bounds: &[Aabb], centroids: &[Vec3]) {
        let (start, count) = (self.nodes[node].start as usize, self.nodes[node].count as usize);
        let items = &mut self.order[start..start + count];
        let mut node_bounds = Aabb::empty();
        let mut centroid_bounds = Aabb::empty();
        for &i in items.iter() {
            node_bounds = node_bounds.union(&bounds[i as usize]);
            centroid_bounds.grow(&centroids[i as usize]);
        }
        self.nodes[node].bounds = node_bounds;
        if count <= LEAF_SIZE {
            return;
        }
        let extent = centroid_bounds.extents();
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            return;
        }
        let mid = count / 2;
        items.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let left = self.nodes.len();
        self.nodes.push(Node {
            bounds: Aabb::empty(),
            start: start as u32,
            count: mid as u32,
            left: 0,
        });
        self.nodes.push(Node {
            bounds: Aabb::empty(),
            start: (start + mid) as u32,
            count: (count - mid) as u32,
            left: 0,
        });
        self.nodes[node].left = left as u32;
        self.nodes[node].count = 0;
        self.subdivide(left, bounds, centroids);
        self.subdivide(left + 1, bounds, centroids);
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or_else(Aabb::empty, |n| n.bounds)
    }

    /// Nearest intersection: (triangle index, ray parameter).
    pub fn intersect(&self, triangles: &[Triangle], origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = dir.map(|d| 1.0 / d);
        let mut best: Option<(usize, f64)> = None;
        let mut closest = t_max;
        let mut stack = Vec::with_capacity(64);
        if self.nodes[0].bounds.ray_interval(origin, &inv_dir, t_min, closest).is_some() {
            stack.push(0usize);
        }
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if node.bounds.ray_interval(origin, &inv_dir, t_min, closest).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.start as usize;
                for &tri in &self.order[start..start + node.count as usize] {
                    if let Some(t) = triangles[tri as usize].intersect(origin, dir, t_min, closest) {
                        // Ties resolve to the lowest triangle index for determinism.
                        let better = match best {
                            Some((bi, bt)) => t < bt || (t == bt && (tri as usize) < bi),
                            None => true,
                        };
                        if better {
                            closest = t;
                            best = Some((tri as usize, t));
                        }
                    }
                }
            } else {
                let l = node.left as usize;
                let r = l + 1;
                let tl = self.nodes[l].bounds.ray_interval(origin, &inv_dir, t_min, closest);
                let tr = self.nodes[r].bounds.ray_interval(origin, &inv_dir, t_min, closest);
                match (tl, tr) {
                    (Some((a, _)), Some((b, _))) => {
                        // Visit the nearer child first.
                        if a <= b {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }
}
