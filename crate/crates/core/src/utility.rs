//! Expected semantic information gain of a viewpoint, rendered by marching
//! rays through the trilinearly interpolated grid, and its analytic gradient
//! with respect to the camera and look-at positions.

use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::geometry::{skew, GeometryError, Mat3, Vec3, Viewpoint, FALLBACK_UP, WORLD_UP};
use crate::semantic_grid::SemanticGrid;

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("invalid ray spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Ray grid and sampling bounds used to render the gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaySpec {
    pub t_near: f64,
    pub t_far: f64,
    pub samples_per_ray: usize,
    pub rays_x: usize,
    pub rays_y: usize,
    /// Tangents of the half field of view, horizontal and vertical.
    pub tan_half_x: f64,
    pub tan_half_y: f64,
}

impl Default for RaySpec {
    fn default() -> Self {
        Self::for_intrinsics(&Intrinsics::default(), 32, 18)
    }
}

impl RaySpec {
    /// Spans the field of view of `intr` with a `rays_x` by `rays_y` grid.
    pub fn for_intrinsics(intr: &Intrinsics, rays_x: usize, rays_y: usize) -> Self {
        Self {
            t_near: 0.10,
            t_far: 0.75,
            samples_per_ray: 128,
            rays_x,
            rays_y,
            tan_half_x: 0.5 * intr.width as f64 / intr.fx,
            tan_half_y: 0.5 * intr.height as f64 / intr.fy,
        }
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        if !(0.0 < self.t_near && self.t_near < self.t_far) {
            return Err(UtilityError::InvalidSpec(format!("need 0 < t_near < t_far, got {} / {}", self.t_near, self.t_far)));
        }
        if self.samples_per_ray < 2 || self.rays_x == 0 || self.rays_y == 0 {
            return Err(UtilityError::InvalidSpec("need at least 2 samples per ray and one ray".into()));
        }
        if !(self.tan_half_x > 0.0 && self.tan_half_y > 0.0) {
            return Err(UtilityError::InvalidSpec("field of view must be positive".into()));
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.rays_x * self.rays_y
    }

    pub fn sample_t(&self, j: usize) -> f64 {
        self.t_near + (self.t_far - self.t_near) * j as f64 / (self.samples_per_ray - 1) as f64
    }

    /// Normalised image-plane coordinates `(x, y)` of ray `i` (row-major, cell centres).
    pub fn ray_xy(&self, i: usize) -> (f64, f64) {
        let (col, row) = (i % self.rays_x, i / self.rays_x);
        let x = self.tan_half_x * (2.0 * (col as f64 + 0.5) / self.rays_x as f64 - 1.0);
        let y = self.tan_half_y * (2.0 * (row as f64 + 0.5) / self.rays_y as f64 - 1.0);
        (x, y)
    }
}

/// Shannon entropy in bits, `0 log 0 = 0`.
pub fn entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// d entropy / dp, with `p` clamped away from 0 and 1.
pub fn entropy_derivative(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    ((1.0 - p) / p).log2()
}

const MAX_OCCUPANCY: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEvaluation {
    pub gain: f64,
    pub grad_camera: Vec3,
    pub grad_target: Vec3,
    /// Per-ray gain, row-major over the ray grid.
    pub per_ray: Vec<f64>,
}

impl GainEvaluation {
    /// Gradient packed as `[camera, target]`.
    pub fn gradient(&self) -> [f64; 6] {
        Viewpoint::new(self.grad_camera, self.grad_target).to_array()
    }
}

/// Camera frame of a viewpoint plus the Jacobians of its axes with respect to
/// the look-at target (the camera Jacobians are their negation).
#[derive(Debug, Clone, Copy)]
pub struct RayFrame {
    pub origin: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
    pub j_right: Mat3,
    pub j_down: Mat3,
    pub j_forward: Mat3,
}

impl RayFrame {
    pub fn new(vp: &Viewpoint) -> Result<Self, GeometryError> {
        let delta = vp.target - vp.camera;
        let dist = delta.norm();
        if dist <= f64::EPSILON {
            return Err(GeometryError::ZeroBaseline);
        }
        let forward = delta / dist;
        // The fallback branch is treated as locally constant.
        let mut up = WORLD_UP;
        let mut side = forward.cross(&up);
        if side.norm() < 1e-9 {
            up = FALLBACK_UP;
            side = forward.cross(&up);
        }
        let side_norm = side.norm();
        let right = side / side_norm;
        let down = forward.cross(&right);

        let j_forward = (Mat3::identity() - forward * forward.transpose()) / dist;
        let j_side = -skew(&up) * j_forward;
        let j_right = (Mat3::identity() - right * right.transpose()) * j_side / side_norm;
        let j_down = skew(&forward) * j_right - skew(&right) * j_forward;
        Ok(Self {
            origin: vp.camera,
            right,
            down,
            forward,
            j_right,
            j_down,
            j_forward,
        })
    }

    /// Unit world direction of the ray through image-plane point `(x, y)`.
    pub fn direction(&self, x: f64, y: f64) -> Vec3 {
        let s = (x * x + y * y + 1.0).sqrt();
        (self.right * x + self.down * y + self.forward) / s
    }

    /// d direction / d target for the ray through `(x, y)`.
    pub fn direction_jacobian(&self, x: f64, y: f64) -> Mat3 {
        let s = (x * x + y * y + 1.0).sqrt();
        (self.j_right * x + self.j_down * y + self.j_forward) / s
    }
}

/// World positions of every sample, indexed `ray * samples_per_ray + j`.
pub fn sample_positions(vp: &Viewpoint, spec: &RaySpec) -> Result<Vec<Vec3>, UtilityError> {
    let frame = RayFrame::new(vp)?;
    let n = spec.samples_per_ray;
    let mut out = Vec::with_capacity(spec.ray_count() * n);
    for i in 0..spec.ray_count() {
        let (x, y) = spec.ray_xy(i);
        let d = frame.direction(x, y);
        out.extend((0..n).map(|j| frame.origin + d * spec.sample_t(j)));
    }
    Ok(out)
}

struct RayResult {
    gain: f64,
    grad_camera: Vec3,
    grad_target: Vec3,
}

fn trace_ray(
    grid: &SemanticGrid,
    frame: &RayFrame,
    spec: &RaySpec,
    ray: usize,
    excluded: Option<&[bool]>,
    scratch: &mut Vec<(f64, f64, f64, Vec3, Vec3)>,
) -> RayResult {
    let (x, y) = spec.ray_xy(ray);
    let d = frame.direction(x, y);
    let n = spec.samples_per_ray;
    let base = ray * n;

    // Forward pass. scratch[j] = (p_o, T_j H_j, T_j H'_j, grad p_o, grad p_s).
    scratch.clear();
    let mut log_t: f64 = 0.0;
    let mut gain = 0.0;
    for j in 0..n {
        let p = frame.origin + d * spec.sample_t(j);
        let sample = if excluded.is_some_and(|m| m[base + j]) { None } else { grid.sample(&p) };
        match sample {
            Some(s) => {
                let transmittance = log_t.exp();
                let th = transmittance * entropy(s.p_s);
                gain += th;
                scratch.push((s.p_o, th, transmittance * entropy_derivative(s.p_s), s.grad_o, s.grad_s));
                log_t += (1.0 - s.p_o.min(MAX_OCCUPANCY)).ln();
            }
            None => scratch.push((0.0, 0.0, 0.0, Vec3::zeros(), Vec3::zeros())),
        }
    }

    // Backward pass with suffix sums S_k = sum_{j>k} T_j H_j, since
    // dT_j/dp_o(k) = -T_j / (1 - p_o(k)) for every k < j.
    let mut suffix = 0.0;
    let mut g_sum = Vec3::zeros();
    let mut g_t = Vec3::zeros();
    for j in (0..n).rev() {
        let (p_o, th, d_s, grad_o, grad_s) = scratch[j];
        let d_o = if p_o < MAX_OCCUPANCY { -suffix / (1.0 - p_o) } else { 0.0 };
        let g = grad_o * d_o + grad_s * d_s;
        g_sum += g;
        g_t += g * spec.sample_t(j);
        suffix += th;
    }
    let jd = frame.direction_jacobian(x, y);
    let grad_target = jd.transpose() * g_t;
    RayResult {
        gain,
        grad_camera: g_sum - grad_target,
        grad_target,
    }
}

/// Evaluates gain and gradient. Samples flagged in `excluded` (indexed like
/// [`sample_positions`]) are treated as lying outside the grid.
pub fn evaluate_gain_masked(grid: &SemanticGrid, vp: &Viewpoint, spec: &RaySpec, excluded: Option<&[bool]>) -> Result<GainEvaluation, UtilityError> {
    spec.validate()?;
    let frame = RayFrame::new(vp)?;
    let results: Vec<RayResult> = (0..spec.ray_count())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(spec.samples_per_ray),
            |scratch, ray| trace_ray(grid, &frame, spec, ray, excluded, scratch),
        )
        .collect();
    // Fixed-order reduction keeps results bit-identical across thread counts.
    let mut eval = GainEvaluation {
        gain: 0.0,
        grad_camera: Vec3::zeros(),
        grad_target: Vec3::zeros(),
        per_ray: Vec::with_capacity(results.len()),
    };
    for r in results {
        eval.gain += r.gain;
        eval.grad_camera += r.grad_camera;
        eval.grad_target += r.grad_target;
        eval.per_ray.push(r.gain);
    }
    Ok(eval)
}

/// Expected semantic information gain of `vp`, in bits, with its gradient.
pub fn evaluate_gain(grid: &SemanticGrid, vp: &Viewpoint, spec: &RaySpec) -> Result<GainEvaluation, UtilityError> {
    evaluate_gain_masked(grid, vp, spec, None)
}

/// Transmittance and entropy at every sample of one ray, for diagnostics.
pub fn ray_profile(grid: &SemanticGrid, vp: &Viewpoint, spec: &RaySpec, ray: usize) -> Result<Vec<(f64, f64, f64)>, UtilityError> {
    let frame = RayFrame::new(vp)?;
    let (x, y) = spec.ray_xy(ray);
    let d = frame.direction(x, y);
    let mut log_t: f64 = 0.0;
    let mut out = Vec::with_capacity(spec.samples_per_ray);
    for j in 0..spec.samples_per_ray {
        let t = spec.sample_t(j);
        let (p_o, p_s) = grid.sample(&(frame.origin + d * t)).map_or((0.0, 0.0), |s| (s.p_o, s.p_s));
        out.push((t, log_t.exp(), entropy(p_s)));
        log_t += (1.0 - p_o.min(MAX_OCCUPANCY)).ln();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub analytic: [f64; 6],
    pub finite_difference: [f64; 6],
    /// `max_i |a_i - fd_i| / max(||fd||_inf, floor)`.
    pub max_relative_error: f64,
    pub excluded_samples: usize,
}

/// Compares the analytic gradient with central differences of step `h`.
/// Samples whose interpolation cell changes under any perturbation, or that
/// lie within `2h` of a cell face, are excluded from every evaluation so both
/// sides differentiate the same smooth function.
pub fn check_gradient(grid: &SemanticGrid, vp: &Viewpoint, spec: &RaySpec, h: f64) -> Result<GradientCheck, UtilityError> {
    let base_pos = sample_positions(vp, spec)?;
    let mut excluded: Vec<bool> = base_pos
        .iter()
        .map(|p| grid.sample_cell(p).is_some() && grid.distance_to_cell_boundary(p) < 2.0 * h)
        .collect();
    let base_cells: Vec<Option<[usize; 3]>> = base_pos.iter().map(|p| grid.sample_cell(p)).collect();
    let mut perturbed = Vec::with_capacity(12);
    for k in 0..6 {
        for sign in [1.0, -1.0] {
            let mut v = vp.to_array();
            v[k] += sign * h;
            let vp_k = Viewpoint::from_array(v);
            for (i, p) in sample_positions(&vp_k, spec)?.iter().enumerate() {
                if grid.sample_cell(p) != base_cells[i] {
                    excluded[i] = true;
                }
            }
            perturbed.push(vp_k);
        }
    }
    let analytic = evaluate_gain_masked(grid, vp, spec, Some(&excluded))?.gradient();
    let mut fd = [0.0; 6];
    for k in 0..6 {
        let plus = evaluate_gain_masked(grid, &perturbed[2 * k], spec, Some(&excluded))?.gain;
        let minus = evaluate_gain_masked(grid, &perturbed[2 * k + 1], spec, Some(&excluded))?.gain;
        fd[k] = (plus - minus) / (2.0 * h);
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let max_relative_error = (0..6).map(|k| (analytic[k] - fd[k]).abs() / scale).fold(0.0, f64::max);
    Ok(GradientCheck {
        analytic,
        finite_difference: fd,
        max_relative_error,
        excluded_samples: excluded.iter().filter(|&&e| e).count(),
    })
}

/// Per-ray gains as a `rays_y` by `rays_x` CSV matrix.
pub fn write_gain_csv<W: Write>(eval: &GainEvaluation, spec: &RaySpec, mut w: W) -> Result<(), UtilityError> {
    for row in eval.per_ray.chunks(spec.rays_x) {
        let line: Vec<String> = row.iter().map(|g| format!("{g:.9}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Per-ray gains as a heat map, one `scale` by `scale` block per ray.
pub fn write_gain_png(eval: &GainEvaluation, spec: &RaySpec, scale: u32, path: &Path) -> Result<(), UtilityError> {
    let max = eval.per_ray.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(spec.rays_x as u32 * scale, spec.rays_y as u32 * scale, |u, v| {
        let i = (v / scale) as usize * spec.rays_x + (u / scale) as usize;
        heat(eval.per_ray[i] / max)
    });
    img.save(path)?;
    Ok(())
}

/// Black to red to yellow to white ramp.
fn heat(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0) * 3.0;
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([c(v), c(v - 1.0), c(v - 2.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::scene::SemanticClass;
    use crate::semantic_grid::{SensorModel, BACKGROUND_PRIOR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> RaySpec {
        RaySpec { rays_x: 8, rays_y: 5, ..RaySpec::default() }
    }

    /// 2 m cube of 0.05 m voxels centred on the origin, ROI in a far corner.
    fn cube_grid() -> SemanticGrid {
        let bounds = Aabb::cube(Vec3::zeros(), 2.0);
        let roi = Aabb::cube(Vec3::new(0.95, 0.95, 0.95), 0.06);
        let sensor = SensorModel { background_prior: 0.01, ..SensorModel::default() };
        SemanticGrid::new(&bounds, 0.05, &roi, sensor).unwrap()
    }

    fn randomize(grid: &mut SemanticGrid, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in 0..grid.len() {
            grid.set_voxel(idx, rng.random_range(0.12..0.6), SemanticClass::Background, rng.random_range(0.02..0.98));
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(0.5), 1.0);
        assert_eq!(entropy(0.0), 0.0);
        assert_eq!(entropy(1.0), 0.0);
        let p: f64 = 0.9;
        let oracle = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / 2f64.ln();
        assert!((entropy(0.9) - oracle).abs() < 1e-15);
        assert!((entropy(0.9) - 0.4690).abs() < 1e-4);
        assert_eq!(entropy_derivative(0.5), 0.0);
        assert!(entropy_derivative(0.0).is_finite());
        let h = 1e-6;
        let fd = (entropy(0.3 + h) - entropy(0.3 - h)) / (2.0 * h);
        assert!((fd - entropy_derivative(0.3)).abs() < 1e-8);
    }

    #[test]
    fn ray_grid_spans_field_of_view() {
        let spec = RaySpec::default();
        assert_eq!(spec.ray_count(), 576);
        let (x0, y0) = spec.ray_xy(0);
        let (x1, y1) = spec.ray_xy(spec.ray_count() - 1);
        assert!((x0 + x1).abs() < 1e-15 && (y0 + y1).abs() < 1e-15);
        assert!(x0 < 0.0 && y0 < 0.0);
        assert!(x1.abs() < spec.tan_half_x && x1 > 0.95 * spec.tan_half_x);
        assert_eq!(spec.sample_t(0), 0.10);
        assert!((spec.sample_t(127) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn all_background_geometric_series() {
        let grid = cube_grid();
        let spec = RaySpec::default();
        let vp = Viewpoint::new(Vec3::new(-0.1, 0.02, 0.01), Vec3::new(0.3, 0.0, 0.0));
        let eval = evaluate_gain(&grid, &vp, &spec).unwrap();
        let per_ray = entropy(0.01) * (2.0 - 2f64.powi(-127));
        for g in &eval.per_ray {
            assert!((g - per_ray).abs() <= 1e-9 * per_ray);
        }
        let total = per_ray * spec.ray_count() as f64;
        assert!((eval.gain - total).abs() <= 1e-9 * total);
        assert!((per_ray - 0.1616).abs() < 1e-4);
        assert!(eval.grad_camera.norm() < 1e-9 && eval.grad_target.norm() < 1e-9);
    }

    #[test]
    fn outside_grid_is_zero() {
        let grid = cube_grid();
        let vp = Viewpoint::new(Vec3::new(5.0, 5.0, 5.0), Vec3::new(6.0, 5.0, 5.0));
        let eval = evaluate_gain(&grid, &vp, &small_spec()).unwrap();
        assert_eq!(eval.gain, 0.0);
        assert_eq!(eval.gradient(), [0.0; 6]);
    }

    #[test]
    fn transmittance_is_non_increasing() {
        let mut grid = cube_grid();
        randomize(&mut grid, 5);
        let spec = small_spec();
        let vp = Viewpoint::new(Vec3::new(-0.2, 0.1, 0.0), Vec3::new(0.3, -0.1, 0.1));
        for ray in 0..spec.ray_count() {
            let prof = ray_profile(&grid, &vp, &spec, ray).unwrap();
            assert_eq!(prof[0].1, 1.0);
            assert!(prof.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].1 >= 0.0));
        }
    }

    #[test]
    fn gain_equals_sum_of_ray_gains() {
        let mut grid = cube_grid();
        randomize(&mut grid, 6);
        let spec = small_spec();
        let vp = Viewpoint::new(Vec3::new(-0.2, 0.1, 0.0), Vec3::new(0.3, -0.1, 0.1));
        let eval = evaluate_gain(&grid, &vp, &spec).unwrap();
        let mut sum = 0.0;
        for (ray, g) in eval.per_ray.iter().enumerate() {
            sum += g;
            // Dense re-evaluation from the profile.
            let prof = ray_profile(&grid, &vp, &spec, ray).unwrap();
            let oracle: f64 = prof.iter().map(|(_, t, h)| t * h).sum();
            assert!((oracle - g).abs() < 1e-12 * oracle.max(1.0));
        }
        assert_eq!(sum, eval.gain);
    }

    #[test]
    fn direction_jacobian_matches_finite_differences() {
        let vp = Viewpoint::new(Vec3::new(0.1, -0.3, 0.2), Vec3::new(0.5, 0.2, 0.4));
        let frame = RayFrame::new(&vp).unwrap();
        let (x, y) = (0.4, -0.25);
        let jd = frame.direction_jacobian(x, y);
        let h = 1e-6;
        for k in 0..3 {
            let mut tp = vp;
            let mut tm = vp;
            tp.target[k] += h;
            tm.target[k] -= h;
            let fd = (RayFrame::new(&tp).unwrap().direction(x, y) - RayFrame::new(&tm).unwrap().direction(x, y)) / (2.0 * h);
            assert!((fd - jd.column(k)).norm() < 1e-8, "column {k}: {fd:?} vs {:?}", jd.column(k));
            // Moving the camera is the mirror image.
            let mut cp = vp;
            let mut cm = vp;
            cp.camera[k] += h;
            cm.camera[k] -= h;
            let fd_c = (RayFrame::new(&cp).unwrap().direction(x, y) - RayFrame::new(&cm).unwrap().direction(x, y)) / (2.0 * h);
            assert!((fd_c + jd.column(k)).norm() < 1e-8);
        }
        // Directions agree with the look-at pose used by the camera.
        let pose = vp.pose().unwrap();
        let d = pose.rotation * Vec3::new(x, y, 1.0);
        assert!((frame.direction(x, y) - d.normalize()).norm() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut grid = cube_grid();
        randomize(&mut grid, 8);
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let c = Vec3::new(rng.random_range(-0.4..-0.2), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let t = Vec3::new(rng.random_range(0.1..0.3), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let check = check_gradient(&grid, &Viewpoint::new(c, t), &spec, 1e-5).unwrap();
            assert!(check.max_relative_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn symmetric_scene_has_no_lateral_gradient() {
        // Grid values depend on x only, so any lateral move of the camera
        // along y leaves the gain unchanged to first order when the view is
        // symmetric about the optical axis.
        let mut grid = cube_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nx = grid.dims()[0];
        let column: Vec<(f64, f64)> = (0..nx).map(|_| (rng.random_range(0.12..0.6), rng.random_range(0.1..0.9))).collect();
        for idx in 0..grid.len() {
            let (o, s) = column[grid.coords(idx)[0]];
            grid.set_voxel(idx, o, SemanticClass::Background, s);
        }
        let vp = Viewpoint::new(Vec3::new(-0.3, 0.0, 0.0), Vec3::new(0.3, 0.0, 0.0));
        let eval = evaluate_gain(&grid, &vp, &small_spec()).unwrap();
        assert!(eval.grad_camera.y.abs() < 1e-8 && eval.grad_camera.z.abs() < 1e-8, "{:?}", eval.grad_camera);
        assert!(eval.grad_target.y.abs() < 1e-8 && eval.grad_target.z.abs() < 1e-8);
    }

    #[test]
    fn occluding_wall_lowers_gain_and_gradient_points_around_it() {
        // Unknown ROI block at x in [0.2, 0.3]; nearly transparent free space elsewhere; a wall
        // covering y < 0.02 between camera and ROI.
        let bounds = Aabb::cube(Vec3::zeros(), 1.2);
        let roi = Aabb::new(Vec3::new(0.2, -0.05, -0.05), Vec3::new(0.3, 0.05, 0.05)).unwrap();
        let mut grid = SemanticGrid::new(&bounds, 0.01, &roi, SensorModel::default()).unwrap();
        for idx in 0..grid.len() {
            let r = grid.reading(idx);
            grid.set_voxel(idx, if r.roi { 0.12 } else { 0.01 }, r.class, r.p_s);
        }
        let clear = grid.clone();
        for idx in 0..grid.len() {
            let c = grid.voxel_center(idx);
            if (0.0..0.04).contains(&c.x) && c.y < 0.02 && c.z.abs() < 0.2 {
                grid.set_voxel(idx, 0.97, SemanticClass::Background, BACKGROUND_PRIOR);
            }
        }
        // Dense enough that the ROI covers a few hundred rays.
        let spec = RaySpec { rays_x: 128, rays_y: 72, ..RaySpec::default() };
        let vp = Viewpoint::new(Vec3::new(-0.25, 0.0, 0.0), Vec3::new(0.25, 0.0, 0.0));
        let open = evaluate_gain(&clear, &vp, &spec).unwrap();
        let blocked = evaluate_gain(&grid, &vp, &spec).unwrap();
        assert!(open.gain > blocked.gain);
        assert!(blocked.grad_camera.y > 0.0, "{:?}", blocked.grad_camera);
        let moved = |dy: f64| evaluate_gain(&grid, &Viewpoint::new(vp.camera + Vec3::new(0.0, dy, 0.0), vp.target), &spec).unwrap().gain;
        assert!(moved(0.05) > moved(-0.05));
    }

    #[test]
    fn unknown_roi_beats_background() {
        let bounds = Aabb::cube(Vec3::zeros(), 1.2);
        let roi = Aabb::cube(Vec3::new(0.2, 0.0, 0.0), 0.06);
        let mut grid = SemanticGrid::new(&bounds, 0.01, &roi, SensorModel::default()).unwrap();
        let background = evaluate_gain(&grid, &Viewpoint::new(Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)), &small_spec()).unwrap();
        for idx in 0..grid.len() {
            let r = grid.reading(idx);
            grid.set_voxel(idx, 0.12, r.class, r.p_s);
        }
        let roi_view = evaluate_gain(&grid, &Viewpoint::new(Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)), &small_spec()).unwrap();
        assert!(roi_view.gain > background.gain);
    }

    #[test]
    fn gain_exports() {
        let grid = cube_grid();
        let spec = small_spec();
        let eval = evaluate_gain(&grid, &Viewpoint::new(Vec3::zeros(), Vec3::x()), &spec).unwrap();
        let mut csv = Vec::new();
        write_gain_csv(&eval, &spec, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), spec.rays_y);
        assert_eq!(text.lines().next().unwrap().split(',').count(), spec.rays_x);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gain.png");
        write_gain_png(&eval, &spec, 4, &path).unwrap();
        assert!(path.exists());
    }
}
