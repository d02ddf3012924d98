//! Ray generation, scene bounds, and sample placement along rays.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::Rng;

/// Pinhole camera: pixel-unit intrinsics plus a rigid camera-to-world pose.
///
/// Convention: the camera looks along its local `-z`, with `+y` up. Pixel
/// `(u, v)` marches through the pixel center, `u` being the column index.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4×4 rigid transform taking camera coordinates to world.
    pub camera_to_world: [[f64; 4]; 4],
    /// Path of the image backing this frame (left empty for synthetic poses).
    pub image_path: String,
}

impl CameraFrame {
    /// Check intrinsics and pose invariants (orthonormal rotation block).
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let r = &self.camera_to_world;
        for i in 0..3 {
            for j in 0..3 {
                // (RᵀR)ᵢⱼ should be the identity.
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if math::abs(dot - expect) > 1e-6 {
                    return Err(CoreError::InvalidData(format!(
                        "camera rotation block is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self) -> [f64; 3] {
        [
            self.camera_to_world[0][3],
            self.camera_to_world[1][3],
            self.camera_to_world[2][3],
        ]
    }

    /// Rotate a camera-space vector into world space.
    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.camera_to_world;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// World-space direction through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let cam = [
            (u + 0.5 - self.cx) / self.fx,
            -(v + 0.5 - self.cy) / self.fy,
            -1.0,
        ];
        let n = math::sqrt(cam[0] * cam[0] + cam[1] * cam[1] + cam[2] * cam[2]);
        self.rotate([cam[0] / n, cam[1] / n, cam[2] / n])
    }
}

/// Axis-aligned bounds restricting ray sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a] < max[a]) {
                return Err(CoreError::EmptySceneBox);
            }
        }
        Ok(SceneBox { min, max })
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// A batch of rays with their pixel provenance and box-clip interval.
#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    /// `(u, v)` pixel indices the rays march through.
    pub pixels: Vec<(u32, u32)>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Generate rays through the centers of the requested pixels.
///
/// `near`/`far` are initialized to `[0, +inf)`; [`clip_to_box`] tightens them.
pub fn generate_rays(camera: &CameraFrame, pixels: &[(u32, u32)]) -> Result<RayBatch> {
    let origin = camera.position();
    let mut batch = RayBatch::default();
    batch.origins.reserve(pixels.len());
    batch.directions.reserve(pixels.len());
    for &(u, v) in pixels {
        if u as usize >= camera.width || v as usize >= camera.height {
            return Err(CoreError::InvalidArgument(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                camera.width, camera.height
            )));
        }
        batch.origins.push(origin);
        batch
            .directions
            .push(camera.pixel_direction(u as f64, v as f64));
        batch.pixels.push((u, v));
        batch.near.push(0.0);
        batch.far.push(f64::INFINITY);
    }
    Ok(batch)
}

/// Slab-method ray/box intersection.
///
/// Returns `Some((near, far))` with `near` clamped to 0 when the origin is
/// inside the box, or `None` on a miss.
pub fn ray_box_clip(origin: [f64; 3], dir: [f64; 3], sbox: &SceneBox) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < sbox.min[a] || origin[a] > sbox.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut ta = (sbox.min[a] - origin[a]) * inv;
        let mut tb = (sbox.max[a] - origin[a]) * inv;
        if ta > tb {
            core::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t1 < t0 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Clip every ray in the batch against the scene box, dropping misses.
pub fn clip_to_box(batch: &mut RayBatch, sbox: &SceneBox) {
    let mut keep = 0usize;
    for i in 0..batch.len() {
        if let Some((near, far)) = ray_box_clip(batch.origins[i], batch.directions[i], sbox) {
            if far > near {
                batch.origins[keep] = batch.origins[i];
                batch.directions[keep] = batch.directions[i];
                batch.pixels[keep] = batch.pixels[i];
                batch.near[keep] = near;
                batch.far[keep] = far;
                keep += 1;
            }
        }
    }
    batch.origins.truncate(keep);
    batch.directions.truncate(keep);
    batch.pixels.truncate(keep);
    batch.near.truncate(keep);
    batch.far.truncate(keep);
}

/// Axis-aligned bounds of one camera's frustum between two depths.
///
/// Corners are taken where the rays through the four image corners reach
/// depth `d` along the camera's `-z` axis.
pub fn camera_frustum_aabb(camera: &CameraFrame, depth_range: [f64; 2]) -> SceneBox {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let origin = camera.position();
    for &(u, v) in &[
        (0.0, 0.0),
        (camera.width as f64, 0.0),
        (0.0, camera.height as f64),
        (camera.width as f64, camera.height as f64),
    ] {
        for &d in &depth_range {
            // Corner of the image plane at depth d (camera looks along -z).
            let cam = [
                d * (u - camera.cx) / camera.fx,
                -d * (v - camera.cy) / camera.fy,
                -d,
            ];
            let w = camera.rotate(cam);
            for a in 0..3 {
                let p = origin[a] + w[a];
                lo[a] = lo[a].min(p);
                hi[a] = hi[a].max(p);
            }
        }
    }
    SceneBox { min: lo, max: hi }
}

/// Intersect all cameras' frustum bounds into one scene box.
///
/// Each camera contributes the axis-aligned extent of its view frustum
/// between `depth_range`; the box is their componentwise intersection (the
/// axis-aligned region every camera can see parts of).
pub fn compute_scene_box(cameras: &[CameraFrame], depth_range: [f64; 2]) -> Result<SceneBox> {
    if cameras.len() < 2 {
        return Err(CoreError::InvalidArgument(format!(
            "scene box needs at least 2 cameras, got {}",
            cameras.len()
        )));
    }
    if !(depth_range[0] > 0.0 && depth_range[0] < depth_range[1]) {
        return Err(CoreError::InvalidArgument(format!(
            "depth range must satisfy 0 < near < far, got {depth_range:?}"
        )));
    }
    let mut lo = [f64::NEG_INFINITY; 3];
    let mut hi = [f64::INFINITY; 3];
    for cam in cameras {
        let b = camera_frustum_aabb(cam, depth_range);
        for a in 0..3 {
            lo[a] = lo[a].max(b.min[a]);
            hi[a] = hi[a].min(b.max[a]);
        }
    }
    SceneBox::new(lo, hi).map_err(|_| CoreError::EmptySceneBox)
}

/// Bin edges, per-bin sample positions, and widths for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `k+1` strictly increasing edges spanning `[near, far]`.
    pub edges: Vec<f64>,
    /// One position inside each bin (the midpoint when unjittered).
    pub points: Vec<f64>,
    /// Bin widths `edges[i+1] - edges[i]`.
    pub deltas: Vec<f64>,
}

impl SampleSet {
    fn from_edges_with_points(edges: Vec<f64>, points: Vec<f64>) -> Self {
        let deltas = edges.windows(2).map(|w| w[1] - w[0]).collect();
        SampleSet {
            edges,
            points,
            deltas,
        }
    }

    fn from_edges_midpoints(edges: Vec<f64>) -> Self {
        let points = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self::from_edges_with_points(edges, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Uniform bins over `[near, far]` with one sample per bin.
///
/// With `jitter`, the sample is uniform within its bin; otherwise it is the
/// bin midpoint. Bin edges are uniform either way.
pub fn stratified_samples(
    near: f64,
    far: f64,
    k: usize,
    jitter: bool,
    rng: &mut Rng,
) -> Result<SampleSet> {
    if !(near < far) || k == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "stratified_samples: need near < far and k >= 1, got [{near}, {far}], k={k}"
        )));
    }
    let width = (far - near) / k as f64;
    let edges: Vec<f64> = (0..=k)
        .map(|i| {
            if i == k {
                far
            } else {
                near + i as f64 * width
            }
        })
        .collect();
    let set = if jitter {
        let points = (0..k)
            .map(|i| edges[i] + rng.gen::<f64>() * (edges[i + 1] - edges[i]))
            .collect();
        SampleSet::from_edges_with_points(edges, points)
    } else {
        SampleSet::from_edges_midpoints(edges)
    };
    Ok(set)
}

/// Inverse-transform resampling from a piecewise-constant histogram.
///
/// Maps `k+1` stratified quantiles through the histogram's CDF and returns
/// the resulting strictly increasing edges as a new [`SampleSet`] (midpoint
/// sample positions). With `jitter` the quantiles are uniform within their
/// strata; without it they sit at stratum centers and the rng is untouched.
/// The boolean is `true` when all weights were zero and the fallback uniform
/// distribution was used.
pub fn pdf_resample(
    prop_edges: &[f64],
    prop_weights: &[f64],
    k: usize,
    jitter: bool,
    rng: &mut Rng,
) -> Result<(SampleSet, bool)> {
    if prop_edges.len() != prop_weights.len() + 1 || prop_weights.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "pdf_resample: {} edges for {} weights",
            prop_edges.len(),
            prop_weights.len()
        )));
    }
    if k == 0 {
        return Err(CoreError::InvalidArgument("pdf_resample: k >= 1".into()));
    }
    if let Some(&w) = prop_weights.iter().find(|&&w| w < 0.0 || !w.is_finite()) {
        return Err(CoreError::InvalidArgument(format!(
            "pdf_resample: weights must be finite and >= 0, got {w}"
        )));
    }
    let near = prop_edges[0];
    let far = *prop_edges.last().expect("non-empty");
    let total: f64 = prop_weights.iter().sum();
    let fallback = total <= 0.0;

    // CDF over the histogram bins (uniform when degenerate).
    let n = prop_weights.len();
    let mut cdf = alloc::vec![0.0; n + 1];
    for i in 0..n {
        let w = if fallback {
            1.0 / n as f64
        } else {
            prop_weights[i] / total
        };
        cdf[i + 1] = cdf[i] + w;
    }
    cdf[n] = 1.0;

    let mut edges = alloc::vec![0.0; k + 1];
    let mut bin = 0usize;
    for (j, e) in edges.iter_mut().enumerate() {
        // Stratified quantiles are non-decreasing, so the CDF scan resumes
        // where it left off.
        let u = if jitter { rng.gen::<f64>() } else { 0.5 };
        let q = (j as f64 + u) / (k + 1) as f64;
        while bin + 1 < n && cdf[bin + 1] < q {
            bin += 1;
        }
        let lo = cdf[bin];
        let hi = cdf[bin + 1];
        let frac = if hi > lo { (q - lo) / (hi - lo) } else { 0.0 };
        *e = prop_edges[bin] + frac * (prop_edges[bin + 1] - prop_edges[bin]);
    }
    // Enforce strict monotonicity inside [near, far].
    let eps = (far - near) * 1e-12;
    edges[0] = edges[0].max(near);
    for j in 1..=k {
        if edges[j] <= edges[j - 1] {
            edges[j] = edges[j - 1] + eps;
        }
    }
    if edges[k] > far {
        // Walk back any overflow caused by the epsilon pushes.
        edges[k] = far;
        for j in (1..=k).rev() {
            if edges[j - 1] >= edges[j] {
                edges[j - 1] = edges[j] - eps;
            } else {
                break;
            }
        }
    }
    Ok((SampleSet::from_edges_midpoints(edges), fallback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use alloc::vec;

    pub(crate) fn identity_camera(w: usize, h: usize) -> CameraFrame {
        CameraFrame {
            fx: w as f64,
            fy: w as f64,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            camera_to_world: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            image_path: String::new(),
        }
    }

    #[test]
    fn principal_point_ray_looks_down_negative_z() {
        let cam = identity_camera(64, 48);
        // Pixel center (cx-0.5, cy-0.5) + 0.5 lands exactly on the principal point.
        let d = cam.pixel_direction(cam.cx - 0.5, cam.cy - 0.5);
        assert!((d[0]).abs() < 1e-15 && (d[1]).abs() < 1e-15);
        assert!((d[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn translation_moves_origins_not_directions() {
        let mut cam = identity_camera(64, 48);
        let rays_a = generate_rays(&cam, &[(3, 7), (60, 40)]).unwrap();
        cam.camera_to_world[0][3] = 5.0;
        cam.camera_to_world[1][3] = -2.0;
        cam.camera_to_world[2][3] = 1.0;
        let rays_b = generate_rays(&cam, &[(3, 7), (60, 40)]).unwrap();
        for i in 0..2 {
            assert_eq!(rays_b.origins[i], [5.0, -2.0, 1.0]);
            for a in 0..3 {
                assert!((rays_a.directions[i][a] - rays_b.directions[i][a]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ray_directions_are_unit() {
        let cam = identity_camera(32, 32);
        let pixels: Vec<(u32, u32)> = (0..32).map(|i| (i, (i * 7) % 32)).collect();
        let rays = generate_rays(&cam, &pixels).unwrap();
        for d in &rays.directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_clip_frozen_example() {
        let sbox = SceneBox::new([0.0; 3], [1.0; 3]).unwrap();
        let hit = ray_box_clip([-2.0, 0.5, 0.5], [1.0, 0.0, 0.0], &sbox).unwrap();
        assert_eq!(hit, (2.0, 3.0));
    }

    #[test]
    fn slab_clip_miss_and_inside() {
        let sbox = SceneBox::new([0.0; 3], [1.0; 3]).unwrap();
        // Parallel to a face, outside the box.
        assert!(ray_box_clip([-1.0, 2.0, 0.5], [1.0, 0.0, 0.0], &sbox).is_none());
        // Origin inside: near clamps to 0.
        let (near, far) = ray_box_clip([0.5, 0.5, 0.5], [0.0, 0.0, -1.0], &sbox).unwrap();
        assert_eq!(near, 0.0);
        assert!((far - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_camera_box_is_its_frustum_aabb() {
        let cam = identity_camera(64, 64);
        let b = camera_frustum_aabb(&cam, [1.0, 2.0]);
        // Image spans ±0.5 in normalized units; at depth 2 the extent is ±1.
        assert!((b.min[2] + 2.0).abs() < 1e-12 && (b.max[2] + 1.0).abs() < 1e-12);
        assert!((b.min[0] + 1.0).abs() < 1e-12 && (b.max[0] - 1.0).abs() < 1e-12);
        assert!((b.min[1] + 1.0).abs() < 1e-12 && (b.max[1] - 1.0).abs() < 1e-12);
    }

    pub(crate) fn ring_camera(angle: f64, radius: f64, w: usize) -> CameraFrame {
        // Positioned on a circle in the xz plane, looking at the origin, +y up.
        let pos = [radius * math::cos(angle), 0.0, radius * math::sin(angle)];
        let fwd = {
            let n = math::sqrt(pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]);
            [-pos[0] / n, -pos[1] / n, -pos[2] / n]
        };
        let up = [0.0, 1.0, 0.0];
        let right = [
            fwd[1] * up[2] - fwd[2] * up[1],
            fwd[2] * up[0] - fwd[0] * up[2],
            fwd[0] * up[1] - fwd[1] * up[0],
        ];
        let rn = math::sqrt(right[0] * right[0] + right[1] * right[1] + right[2] * right[2]);
        let right = [right[0] / rn, right[1] / rn, right[2] / rn];
        let cam_up = [
            right[1] * fwd[2] - right[2] * fwd[1],
            right[2] * fwd[0] - right[0] * fwd[2],
            right[0] * fwd[1] - right[1] * fwd[0],
        ];
        CameraFrame {
            fx: w as f64,
            fy: w as f64,
            cx: w as f64 / 2.0,
            cy: w as f64 / 2.0,
            width: w,
            height: w,
            camera_to_world: [
                [right[0], cam_up[0], -fwd[0], pos[0]],
                [right[1], cam_up[1], -fwd[1], pos[1]],
                [right[2], cam_up[2], -fwd[2], pos[2]],
                [0.0, 0.0, 0.0, 1.0],
            ],
            image_path: String::new(),
        }
    }

    #[test]
    fn ring_scene_box_contains_origin() {
        let cams: Vec<CameraFrame> = (0..12)
            .map(|i| ring_camera(i as f64 * core::f64::consts::TAU / 12.0, 4.0, 48))
            .collect();
        for c in &cams {
            c.validate().unwrap();
        }
        let sbox = compute_scene_box(&cams, [2.0, 6.0]).unwrap();
        assert!(sbox.contains([0.0, 0.0, 0.0]), "{sbox:?}");
        // Every camera must see the box: a ray at the image center hits it.
        for c in &cams {
            let d = c.pixel_direction(c.cx - 0.5, c.cy - 0.5);
            assert!(ray_box_clip(c.position(), d, &sbox).is_some());
        }
    }

    #[test]
    fn scene_box_monotone_in_far_depth() {
        let cams: Vec<CameraFrame> = (0..8)
            .map(|i| ring_camera(i as f64 * core::f64::consts::TAU / 8.0, 4.0, 48))
            .collect();
        let small = compute_scene_box(&cams, [2.0, 5.0]).unwrap();
        let large = compute_scene_box(&cams, [2.0, 7.0]).unwrap();
        for a in 0..3 {
            assert!(large.min[a] <= small.min[a] + 1e-12);
            assert!(large.max[a] >= small.max[a] - 1e-12);
        }
    }

    #[test]
    fn scene_box_invariant_under_permutation() {
        let cams: Vec<CameraFrame> = (0..6)
            .map(|i| ring_camera(i as f64 * core::f64::consts::TAU / 6.0, 3.0, 32))
            .collect();
        let mut shuffled = cams.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 5);
        assert_eq!(
            compute_scene_box(&cams, [1.0, 5.0]).unwrap(),
            compute_scene_box(&shuffled, [1.0, 5.0]).unwrap()
        );
    }

    #[test]
    fn scene_box_requires_two_cameras_and_overlap() {
        let cam = identity_camera(32, 32);
        assert!(compute_scene_box(&[cam.clone()], [1.0, 2.0]).is_err());
        // Two cameras back to back see disjoint regions.
        let mut away = identity_camera(32, 32);
        // Rotate 180° about y: looks along +z from a distant offset.
        away.camera_to_world = [
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 100.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let err = compute_scene_box(&[cam, away], [1.0, 2.0]).unwrap_err();
        assert_eq!(err, CoreError::EmptySceneBox);
    }

    #[test]
    fn stratified_edges_without_jitter() {
        let mut rng = stream(0, 0, Purpose::Stratified);
        let s = stratified_samples(0.0, 1.0, 2, false, &mut rng).unwrap();
        assert_eq!(s.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.points, vec![0.25, 0.75]);
        assert_eq!(s.deltas, vec![0.5, 0.5]);
    }

    #[test]
    fn jittered_samples_stay_in_their_bins() {
        let mut rng = stream(1, 0, Purpose::Stratified);
        for _ in 0..100 {
            let s = stratified_samples(2.0, 3.0, 10, true, &mut rng).unwrap();
            for i in 0..10 {
                assert!(s.points[i] >= s.edges[i] && s.points[i] < s.edges[i + 1]);
            }
        }
    }

    #[test]
    fn jittered_sample_means_converge_to_bin_centers() {
        let mut rng = stream(2, 0, Purpose::Stratified);
        let k = 4;
        let n = 100_000;
        let mut sums = vec![0.0; k];
        for _ in 0..n {
            let s = stratified_samples(0.0, 1.0, k, true, &mut rng).unwrap();
            for i in 0..k {
                sums[i] += s.points[i];
            }
        }
        for i in 0..k {
            let mean = sums[i] / n as f64;
            let center = (i as f64 + 0.5) / k as f64;
            assert!(
                (mean - center).abs() < 1e-2,
                "bin {i}: mean {mean} vs center {center}"
            );
        }
    }

    #[test]
    fn pdf_resample_single_positive_bin() {
        let mut rng = stream(3, 0, Purpose::Resample0);
        let (s, fallback) =
            pdf_resample(&[0.0, 1.0, 2.0, 3.0], &[0.0, 5.0, 0.0], 16, true, &mut rng).unwrap();
        assert!(!fallback);
        for &p in &s.points {
            assert!((1.0..=2.0).contains(&p), "sample {p} escaped the hot bin");
        }
    }

    #[test]
    fn pdf_resample_uniform_weights_match_stratified() {
        // With uniform weights the CDF is the identity, so resampled edge j
        // equals its stratified quantile and must land in stratum j.
        let mut rng = stream(4, 0, Purpose::Resample0);
        let k = 10;
        for _ in 0..1000 {
            let (s, fallback) = pdf_resample(&[0.0, 0.5, 1.0], &[1.0, 1.0], k, true, &mut rng).unwrap();
            assert!(!fallback);
            for (j, &e) in s.edges.iter().enumerate() {
                let lo = j as f64 / (k + 1) as f64;
                let hi = (j + 1) as f64 / (k + 1) as f64;
                assert!(e >= lo && e < hi + 1e-12, "edge {j} = {e} outside stratum");
            }
        }
    }

    #[test]
    fn pdf_resample_respects_one_to_three_weighting() {
        let mut rng = stream(5, 0, Purpose::Resample1);
        let mut low = 0usize;
        let mut total = 0usize;
        for _ in 0..1000 {
            let (s, _) = pdf_resample(&[0.0, 0.5, 1.0], &[1.0, 3.0], 10, true, &mut rng).unwrap();
            for &p in &s.points {
                if p < 0.5 {
                    low += 1;
                }
                total += 1;
            }
        }
        let frac = low as f64 / total as f64;
        assert!((frac - 0.25).abs() < 0.02, "low-bin fraction {frac}");
    }

    #[test]
    fn pdf_resample_zero_weights_fall_back_to_uniform() {
        let mut rng = stream(6, 0, Purpose::Resample0);
        let (s, fallback) = pdf_resample(&[1.0, 2.0, 3.0], &[0.0, 0.0], 8, true, &mut rng).unwrap();
        assert!(fallback);
        assert!(s.edges.iter().all(|&e| (1.0..=3.0).contains(&e)));
    }

    #[test]
    fn pdf_resample_without_jitter_is_deterministic_and_leaves_rng_alone() {
        let mut rng = stream(8, 0, Purpose::Resample0);
        let edges = [0.0, 0.5, 1.0];
        let weights = [1.0, 2.0];
        let (a, _) = pdf_resample(&edges, &weights, 6, false, &mut rng).unwrap();
        let (b, _) = pdf_resample(&edges, &weights, 6, false, &mut rng).unwrap();
        assert_eq!(a, b);
        // No draws were consumed, so a fresh stream agrees too.
        let mut fresh = stream(999, 7, Purpose::Misc);
        let (c, _) = pdf_resample(&edges, &weights, 6, false, &mut fresh).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn pdf_resample_edges_strictly_increase() {
        let mut rng = stream(7, 0, Purpose::Resample1);
        for trial in 0..200 {
            use rand::Rng as _;
            let n = rng.gen_range(1..12);
            let edges: Vec<f64> = (0..=n).map(|i| i as f64 * 0.37 + 1.0).collect();
            let weights: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        0.0
                    } else {
                        rng.gen_range(0.0..2.0)
                    }
                })
                .collect();
            let (s, _) = pdf_resample(&edges, &weights, 16, true, &mut rng).unwrap();
            for w in s.edges.windows(2) {
                assert!(w[1] > w[0], "trial {trial}: non-increasing edges");
            }
            assert!(s.edges[0] >= edges[0] - 1e-12);
            assert!(*s.edges.last().unwrap() <= *edges.last().unwrap() + 1e-12);
        }
    }
}
