//! Synthetic scenes with an analytic rendering oracle: spheres carrying
//! band-limited Gaussian spectra, rendered by dense fixed-step ray marching
//! through the exact compositing formula. Ground truth by construction.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use hyperfield_core::math;
use hyperfield_core::cube::HyperCube;
use hyperfield_core::sampling::{ray_box_clip, CameraFrame, SceneBox};
use serde::{Deserialize, Serialize};

use crate::dataio::{save_poses, write_cube};
use crate::error::{AppError, Result};

/// Number of fixed march steps used by the analytic oracle.
pub const ORACLE_MARCH_STEPS: usize = 512;

/// One Gaussian bump of a spectrum.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center_nm: f64,
    pub width_nm: f64,
}

/// A band-limited spectrum: offset plus a sum of Gaussians, clamped to
/// [0, 1] on evaluation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Spectrum {
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<GaussianTerm>,
}

impl Spectrum {
    pub fn constant(v: f64) -> Self {
        Spectrum {
            offset: v,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, lambda_nm: f64) -> f64 {
        let mut v = self.offset;
        for t in &self.terms {
            let d = (lambda_nm - t.center_nm) / t.width_nm;
            v += t.amplitude * math::exp(-0.5 * d * d);
        }
        v.clamp(0.0, 1.0)
    }
}

/// A homogeneous sphere: constant radiance spectrum inside, density
/// `density_scale · density(λ)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub radiance: Spectrum,
    pub density: Spectrum,
    pub density_scale: f64,
}

/// A full synthetic scene: spheres over a constant background intensity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticScene {
    pub spheres: Vec<Sphere>,
    pub background: f64,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(AppError::config(format!("sphere {i} has radius {}", s.radius)));
            }
            if !(s.density_scale >= 0.0) {
                return Err(AppError::config(format!(
                    "sphere {i} has negative density scale"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(AppError::config(format!(
                "background {} outside [0, 1]",
                self.background
            )));
        }
        Ok(())
    }

    /// Axis-aligned bounds of the spheres with a small margin; a unit box
    /// around the origin when the scene is empty.
    pub fn bounds(&self) -> SceneBox {
        if self.spheres.is_empty() {
            return SceneBox::new([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]).unwrap();
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for s in &self.spheres {
            for a in 0..3 {
                min[a] = min[a].min(s.center[a] - s.radius);
                max[a] = max[a].max(s.center[a] + s.radius);
            }
        }
        let margin = 0.05 * (max[0] - min[0]).max(max[1] - min[1]).max(max[2] - min[2]).max(1.0);
        for a in 0..3 {
            min[a] -= margin;
            max[a] += margin;
        }
        SceneBox::new(min, max).unwrap()
    }

    /// Density and density-weighted radiance at a point. Overlapping spheres
    /// add densities; radiance is their density-weighted mean.
    fn sample(&self, p: [f64; 3], lambda_nm: f64) -> (f64, f64) {
        let mut sigma = 0.0;
        let mut weighted = 0.0;
        for s in &self.spheres {
            let dx = p[0] - s.center[0];
            let dy = p[1] - s.center[1];
            let dz = p[2] - s.center[2];
            if dx * dx + dy * dy + dz * dz <= s.radius * s.radius {
                let d = s.density_scale * s.density.eval(lambda_nm);
                sigma += d;
                weighted += d * s.radiance.eval(lambda_nm);
            }
        }
        if sigma > 0.0 {
            (sigma, weighted / sigma)
        } else {
            (0.0, 0.0)
        }
    }
}

/// A camera at `position` looking at `target` with +y roughly up, square
/// pixels, and the given horizontal field of view.
pub fn look_at_camera(
    position: [f64; 3],
    target: [f64; 3],
    width: usize,
    height: usize,
    fov_deg: f64,
) -> CameraFrame {
    let fwd = {
        let d = [
            target[0] - position[0],
            target[1] - position[1],
            target[2] - position[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    };
    let up = [0.0, 1.0, 0.0];
    let right = [
        fwd[1] * up[2] - fwd[2] * up[1],
        fwd[2] * up[0] - fwd[0] * up[2],
        fwd[0] * up[1] - fwd[1] * up[0],
    ];
    let rn = (right[0] * right[0] + right[1] * right[1] + right[2] * right[2]).sqrt();
    let right = [right[0] / rn, right[1] / rn, right[2] / rn];
    let cam_up = [
        right[1] * fwd[2] - right[2] * fwd[1],
        right[2] * fwd[0] - right[0] * fwd[2],
        right[0] * fwd[1] - right[1] * fwd[0],
    ];
    let focal = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
    CameraFrame {
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        camera_to_world: [
            [right[0], cam_up[0], -fwd[0], position[0]],
            [right[1], cam_up[1], -fwd[1], position[1]],
            [right[2], cam_up[2], -fwd[2], position[2]],
            [0.0, 0.0, 0.0, 1.0],
        ],
        image_path: String::new(),
    }
}

/// Ring of cameras around the origin in the xz plane at a fixed elevation,
/// all looking at the origin.
pub fn ring_cameras(
    count: usize,
    radius: f64,
    elevation: f64,
    width: usize,
    height: usize,
    fov_deg: f64,
) -> Vec<CameraFrame> {
    (0..count)
        .map(|i| {
            let angle = i as f64 * TAU / count as f64;
            let mut cam = look_at_camera(
                [radius * angle.cos(), elevation, radius * angle.sin()],
                [0.0, 0.0, 0.0],
                width,
                height,
                fov_deg,
            );
            cam.image_path = format!("frames/frame_{i:03}.hsc");
            cam
        })
        .collect()
}

/// Render one camera analytically: clip each pixel ray against the scene
/// bounds and march `steps` uniform segments through the exact compositing
/// formula.
pub fn render_scene_analytic(
    scene: &SyntheticScene,
    camera: &CameraFrame,
    wavelengths: &[f64],
    steps: usize,
) -> Result<HyperCube> {
    scene.validate()?;
    if wavelengths.is_empty() || steps == 0 {
        return Err(AppError::config(
            "analytic render needs wavelengths and at least one march step",
        ));
    }
    let bounds = scene.bounds();
    let n = wavelengths.len();
    let mut data = vec![0.0; camera.width * camera.height * n];
    let origin = camera.position();
    for v in 0..camera.height {
        for u in 0..camera.width {
            let pixel = &mut data[(v * camera.width + u) * n..(v * camera.width + u + 1) * n];
            let dir = camera.pixel_direction(u as f64, v as f64);
            match ray_box_clip(origin, dir, &bounds) {
                None => pixel.fill(scene.background),
                Some((near, far)) => {
                    let delta = (far - near) / steps as f64;
                    for (li, &lambda) in wavelengths.iter().enumerate() {
                        let mut transmittance = 1.0;
                        let mut acc = 0.0;
                        for s in 0..steps {
                            let t = near + (s as f64 + 0.5) * delta;
                            let p = [
                                origin[0] + t * dir[0],
                                origin[1] + t * dir[1],
                                origin[2] + t * dir[2],
                            ];
                            let (sigma, radiance) = scene.sample(p, lambda);
                            if sigma > 0.0 {
                                let alpha = 1.0 - math::exp(-sigma * delta);
                                acc += transmittance * alpha * radiance;
                                transmittance *= 1.0 - alpha;
                                if transmittance < 1e-12 {
                                    break;
                                }
                            }
                        }
                        pixel[li] = acc + transmittance * scene.background;
                    }
                }
            }
        }
    }
    HyperCube::new(camera.width, camera.height, wavelengths.to_vec(), data).map_err(AppError::from)
}

/// Generate a dataset: render every camera analytically, write the HSC1
/// frames, the pose file, and the ground-truth scene description.
pub fn generate_synthetic_dataset(
    scene: &SyntheticScene,
    cameras: &[CameraFrame],
    wavelengths: &[f64],
    steps: usize,
    out_dir: &Path,
) -> Result<()> {
    if cameras.is_empty() {
        return Err(AppError::config("dataset needs at least one camera"));
    }
    fs::create_dir_all(out_dir.join("frames"))?;
    for camera in cameras {
        let cube = render_scene_analytic(scene, camera, wavelengths, steps)?;
        write_cube(&cube, &out_dir.join(&camera.image_path))?;
    }
    save_poses(cameras, &out_dir.join("poses.json"))?;
    fs::write(
        out_dir.join("scene.json"),
        serde_json::to_string_pretty(scene).unwrap(),
    )?;
    Ok(())
}

/// Evenly spaced wavelength axis over [lo, hi].
pub fn wavelength_axis(n: usize, lo_nm: f64, hi_nm: f64) -> Vec<f64> {
    (0..n)
        .map(|i| lo_nm + (hi_nm - lo_nm) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// The stock three-sphere scene: λ-invariant densities (so every density
/// variant can fit it) and smooth, distinct radiance spectra per sphere.
pub fn three_sphere_scene() -> SyntheticScene {
    SyntheticScene {
        spheres: vec![
            Sphere {
                center: [0.45, 0.0, 0.1],
                radius: 0.42,
                radiance: Spectrum {
                    offset: 0.05,
                    terms: vec![GaussianTerm {
                        amplitude: 0.85,
                        center_nm: 460.0,
                        width_nm: 55.0,
                    }],
                },
                density: Spectrum::constant(1.0),
                density_scale: 24.0,
            },
            Sphere {
                center: [-0.5, 0.12, 0.3],
                radius: 0.36,
                radiance: Spectrum {
                    offset: 0.1,
                    terms: vec![GaussianTerm {
                        amplitude: 0.8,
                        center_nm: 560.0,
                        width_nm: 70.0,
                    }],
                },
                density: Spectrum::constant(1.0),
                density_scale: 30.0,
            },
            Sphere {
                center: [-0.05, -0.18, -0.55],
                radius: 0.5,
                radiance: Spectrum {
                    offset: 0.02,
                    terms: vec![
                        GaussianTerm {
                            amplitude: 0.75,
                            center_nm: 640.0,
                            width_nm: 60.0,
                        },
                        GaussianTerm {
                            amplitude: 0.35,
                            center_nm: 480.0,
                            width_nm: 80.0,
                        },
                    ],
                },
                density: Spectrum::constant(1.0),
                density_scale: 20.0,
            },
        ],
        background: 1.0,
    }
}
