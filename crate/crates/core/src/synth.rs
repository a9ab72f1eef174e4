//! Procedural multi-view scene generation with exact ground truth.
//!
//! Scenes are collections of textured planes; textures are sums of smooth
//! sinusoidal gratings plus low-frequency color ramps, with amplitudes
//! rescaled against a curvature budget so that bilinear resampling of a
//! rendered frame stays within the photometric-consistency bound used by the
//! warp oracles. Rendering is an analytic ray/plane intersection per pixel,
//! so depth maps are exact.
//!
//! Scenes are desk scale: presets keep ground-truth depth near 0.2 scene
//! units, matching the depth that the sigmoid-disparity parametrization
//! yields at its neutral initialization.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_pose, Intrinsics, Mat3, PoseParams};
use crate::imaging::{self, Image, ScalarMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("ray escaped the scene at pixel ({x},{y})")]
    RayEscaped { x: usize, y: usize },
    #[error("imaging error: {0}")]
    Imaging(#[from] imaging::ImagingError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    Corridor,
    GroundAndWalls,
    Boxes,
}

impl std::str::FromStr for ScenePreset {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corridor" => Ok(ScenePreset::Corridor),
            "ground_and_walls" => Ok(ScenePreset::GroundAndWalls),
            "boxes" => Ok(ScenePreset::Boxes),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }
}

/// One smooth sinusoidal component of a plane texture.
#[derive(Debug, Clone)]
pub struct Grating {
    pub amplitude: f64,
    /// Cycles per scene unit along `dir`.
    pub frequency: f64,
    pub dir: [f64; 3],
    pub phase: f64,
    pub channel_weights: [f64; 3],
}

/// Band-limited plane texture: base color + low-frequency ramp + gratings.
#[derive(Debug, Clone)]
pub struct Texture {
    pub base: [f64; 3],
    pub ramp: [f64; 3],
    pub ramp_dir: [f64; 3],
    pub gratings: Vec<Grating>,
}

impl Texture {
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let ramp_coord = dot(p, self.ramp_dir);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = self.base[c] + self.ramp[c] * ramp_coord;
        }
        for g in &self.gratings {
            let s = (2.0 * std::f64::consts::PI * g.frequency * dot(p, g.dir) + g.phase).sin();
            for c in 0..3 {
                out[c] += g.amplitude * g.channel_weights[c] * s;
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }
}

/// Infinite or extent-limited textured plane `normal . X = offset`.
#[derive(Debug, Clone)]
pub struct TexturedPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    /// Axis-aligned world-space bounds; `None` means infinite.
    pub extent: Option<([f64; 3], [f64; 3])>,
    pub texture: Texture,
}

#[derive(Debug, Clone)]
pub struct PlaneScene {
    pub planes: Vec<TexturedPlane>,
    pub seed: u64,
    pub preset: ScenePreset,
}

/// Camera intrinsics plus the three absolute camera-to-world poses of a
/// `(t-1, t, t+1)` window.
#[derive(Debug, Clone)]
pub struct CameraTrajectory {
    pub poses: [PoseParams; 3],
    pub k: Intrinsics,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Default intrinsics for a raster: 0.58 W focal length, principal point at
/// the raster center (pixel-center convention).
pub fn default_intrinsics(width: usize, height: usize) -> Intrinsics {
    Intrinsics {
        fx: 0.58 * width as f64,
        fy: 0.58 * width as f64,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2 = dot(v, v);
        if n2 > 1e-3 && n2 < 1.0 {
            return normalize(v);
        }
    }
}

/// Curvature budget: sum of amplitude * (cycles/pixel)^2 across gratings,
/// measured at the preset's nearest depth on the narrowest raster the scene
/// is rendered at. Bounds the mean bilinear interpolation error of a warped
/// rendering.
const CURVATURE_BUDGET: f64 = 8.0e-4;

fn sample_texture(rng: &mut ChaCha8Rng, z_min: f64, min_width: usize) -> Texture {
    let px_per_unit = 0.58 * min_width as f64 / z_min;
    let n = rng.gen_range(2..=5usize);
    let mut gratings = Vec::with_capacity(n);
    let mut curvature = 0.0;
    for _ in 0..n {
        let cycles_per_px = rng.gen_range(0.008..0.07);
        let amplitude = rng.gen_range(0.05..0.2);
        curvature += amplitude * cycles_per_px * cycles_per_px;
        let w = [rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0)];
        gratings.push(Grating {
            amplitude,
            frequency: cycles_per_px * px_per_unit,
            dir: random_unit(rng),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            channel_weights: w,
        });
    }
    if curvature > CURVATURE_BUDGET {
        let scale = CURVATURE_BUDGET / curvature;
        for g in gratings.iter_mut() {
            g.amplitude *= scale;
        }
    }
    // Keep base +/- (ramp + sum of amplitudes) inside [0,1] so the clamp in
    // `sample` never introduces kinks.
    let total_amp: f64 = gratings.iter().map(|g| g.amplitude).sum();
    let margin = total_amp + 0.06;
    let base_lo = margin.min(0.45);
    let base = [
        rng.gen_range(base_lo..1.0 - base_lo.min(0.45)).clamp(0.2, 0.8),
        rng.gen_range(base_lo..1.0 - base_lo.min(0.45)).clamp(0.2, 0.8),
        rng.gen_range(base_lo..1.0 - base_lo.min(0.45)).clamp(0.2, 0.8),
    ];
    Texture {
        base,
        ramp: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)],
        ramp_dir: random_unit(rng),
        gratings,
    }
}

/// Build a deterministic scene for a preset. The world frame is anchored at
/// the nominal target camera (origin, looking +z). Textures are band-limited
/// for rasters 96 pixels wide and up; use [`build_scene_for_raster`] when
/// rendering narrower.
pub fn build_scene(preset: ScenePreset, seed: u64) -> PlaneScene {
    build_scene_for_raster(preset, seed, 96)
}

/// [`build_scene`] with an explicit narrowest render width, which drives the
/// texture frequency budget.
pub fn build_scene_for_raster(preset: ScenePreset, seed: u64, min_width: usize) -> PlaneScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_a7f1_9d21_4e63);
    let planes = match preset {
        ScenePreset::GroundAndWalls => {
            // Near-nadir desk scene: the floor is the world-horizontal plane
            // (normal -z, toward the camera), walls are thin vertical ridges.
            // The tilt and ridge heights put several percent of depth
            // variation into view, which separates translation from the
            // rotation-induced flow it would otherwise alias with.
            let z_floor = rng.gen_range(0.206..0.214);
            let tilt = 0.09;
            let tx = rng.gen_range(0.5 * tilt..tilt) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let ty = rng.gen_range(0.5 * tilt..tilt) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let n_floor = normalize([tx, ty, -1.0]);
            let floor = TexturedPlane {
                normal: n_floor,
                offset: -z_floor,
                extent: None,
                texture: sample_texture(&mut rng, 0.19, min_width),
            };
            let mut planes = vec![floor];
            let wall_h = 0.018;
            for side in 0..3 {
                // Vertical plane: normal perpendicular to world up (z).
                let along_x = side % 2 == 0;
                let pos = rng.gen_range(0.04..0.09) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let normal = if along_x { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let lo = if along_x {
                    [pos - 1e-6, -0.5, z_floor - wall_h]
                } else {
                    [-0.5, pos - 1e-6, z_floor - wall_h]
                };
                let hi = if along_x {
                    [pos + 1e-6, 0.5, z_floor + 1e-6]
                } else {
                    [0.5, pos + 1e-6, z_floor + 1e-6]
                };
                planes.push(TexturedPlane {
                    normal,
                    offset: pos,
                    extent: Some((lo, hi)),
                    texture: sample_texture(&mut rng, 0.19, min_width),
                });
            }
            // Raised plateaus break the single-plane homography ambiguity
            // that otherwise leaves the translation direction ill-determined.
            for _ in 0..3 {
                let z_top = z_floor - rng.gen_range(0.008..0.016);
                let cx = rng.gen_range(-0.10..0.10);
                let cy = rng.gen_range(-0.06..0.06);
                let half_x = rng.gen_range(0.02..0.05);
                let half_y = rng.gen_range(0.02..0.05);
                planes.push(TexturedPlane {
                    normal: [0.0, 0.0, -1.0],
                    offset: -z_top,
                    extent: Some((
                        [cx - half_x, cy - half_y, z_top - 1e-6],
                        [cx + half_x, cy + half_y, z_top + 1e-6],
                    )),
                    texture: sample_texture(&mut rng, 0.19, min_width),
                });
            }
            planes
        }
        ScenePreset::Boxes => {
            let z_floor = rng.gen_range(0.205..0.215);
            let floor = TexturedPlane {
                normal: [0.0, 0.0, -1.0],
                offset: -z_floor,
                extent: None,
                texture: sample_texture(&mut rng, 0.19, min_width),
            };
            let mut planes = vec![floor];
            for _ in 0..3 {
                // Raised fronto-parallel patches create occlusion edges.
                let z_top = z_floor - rng.gen_range(0.006..0.014);
                let cx = rng.gen_range(-0.09..0.09);
                let cy = rng.gen_range(-0.05..0.05);
                let half = rng.gen_range(0.015..0.035);
                planes.push(TexturedPlane {
                    normal: [0.0, 0.0, -1.0],
                    offset: -z_top,
                    extent: Some(([cx - half, cy - half, z_top - 1e-6], [cx + half, cy + half, z_top + 1e-6])),
                    texture: sample_texture(&mut rng, 0.19, min_width),
                });
            }
            planes
        }
        ScenePreset::Corridor => {
            // Gentle corridor: an end wall plus two inward-tilted side walls,
            // avoiding grazing incidence.
            let z_end = rng.gen_range(0.3..0.4);
            let end = TexturedPlane {
                normal: [0.0, 0.0, -1.0],
                offset: -z_end,
                extent: None,
                texture: sample_texture(&mut rng, 0.15, min_width),
            };
            let mut planes = vec![end];
            for side in [-1.0, 1.0] {
                // Plane x*side tilted ~40 degrees toward the camera.
                let n = normalize([side, 0.0, -0.85]);
                let offset = dot(n, [side * 0.16, 0.0, 0.12]);
                planes.push(TexturedPlane {
                    normal: n,
                    offset,
                    extent: Some(([-0.6, -0.6, 0.05], [0.6, 0.6, z_end - 0.02])),
                    texture: sample_texture(&mut rng, 0.15, min_width),
                });
            }
            planes
        }
    };
    PlaneScene { planes, seed, preset }
}

/// Rescale a scene's geometry by `factor` (textures keep their appearance:
/// spatial frequencies and ramps divide by the factor).
pub fn scale_scene(scene: &PlaneScene, factor: f64) -> PlaneScene {
    let mut out = scene.clone();
    for plane in out.planes.iter_mut() {
        plane.offset *= factor;
        if let Some((lo, hi)) = plane.extent.as_mut() {
            for i in 0..3 {
                lo[i] *= factor;
                hi[i] *= factor;
            }
        }
        for g in plane.texture.gratings.iter_mut() {
            g.frequency /= factor;
        }
        for r in plane.texture.ramp.iter_mut() {
            *r /= factor;
        }
    }
    out
}

/// Seeded camera window around the scene anchor; adjacent steps keep
/// translation magnitudes in `[0.028, 0.045]` scaled by `translation_scale`
/// and rotations under a degree.
pub fn sample_trajectory_with_scale(seed: u64, k: Intrinsics, translation_scale: f64) -> CameraTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3b97_c521_77d0_0a11);
    let step = |rng: &mut ChaCha8Rng| -> PoseParams {
        let mag = rng.gen_range(0.028..0.045) * translation_scale;
        // Mostly lateral motion with a little dolly.
        let dir = normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3)]);
        let rot_mag = rng.gen_range(0.002..0.012);
        let axis = random_unit(rng);
        PoseParams::new(
            [axis[0] * rot_mag, axis[1] * rot_mag, axis[2] * rot_mag],
            [dir[0] * mag, dir[1] * mag, dir[2] * mag],
        )
    };
    let base = PoseParams::identity();
    let to_prev = step(&mut rng);
    let to_next = step(&mut rng);
    CameraTrajectory { poses: [base.compose(&to_prev), base, base.compose(&to_next)], k }
}

pub fn sample_trajectory(seed: u64, k: Intrinsics) -> CameraTrajectory {
    sample_trajectory_with_scale(seed, k, 1.0)
}

/// Render one frame: analytic nearest ray/plane intersection per pixel.
/// Depth is the camera-frame z coordinate of the hit.
pub fn render_frame(
    scene: &PlaneScene,
    pose: &PoseParams,
    k: &Intrinsics,
    height: usize,
    width: usize,
) -> Result<(Image, ScalarMap), SynthError> {
    let r: Mat3 = pose.rotation_matrix();
    let origin = pose.translation;
    let mut img = vec![0.0; height * width * 3];
    let mut depth = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let dir_cam = [(x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0];
            let dir_w = r.mul_vec(dir_cam);
            let mut best_t = f64::INFINITY;
            let mut best_plane: Option<&TexturedPlane> = None;
            for plane in &scene.planes {
                let denom = dot(plane.normal, dir_w);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = (plane.offset - dot(plane.normal, origin)) / denom;
                if t <= 1e-6 || t >= best_t {
                    continue;
                }
                let p = [origin[0] + t * dir_w[0], origin[1] + t * dir_w[1], origin[2] + t * dir_w[2]];
                if let Some((lo, hi)) = plane.extent {
                    if p[0] < lo[0] || p[0] > hi[0] || p[1] < lo[1] || p[1] > hi[1] || p[2] < lo[2] || p[2] > hi[2]
                    {
                        continue;
                    }
                }
                best_t = t;
                best_plane = Some(plane);
            }
            let Some(plane) = best_plane else {
                return Err(SynthError::RayEscaped { x, y });
            };
            let p = [
                origin[0] + best_t * dir_w[0],
                origin[1] + best_t * dir_w[1],
                origin[2] + best_t * dir_w[2],
            ];
            let color = plane.texture.sample(p);
            let idx = y * width + x;
            img[idx * 3..idx * 3 + 3].copy_from_slice(&color);
            // dir_cam has unit z, so the ray parameter is the camera-frame z.
            depth[idx] = best_t;
        }
    }
    Ok((Image::new(height, width, 3, img)?, ScalarMap::new(height, width, depth)?))
}

/// One `(t-1, t, t+1)` window with exact depths and relative poses.
#[derive(Debug, Clone)]
pub struct TripletRecord {
    /// Frames in time order; index 1 is the target.
    pub frames: [Image; 3],
    pub depths: [ScalarMap; 3],
    pub k: Intrinsics,
    /// Rigid map from target-camera points into the previous camera.
    pub pose_to_prev: PoseParams,
    /// Rigid map from target-camera points into the next camera.
    pub pose_to_next: PoseParams,
}

impl TripletRecord {
    pub fn target(&self) -> &Image {
        &self.frames[1]
    }

    /// Sources in argmin order: previous frame first.
    pub fn sources(&self) -> [&Image; 2] {
        [&self.frames[0], &self.frames[2]]
    }

    pub fn source_poses(&self) -> [PoseParams; 2] {
        [self.pose_to_prev, self.pose_to_next]
    }
}

pub fn make_triplet(
    scene: &PlaneScene,
    trajectory: &CameraTrajectory,
    height: usize,
    width: usize,
) -> Result<TripletRecord, SynthError> {
    let mut frames = Vec::with_capacity(3);
    let mut depths = Vec::with_capacity(3);
    for pose in &trajectory.poses {
        let (f, d) = render_frame(scene, pose, &trajectory.k, height, width)?;
        frames.push(f);
        depths.push(d);
    }
    let pose_to_prev = relative_pose(&trajectory.poses[1], &trajectory.poses[0]);
    let pose_to_next = relative_pose(&trajectory.poses[1], &trajectory.poses[2]);
    let [f0, f1, f2]: [Image; 3] = frames.try_into().unwrap();
    let [d0, d1, d2]: [ScalarMap; 3] = depths.try_into().unwrap();
    Ok(TripletRecord {
        frames: [f0, f1, f2],
        depths: [d0, d1, d2],
        k: trajectory.k,
        pose_to_prev,
        pose_to_next,
    })
}

// ---------------------------------------------------------------------------
// Dataset directory layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TripletEntry {
    pub frames: [String; 3],
    pub depths: [String; 3],
    pub pose_to_prev: PoseParams,
    pub pose_to_next: PoseParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub preset: ScenePreset,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub triplets: Vec<TripletEntry>,
}

/// Write triplets as `frame_{t}_{k}.ppm` / `depth_{t}_{k}.pfm` plus a
/// `scene.json` manifest.
pub fn write_dataset(
    dir: &Path,
    records: &[TripletRecord],
    seed: u64,
    preset: ScenePreset,
) -> Result<DatasetManifest, SynthError> {
    fs::create_dir_all(dir)?;
    let first = records.first().ok_or_else(|| SynthError::Manifest("no triplets".into()))?;
    let mut entries = Vec::new();
    for (t, rec) in records.iter().enumerate() {
        let mut frames = [String::new(), String::new(), String::new()];
        let mut depths = [String::new(), String::new(), String::new()];
        for k in 0..3 {
            frames[k] = format!("frame_{t}_{k}.ppm");
            depths[k] = format!("depth_{t}_{k}.pfm");
            imaging::write_ppm(&rec.frames[k], dir.join(&frames[k]))?;
            imaging::write_pfm(&rec.depths[k], dir.join(&depths[k]))?;
        }
        entries.push(TripletEntry {
            frames,
            depths,
            pose_to_prev: rec.pose_to_prev,
            pose_to_next: rec.pose_to_next,
        });
    }
    let manifest = DatasetManifest {
        seed,
        preset,
        width: first.frames[1].width,
        height: first.frames[1].height,
        intrinsics: first.k,
        triplets: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Manifest(e.to_string()))?;
    fs::write(dir.join("scene.json"), json + "\n")?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<TripletRecord>, DatasetManifest), SynthError> {
    let text = fs::read_to_string(dir.join("scene.json"))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))?;
    let mut records = Vec::new();
    for entry in &manifest.triplets {
        let mut frames = Vec::new();
        let mut depths = Vec::new();
        for k in 0..3 {
            frames.push(imaging::read_ppm(dir.join(&entry.frames[k]))?);
            depths.push(imaging::read_pfm(dir.join(&entry.depths[k]))?);
        }
        let [f0, f1, f2]: [Image; 3] = frames.try_into().unwrap();
        let [d0, d1, d2]: [ScalarMap; 3] = depths.try_into().unwrap();
        records.push(TripletRecord {
            frames: [f0, f1, f2],
            depths: [d0, d1, d2],
            k: manifest.intrinsics,
            pose_to_prev: entry.pose_to_prev,
            pose_to_next: entry.pose_to_next,
        });
    }
    Ok((records, manifest))
}

/// Mean absolute reconstruction error of warping each source onto the target
/// with ground-truth depth and pose, over valid pixels.
pub fn photometric_consistency_error(rec: &TripletRecord) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (i, (source, pose)) in rec.sources().iter().zip(rec.source_poses()).enumerate() {
        let (warped, mask) =
            crate::geometry::inverse_warp(source, &rec.depths[1], &pose, &rec.k).expect("gt warp");
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in 0..mask.data.len() {
            if !mask.data[idx] {
                continue;
            }
            for c in 0..3 {
                sum += (warped.data[idx * 3 + c] - rec.frames[1].data[idx * 3 + c]).abs();
            }
            count += 3;
        }
        out[i] = if count == 0 { f64::INFINITY } else { sum / count as f64 };
    }
    out
}
