//! Pinhole camera model, axis-angle poses, projection and inverse warping.
//!
//! Conventions used throughout the crate:
//!
//! - Pixel coordinates index pixel centers; `(0,0)` is the center of the
//!   top-left pixel and `(W-1, H-1)` the bottom-right.
//! - A pose `(R, t)` maps points as `X_out = R * X_in + t`. The relative pose
//!   `target -> source` carries target-camera points into the source camera.
//! - Depth is the camera-frame z coordinate; points with `z <= Z_EPS` count
//!   as behind the camera.
//! - Bilinear sampling clamps to the image edge; the gradient at exact
//!   integer coordinates uses the right/top sub-cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{Image, ScalarMap, ValidityMask};

/// Behind-camera threshold in scene units.
pub const Z_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("depth must be positive everywhere, found {0}")]
    NonPositiveDepth(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Intrinsics for a pyramid level (downsample factor `2^level`),
    /// respecting the pixel-center convention.
    pub fn at_level(&self, level: usize) -> Intrinsics {
        let s = (1usize << level) as f64;
        Intrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
        }
    }
}

/// Axis-angle rotation (radians times unit axis) plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseParams {
    pub fn identity() -> Self {
        Self { axis_angle: [0.0; 3], translation: [0.0; 3] }
    }

    pub fn new(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Self { axis_angle, translation }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        axis_angle_to_matrix(self.axis_angle)
    }

    /// Composition: `self` applied after `other` (`X -> self(other(X))`).
    pub fn compose(&self, other: &PoseParams) -> PoseParams {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        let r = ra.mul_mat(&rb);
        let t = ra.mul_vec(other.translation);
        PoseParams {
            axis_angle: matrix_to_axis_angle(&r),
            translation: [
                t[0] + self.translation[0],
                t[1] + self.translation[1],
                t[2] + self.translation[2],
            ],
        }
    }

    pub fn inverse(&self) -> PoseParams {
        let r = self.rotation_matrix();
        let rt = r.transpose();
        let t = rt.mul_vec(self.translation);
        PoseParams {
            axis_angle: matrix_to_axis_angle(&rt),
            translation: [-t[0], -t[1], -t[2]],
        }
    }
}

/// Relative pose carrying `from`-camera points into the `to` camera, given
/// both absolute camera-to-world poses.
pub fn relative_pose(from_abs: &PoseParams, to_abs: &PoseParams) -> PoseParams {
    to_abs.inverse().compose(from_abs)
}

/// Per-pixel sampling coordinates into a source image, in source pixel units.
#[derive(Debug, Clone)]
pub struct PixelFlowField {
    pub height: usize,
    pub width: usize,
    /// Horizontal sample coordinate per pixel.
    pub u: Vec<f64>,
    /// Vertical sample coordinate per pixel.
    pub v: Vec<f64>,
    /// False where the projected depth fell behind the camera or the
    /// coordinates left the image bounds before clamping.
    pub valid: Vec<bool>,
}

impl PixelFlowField {
    /// The identity flow (every pixel samples itself).
    pub fn identity(height: usize, width: usize) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Self { height, width, u, v, valid: vec![true; height * width] }
    }
}

// ---------------------------------------------------------------------------
// 3x3 matrices and the axis-angle exponential/log maps
// ---------------------------------------------------------------------------

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn identity() -> Self {
        Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn mul_mat(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }
}

// Rodrigues coefficients as analytic functions of u = theta^2, which keeps
// them smooth through u = 0:
//   rot_coeff_a(u) = sin(sqrt(u)) / sqrt(u)
//   rot_coeff_b(u) = (1 - cos(sqrt(u))) / u
// Series fallbacks cover the small-u region for both values and derivatives.

const ROT_SERIES_CUTOFF: f64 = 1e-6;

pub fn rot_coeff_a(u: f64) -> f64 {
    if u < ROT_SERIES_CUTOFF {
        1.0 - u / 6.0 + u * u / 120.0
    } else {
        let t = u.sqrt();
        t.sin() / t
    }
}

pub fn rot_coeff_a_deriv(u: f64) -> f64 {
    if u < ROT_SERIES_CUTOFF {
        -1.0 / 6.0 + u / 60.0 - u * u / 1680.0
    } else {
        let t = u.sqrt();
        (t.cos() - t.sin() / t) / (2.0 * u)
    }
}

pub fn rot_coeff_b(u: f64) -> f64 {
    if u < ROT_SERIES_CUTOFF {
        0.5 - u / 24.0 + u * u / 720.0
    } else {
        (1.0 - u.sqrt().cos()) / u
    }
}

pub fn rot_coeff_b_deriv(u: f64) -> f64 {
    if u < ROT_SERIES_CUTOFF {
        -1.0 / 24.0 + u / 360.0 - u * u / 13440.0
    } else {
        let t = u.sqrt();
        (t.sin() / (2.0 * t) - (1.0 - t.cos()) / u) / u
    }
}

/// Rodrigues formula: `R = I + a(u) K + b(u) K^2` with `K = skew(r)` and
/// `u = |r|^2`. Orthonormal with det +1; the zero vector maps to identity.
pub fn axis_angle_to_matrix(rotation: [f64; 3]) -> Mat3 {
    let [x, y, z] = rotation;
    let u = x * x + y * y + z * z;
    let a = rot_coeff_a(u);
    let b = rot_coeff_b(u);
    Mat3([
        [1.0 + b * (-z * z - y * y), -a * z + b * x * y, a * y + b * x * z],
        [a * z + b * x * y, 1.0 + b * (-z * z - x * x), -a * x + b * y * z],
        [-a * y + b * x * z, a * x + b * y * z, 1.0 + b * (-y * y - x * x)],
    ])
}

/// Log map: recover the canonical axis-angle vector (`|r| <= pi`) from a
/// rotation matrix.
pub fn matrix_to_axis_angle(m: &Mat3) -> [f64; 3] {
    let trace = m.0[0][0] + m.0[1][1] + m.0[2][2];
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-9 {
        // First-order: R ~ I + skew(r).
        return [
            (m.0[2][1] - m.0[1][2]) / 2.0,
            (m.0[0][2] - m.0[2][0]) / 2.0,
            (m.0[1][0] - m.0[0][1]) / 2.0,
        ];
    }
    if theta < std::f64::consts::PI - 1e-6 {
        let s = theta / (2.0 * theta.sin());
        return [
            s * (m.0[2][1] - m.0[1][2]),
            s * (m.0[0][2] - m.0[2][0]),
            s * (m.0[1][0] - m.0[0][1]),
        ];
    }
    // Near pi: axis from the diagonal of (R + I)/2.
    let xx = ((m.0[0][0] + 1.0) / 2.0).max(0.0).sqrt();
    let yy = ((m.0[1][1] + 1.0) / 2.0).max(0.0).sqrt();
    let zz = ((m.0[2][2] + 1.0) / 2.0).max(0.0).sqrt();
    let mut axis = [xx, yy, zz];
    // Fix signs using the off-diagonal sums.
    if m.0[0][1] + m.0[1][0] < 0.0 {
        axis[1] = -axis[1];
    }
    if m.0[0][2] + m.0[2][0] < 0.0 {
        axis[2] = -axis[2];
    }
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-12);
    [theta * axis[0] / norm, theta * axis[1] / norm, theta * axis[2] / norm]
}

// ---------------------------------------------------------------------------
// Projection and sampling
// ---------------------------------------------------------------------------

/// Backprojection ray direction for a pixel (z component is 1).
#[inline]
pub fn pixel_ray(k: &Intrinsics, x: usize, y: usize) -> [f64; 3] {
    [(x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0]
}

/// Project every pixel of a depth map through a rigid pose into another
/// camera with the same intrinsics.
pub fn project(depth: &ScalarMap, pose: &PoseParams, k: &Intrinsics) -> Result<PixelFlowField, GeometryError> {
    if let Some(&bad) = depth.data.iter().find(|v| **v <= 0.0) {
        return Err(GeometryError::NonPositiveDepth(bad));
    }
    let (h, w) = (depth.height, depth.width);
    if pose.axis_angle == [0.0; 3] && pose.translation == [0.0; 3] {
        // The identity pose maps every pixel to itself exactly; the general
        // path would round through the backproject/reproject chain.
        return Ok(PixelFlowField::identity(h, w));
    }
    let r = pose.rotation_matrix();
    let t = pose.translation;
    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    let mut valid = vec![true; h * w];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let d = depth.data[idx];
            let ray = pixel_ray(k, x, y);
            let p = [ray[0] * d, ray[1] * d, d];
            let q = r.mul_vec(p);
            let q = [q[0] + t[0], q[1] + t[1], q[2] + t[2]];
            let in_front = q[2] > Z_EPS;
            let z = q[2].max(Z_EPS);
            let uu = k.fx * q[0] / z + k.cx;
            let vv = k.fy * q[1] / z + k.cy;
            u[idx] = uu;
            v[idx] = vv;
            valid[idx] = in_front
                && uu >= 0.0
                && uu <= (w - 1) as f64
                && vv >= 0.0
                && vv <= (h - 1) as f64;
        }
    }
    Ok(PixelFlowField { height: h, width: w, u, v, valid })
}

/// One interpolation axis: clamped cell index pair, fractional offset, and
/// the clamp indicator used as the coordinate subgradient.
#[inline]
pub fn bilinear_axis(extent: usize, coord: f64) -> (usize, usize, f64, f64) {
    if extent == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let max = (extent - 1) as f64;
    let clamped = coord.clamp(0.0, max);
    let mut i0 = clamped.floor() as usize;
    if i0 > extent - 2 {
        i0 = extent - 2;
    }
    let frac = clamped - i0 as f64;
    let slope = if (0.0..=max).contains(&coord) { 1.0 } else { 0.0 };
    (i0, i0 + 1, frac, slope)
}

/// Sample a source image at flow coordinates with clamp-to-edge bilinear
/// interpolation. The returned mask copies the flow validity.
pub fn bilinear_sample(source: &Image, flow: &PixelFlowField) -> Result<(Image, ValidityMask), GeometryError> {
    if source.height != flow.height || source.width != flow.width {
        return Err(GeometryError::DimensionMismatch(format!(
            "source {}x{} vs flow {}x{}",
            source.height, source.width, flow.height, flow.width
        )));
    }
    let (h, w, c) = (flow.height, flow.width, source.channels);
    let mut data = vec![0.0; h * w * c];
    for idx in 0..h * w {
        let (x0, x1, fu, _) = bilinear_axis(w, flow.u[idx]);
        let (y0, y1, fv, _) = bilinear_axis(h, flow.v[idx]);
        for ch in 0..c {
            let v00 = source.data[(y0 * w + x0) * c + ch];
            let v01 = source.data[(y0 * w + x1) * c + ch];
            let v10 = source.data[(y1 * w + x0) * c + ch];
            let v11 = source.data[(y1 * w + x1) * c + ch];
            let top = v00 * (1.0 - fu) + v01 * fu;
            let bottom = v10 * (1.0 - fu) + v11 * fu;
            data[idx * c + ch] = top * (1.0 - fv) + bottom * fv;
        }
    }
    let image = Image { height: h, width: w, channels: c, data };
    let mask = ValidityMask::new(h, w, flow.valid.clone());
    Ok((image, mask))
}

/// Reconstruct the target view by sampling the source image at the projected
/// coordinates of the target depth map.
pub fn inverse_warp(
    source: &Image,
    depth: &ScalarMap,
    pose: &PoseParams,
    k: &Intrinsics,
) -> Result<(Image, ValidityMask), GeometryError> {
    let flow = project(depth, pose, k)?;
    bilinear_sample(source, &flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.0[i][j] - b.0[i][j]).abs() <= tol, "mismatch at ({i},{j}): {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        assert_mat_close(&axis_angle_to_matrix([0.0; 3]), &Mat3::identity(), 0.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = axis_angle_to_matrix([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = r.mul_vec([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn rotation_is_orthonormal_for_random_inputs() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..50 {
            let r = axis_angle_to_matrix([next(), next(), next()]);
            let rt_r = r.transpose().mul_mat(&r);
            assert_mat_close(&rt_r, &Mat3::identity(), 1e-12);
        }
    }

    #[test]
    fn log_map_round_trips() {
        for aa in [[0.3, -0.2, 0.1], [0.0, 0.0, 1.5], [1.0, 1.0, 1.0], [1e-8, 0.0, 0.0]] {
            let m = axis_angle_to_matrix(aa);
            let back = matrix_to_axis_angle(&m);
            for i in 0..3 {
                assert!((back[i] - aa[i]).abs() < 1e-9, "{aa:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = PoseParams::new([0.2, -0.1, 0.3], [0.5, -0.25, 1.0]);
        let id = p.compose(&p.inverse());
        for i in 0..3 {
            assert!(id.axis_angle[i].abs() < 1e-12);
            assert!(id.translation[i].abs() < 1e-12);
        }
    }

    fn test_intrinsics(w: usize, h: usize) -> Intrinsics {
        Intrinsics { fx: 0.6 * w as f64, fy: 0.6 * w as f64, cx: (w as f64 - 1.0) / 2.0, cy: (h as f64 - 1.0) / 2.0 }
    }

    #[test]
    fn identity_pose_projects_to_pixel_grid() {
        let k = test_intrinsics(8, 6);
        let depth = ScalarMap::constant(6, 8, 3.0);
        let flow = project(&depth, &PoseParams::identity(), &k).unwrap();
        let grid = PixelFlowField::identity(6, 8);
        assert_eq!(flow.u, grid.u);
        assert_eq!(flow.v, grid.v);
        assert!(flow.valid.iter().all(|&v| v));
    }

    #[test]
    fn x_translation_shifts_u_by_fx_b_over_z() {
        let k = test_intrinsics(8, 6);
        let z = 2.0;
        let b = 0.25;
        let depth = ScalarMap::constant(6, 8, z);
        let pose = PoseParams::new([0.0; 3], [b, 0.0, 0.0]);
        let flow = project(&depth, &pose, &k).unwrap();
        let expected_shift = k.fx * b / z;
        for (idx, &u) in flow.u.iter().enumerate() {
            let x = (idx % 8) as f64;
            assert!((u - (x + expected_shift)).abs() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_marks_invalid() {
        let k = test_intrinsics(4, 4);
        let depth = ScalarMap::constant(4, 4, 1.0);
        // Push points behind the camera.
        let pose = PoseParams::new([0.0; 3], [0.0, 0.0, -2.0]);
        let flow = project(&depth, &pose, &k).unwrap();
        assert!(flow.valid.iter().all(|&v| !v));
    }

    #[test]
    fn project_rejects_non_positive_depth() {
        let k = test_intrinsics(2, 2);
        let depth = ScalarMap::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(project(&depth, &PoseParams::identity(), &k), Err(GeometryError::NonPositiveDepth(_))));
    }

    #[test]
    fn bilinear_integer_coordinates_are_exact() {
        let img = Image::new(2, 2, 1, vec![0.1, 0.4, 0.7, 0.9]).unwrap();
        let flow = PixelFlowField::identity(2, 2);
        let (out, _) = bilinear_sample(&img, &flow).unwrap();
        assert_eq!(out.data, img.data);
    }

    #[test]
    fn bilinear_midpoint_on_two_pixel_row() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let flow = PixelFlowField { height: 1, width: 2, u: vec![0.5, 0.5], v: vec![0.0, 0.0], valid: vec![true; 2] };
        let (out, _) = bilinear_sample(&img, &flow).unwrap();
        assert!((out.data[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bilinear_gradient_matches_finite_difference() {
        // d(sample)/du at (0.5, 0) should equal right - left.
        let img = Image::new(1, 3, 1, vec![0.2, 0.9, 0.4]).unwrap();
        let sample_at = |u: f64| {
            let flow = PixelFlowField { height: 1, width: 3, u: vec![u, 0.0, 0.0], v: vec![0.0; 3], valid: vec![true; 3] };
            bilinear_sample(&img, &flow).unwrap().0.data[0]
        };
        let eps = 1e-6;
        let fd = (sample_at(0.5 + eps) - sample_at(0.5 - eps)) / (2.0 * eps);
        assert!((fd - (0.9 - 0.2)).abs() < 1e-8);
    }

    #[test]
    fn identity_warp_returns_source() {
        let k = test_intrinsics(5, 4);
        let mut data = Vec::new();
        for i in 0..(4 * 5 * 3) {
            data.push((i as f64 * 0.37).fract());
        }
        let img = Image::new(4, 5, 3, data).unwrap();
        let depth = ScalarMap::constant(4, 5, 2.0);
        let (out, mask) = inverse_warp(&img, &depth, &PoseParams::identity(), &k).unwrap();
        assert_eq!(out.data, img.data);
        assert!(mask.data.iter().all(|&v| v));
    }

    #[test]
    fn constant_shift_flow_reproduces_shifted_checkerboard() {
        // Brute-force resample oracle: integer shift by 1 pixel left.
        let (h, w) = (4, 6);
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push(if (x + y) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
        let img = Image::new(h, w, 1, data).unwrap();
        let mut flow = PixelFlowField::identity(h, w);
        for u in flow.u.iter_mut() {
            *u += 1.0;
        }
        let (out, _) = bilinear_sample(&img, &flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let sx = (x + 1).min(w - 1);
                assert_eq!(out.at(y, x, 0), img.at(y, sx, 0));
            }
        }
    }

    #[test]
    fn warp_is_linear_in_source_for_fixed_flow() {
        let (h, w) = (3, 4);
        let a = Image::new(h, w, 1, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let b = Image::new(h, w, 1, (0..12).map(|i| ((i * 7) % 12) as f64 / 12.0).collect()).unwrap();
        let mut flow = PixelFlowField::identity(h, w);
        for (i, u) in flow.u.iter_mut().enumerate() {
            *u += 0.3 + 0.05 * (i % 3) as f64;
        }
        let (wa, _) = bilinear_sample(&a, &flow).unwrap();
        let (wb, _) = bilinear_sample(&b, &flow).unwrap();
        let mix_data: Vec<f64> = a.data.iter().zip(&b.data).map(|(&x, &y)| 0.25 * x + 0.5 * y).collect();
        let mix = Image::new(h, w, 1, mix_data).unwrap();
        let (wm, _) = bilinear_sample(&mix, &flow).unwrap();
        for i in 0..wm.data.len() {
            assert!((wm.data[i] - (0.25 * wa.data[i] + 0.5 * wb.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn intrinsics_level_scaling_keeps_pixel_centers() {
        let k = test_intrinsics(8, 8);
        let k1 = k.at_level(1);
        // Old coordinate of new pixel 0 center is 0.5: project a point that
        // lands at u=0.5 at level 0 and check it lands at u=0 at level 1.
        let u0 = 0.5;
        let x_over_z = (u0 - k.cx) / k.fx;
        let u1 = k1.fx * x_over_z + k1.cx;
        assert!((u1 - 0.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_determinant_is_one(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let m = axis_angle_to_matrix([x, y, z]).0;
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            prop_assert!((det - 1.0).abs() < 1e-10);
        }

        #[test]
        fn identity_flow_is_exact_for_any_positive_depth(d in 0.11f64..90.0) {
            let k = test_intrinsics(6, 4);
            let depth = ScalarMap::constant(4, 6, d);
            let flow = project(&depth, &PoseParams::identity(), &k).unwrap();
            let grid = PixelFlowField::identity(4, 6);
            prop_assert_eq!(flow.u, grid.u);
            prop_assert_eq!(flow.v, grid.v);
        }
    }
}
