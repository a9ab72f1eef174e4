//! SSIM, the photometric error `pe`, per-pixel minimum reprojection,
//! auto-masking, and edge-aware disparity smoothness.
//!
//! The differentiable graph builders (`*_nodes`) are the single source of
//! truth; the plain-value entry points run them on constant tapes so tests,
//! oracles, and mask computation share the exact arithmetic of the
//! optimization path.

use thiserror::Error;

use crate::diff::tape::{NodeId, Tape};
use crate::imaging::{Image, ScalarMap};

#[derive(Debug, Error)]
pub enum PhotometricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input list")]
    EmptyList,
    #[error("disparity mean must be positive, got {0}")]
    NonPositiveDisparityMean(f64),
    #[error("mask is not binary at index {0}")]
    NonBinaryMask(usize),
}

/// SSIM / L1 mixing and stabilizer constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhotometricConfig {
    /// SSIM weight in `pe` (the L1 term gets `1 - alpha`).
    pub alpha: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Odd SSIM window edge length in pixels.
    pub window: usize,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        PhotometricConfig { alpha: 0.85, ssim_c1: 0.01 * 0.01, ssim_c2: 0.03 * 0.03, window: 3 }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<(), PhotometricError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PhotometricError::DimensionMismatch(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.ssim_c1 <= 0.0 || self.ssim_c2 <= 0.0 || self.window % 2 == 0 {
            return Err(PhotometricError::DimensionMismatch(
                "ssim constants must be positive and window odd".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel error values with the index of the winning source map.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    pub values: ScalarMap,
    /// Winning source index per pixel; ties go to the lowest index.
    pub argmin: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Differentiable graph builders
// ---------------------------------------------------------------------------

/// Channel-averaged per-pixel SSIM between two `HxWxC` nodes.
pub fn ssim_nodes(t: &mut Tape, a: NodeId, b: NodeId, cfg: &PhotometricConfig) -> NodeId {
    let radius = cfg.window / 2;
    let c1 = t.cscalar(cfg.ssim_c1);
    let c2 = t.cscalar(cfg.ssim_c2);
    let two = t.cscalar(2.0);

    let mu_a = t.box_mean(a, radius);
    let mu_b = t.box_mean(b, radius);
    let aa = t.mul(a, a);
    let bb = t.mul(b, b);
    let ab = t.mul(a, b);
    let mean_aa = t.box_mean(aa, radius);
    let mean_bb = t.box_mean(bb, radius);
    let mean_ab = t.box_mean(ab, radius);

    let mu_a2 = t.mul(mu_a, mu_a);
    let mu_b2 = t.mul(mu_b, mu_b);
    let mu_ab = t.mul(mu_a, mu_b);
    let var_a = t.sub(mean_aa, mu_a2);
    let var_b = t.sub(mean_bb, mu_b2);
    let cov = t.sub(mean_ab, mu_ab);

    let two_mu = t.mul(two, mu_ab);
    let lum_num = t.add(two_mu, c1);
    let mu_sum = t.add(mu_a2, mu_b2);
    let lum_den = t.add(mu_sum, c1);
    let two_cov = t.mul(two, cov);
    let str_num = t.add(two_cov, c2);
    let var_sum = t.add(var_a, var_b);
    let str_den = t.add(var_sum, c2);

    let num = t.mul(lum_num, str_num);
    let den = t.mul(lum_den, str_den);
    let ssim = t.div(num, den);
    t.channel_mean(ssim)
}

/// Per-pixel photometric error:
/// `alpha/2 * (1 - SSIM) + (1 - alpha) * mean_c |a - b|`.
pub fn pe_nodes(t: &mut Tape, a: NodeId, b: NodeId, cfg: &PhotometricConfig) -> NodeId {
    let ssim = ssim_nodes(t, a, b, cfg);
    let one = t.cscalar(1.0);
    let dissim = t.sub(one, ssim);
    let half_alpha = t.cscalar(cfg.alpha / 2.0);
    let ssim_term = t.mul(dissim, half_alpha);

    let diff = t.sub(a, b);
    let abs_diff = t.abs(diff);
    let l1 = t.channel_mean(abs_diff);
    let w = t.cscalar(1.0 - cfg.alpha);
    let l1_term = t.mul(l1, w);
    t.add(ssim_term, l1_term)
}

/// Mean-normalized edge-aware smoothness of a disparity node against a
/// (constant) image node. Forward differences; the image gradient weights
/// are channel-averaged.
pub fn smoothness_nodes(t: &mut Tape, disparity: NodeId, image: NodeId) -> NodeId {
    let mean_d = t.mean_all(disparity);
    let d_norm = t.div(disparity, mean_d);

    let ddx = t.dx(d_norm);
    let ddy = t.dy(d_norm);
    let adx = t.abs(ddx);
    let ady = t.abs(ddy);

    let idx = t.dx(image);
    let idy = t.dy(image);
    let aidx = t.abs(idx);
    let aidy = t.abs(idy);
    let gx = t.channel_mean(aidx);
    let gy = t.channel_mean(aidy);
    let ngx = t.neg(gx);
    let ngy = t.neg(gy);
    let wx = t.exp(ngx);
    let wy = t.exp(ngy);

    let tx = t.mul(adx, wx);
    let ty = t.mul(ady, wy);
    let sum = t.add(tx, ty);
    t.mean_all(sum)
}

// ---------------------------------------------------------------------------
// Plain-value entry points
// ---------------------------------------------------------------------------

fn check_same_dims(a: &Image, b: &Image) -> Result<(), PhotometricError> {
    if a.height != b.height || a.width != b.width || a.channels != b.channels {
        return Err(PhotometricError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

pub fn ssim_map(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Result<ScalarMap, PhotometricError> {
    check_same_dims(a, b)?;
    let mut t = Tape::new();
    let na = t.constant_image(a);
    let nb = t.constant_image(b);
    let out = ssim_nodes(&mut t, na, nb, cfg);
    ScalarMap::new(a.height, a.width, t.value(out).to_vec())
        .map_err(|e| PhotometricError::DimensionMismatch(e.to_string()))
}

pub fn pe(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Result<ScalarMap, PhotometricError> {
    check_same_dims(a, b)?;
    let mut t = Tape::new();
    let na = t.constant_image(a);
    let nb = t.constant_image(b);
    let out = pe_nodes(&mut t, na, nb, cfg);
    ScalarMap::new(a.height, a.width, t.value(out).to_vec())
        .map_err(|e| PhotometricError::DimensionMismatch(e.to_string()))
}

/// Per-pixel minimum over source error maps, ties to the lowest index.
pub fn min_reprojection(pe_maps: &[ScalarMap]) -> Result<ErrorMap, PhotometricError> {
    let first = pe_maps.first().ok_or(PhotometricError::EmptyList)?;
    let n = first.data.len();
    for m in pe_maps {
        if m.height != first.height || m.width != first.width {
            return Err(PhotometricError::DimensionMismatch("error map dims differ".into()));
        }
    }
    let mut values = first.data.clone();
    let mut argmin = vec![0usize; n];
    for (si, m) in pe_maps.iter().enumerate().skip(1) {
        for i in 0..n {
            if m.data[i] < values[i] {
                values[i] = m.data[i];
                argmin[i] = si;
            }
        }
    }
    Ok(ErrorMap { values: ScalarMap::new(first.height, first.width, values).unwrap(), argmin })
}

/// Monodepth2-style auto-mask: 1 where the best warped reprojection beats the
/// best unwarped source strictly, else 0.
pub fn auto_mask(
    target: &Image,
    sources: &[Image],
    warped: &[Image],
    cfg: &PhotometricConfig,
) -> Result<ScalarMap, PhotometricError> {
    if sources.is_empty() || warped.is_empty() {
        return Err(PhotometricError::EmptyList);
    }
    let warped_pe: Vec<ScalarMap> = warped.iter().map(|w| pe(target, w, cfg)).collect::<Result<_, _>>()?;
    let source_pe: Vec<ScalarMap> = sources.iter().map(|s| pe(target, s, cfg)).collect::<Result<_, _>>()?;
    let min_warped = min_reprojection(&warped_pe)?;
    let min_source = min_reprojection(&source_pe)?;
    let data = min_warped
        .values
        .data
        .iter()
        .zip(&min_source.values.data)
        .map(|(&w, &s)| if w < s { 1.0 } else { 0.0 })
        .collect();
    ScalarMap::new(target.height, target.width, data)
        .map_err(|e| PhotometricError::DimensionMismatch(e.to_string()))
}

/// Scalar edge-aware smoothness of a disparity map against an image.
pub fn smoothness(disparity: &ScalarMap, image: &Image) -> Result<f64, PhotometricError> {
    if disparity.height != image.height || disparity.width != image.width {
        return Err(PhotometricError::DimensionMismatch("disparity/image dims differ".into()));
    }
    let mean = disparity.data.iter().sum::<f64>() / disparity.data.len() as f64;
    if mean <= 0.0 {
        return Err(PhotometricError::NonPositiveDisparityMean(mean));
    }
    let mut t = Tape::new();
    let d = t.constant_map(disparity);
    let img = t.constant_image(image);
    let out = smoothness_nodes(&mut t, d, img);
    Ok(t.scalar_value(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::tape::Dims;
    use proptest::prelude::*;

    fn image_from(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> Image {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(h, w, c, data).unwrap()
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let cfg = PhotometricConfig::default();
        let img = image_from(5, 6, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 11.0);
        let s = ssim_map(&img, &img, &cfg).unwrap();
        assert!(s.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_constant_images_match_closed_form() {
        // Zero variances: SSIM = (2 mu_a mu_b + c1) / (mu_a^2 + mu_b^2 + c1).
        let cfg = PhotometricConfig::default();
        let a = Image::constant(4, 4, 3, 0.2);
        let b = Image::constant(4, 4, 3, 0.4);
        let expected = (2.0 * 0.2 * 0.4 + cfg.ssim_c1) / (0.2f64.powi(2) + 0.4f64.powi(2) + cfg.ssim_c1);
        let s = ssim_map(&a, &b, &cfg).unwrap();
        for &v in &s.data {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
    }

    #[test]
    fn pe_of_identical_images_is_zero() {
        let cfg = PhotometricConfig::default();
        let img = image_from(4, 5, 3, |y, x, _| (y as f64 * 0.13 + x as f64 * 0.07).fract());
        let p = pe(&img, &img, &cfg).unwrap();
        assert!(p.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn pe_constant_images_match_arithmetic_oracle() {
        let cfg = PhotometricConfig::default();
        assert_eq!(cfg.alpha, 0.85);
        let a = Image::constant(3, 3, 3, 0.2);
        let b = Image::constant(3, 3, 3, 0.4);
        let ssim = (2.0 * 0.2 * 0.4 + cfg.ssim_c1) / (0.2f64.powi(2) + 0.4f64.powi(2) + cfg.ssim_c1);
        let expected = 0.425 * (1.0 - ssim) + 0.15 * 0.2;
        let p = pe(&a, &b, &cfg).unwrap();
        for &v in &p.data {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
    }

    #[test]
    fn min_reprojection_single_map_and_tie_rule() {
        let m = ScalarMap::new(1, 2, vec![3.0, 5.0]).unwrap();
        let e = min_reprojection(std::slice::from_ref(&m)).unwrap();
        assert_eq!(e.values.data, vec![3.0, 5.0]);
        assert!(e.argmin.iter().all(|&i| i == 0));

        let a = ScalarMap::new(1, 3, vec![5.0, 2.0, 1.0]).unwrap();
        let b = ScalarMap::new(1, 3, vec![3.0, 2.0, 4.0]).unwrap();
        let e = min_reprojection(&[a, b]).unwrap();
        assert_eq!(e.values.data, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.argmin, vec![1, 0, 0]);

        assert!(matches!(min_reprojection(&[]), Err(PhotometricError::EmptyList)));
    }

    #[test]
    fn auto_mask_is_zero_for_identical_static_frames() {
        let cfg = PhotometricConfig::default();
        let img = image_from(4, 4, 3, |y, x, _| ((y + x) % 2) as f64);
        let mu = auto_mask(&img, &[img.clone(), img.clone()], &[img.clone(), img.clone()], &cfg).unwrap();
        assert!(mu.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn auto_mask_selects_pixels_where_warp_wins() {
        let cfg = PhotometricConfig::default();
        let target = image_from(4, 4, 3, |y, x, _| (y as f64 * 0.2 + x as f64 * 0.1).fract());
        // Warped equals target (pe 0), source differs (pe > 0): mask all ones.
        let source = image_from(4, 4, 3, |y, x, _| (y as f64 * 0.2 + x as f64 * 0.1 + 0.4).fract());
        let mu = auto_mask(&target, &[source.clone()], &[target.clone()], &cfg).unwrap();
        assert!(mu.data.iter().all(|&v| v == 1.0));
        // Swap roles: warp loses everywhere.
        let mu2 = auto_mask(&target, &[target.clone()], &[source], &cfg).unwrap();
        assert!(mu2.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothness_of_constant_disparity_is_zero() {
        let d = ScalarMap::constant(4, 5, 2.5);
        let img = Image::constant(4, 5, 3, 0.5);
        assert_eq!(smoothness(&d, &img).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_ramp_matches_hand_evaluation() {
        // d = [0, 1, 2] on a constant image: d* = d / 1, two unit forward
        // differences, averaged over 3 pixels -> 2/3.
        let d = ScalarMap::new(1, 3, vec![0.0, 1.0, 2.0]).unwrap();
        let img = Image::constant(1, 3, 3, 0.7);
        let ls = smoothness(&d, &img).unwrap();
        assert!((ls - 2.0 / 3.0).abs() < 1e-12, "{ls}");
    }

    #[test]
    fn smoothness_rejects_zero_mean() {
        let d = ScalarMap::constant(2, 2, 0.0);
        let img = Image::constant(2, 2, 3, 0.5);
        assert!(matches!(smoothness(&d, &img), Err(PhotometricError::NonPositiveDisparityMean(_))));
    }

    #[test]
    fn pe_gradient_matches_finite_differences() {
        // Differentiate pe(target, warped) w.r.t. the warped image away from
        // L1 kinks.
        let cfg = PhotometricConfig::default();
        let target = image_from(3, 4, 1, |y, x, _| (y as f64 * 0.21 + x as f64 * 0.13).fract());
        let base: Vec<f64> = target.data.iter().map(|&v| (v + 0.17).fract()).collect();

        let eval = |vals: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let b = t.var(Dims::image(3, 4, 1), vals.to_vec());
            let a = t.constant_image(&target);
            let p = pe_nodes(&mut t, a, b, &cfg);
            let m = t.mean_all(p);
            let g = t.backward(m);
            (t.scalar_value(m), g.get_or_zeros(b, vals.len()))
        };
        let (_, analytic) = eval(&base);
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            let mut m = base.clone();
            m[i] -= eps;
            let fd = (eval(&p).0 - eval(&m).0) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!((analytic[i] - fd).abs() / denom < 1e-4, "i={i} {analytic:?} fd={fd}");
        }
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let img = image_from(3, 4, 3, |y, x, _| (y as f64 * 0.4 + x as f64 * 0.23).fract());
        let base: Vec<f64> = (0..12).map(|i| 0.5 + 0.3 * ((i as f64 * 0.7).sin())).collect();
        let eval = |vals: &[f64]| -> (f64, Vec<f64>) {
            let mut t = Tape::new();
            let d = t.var(Dims::map(3, 4), vals.to_vec());
            let i = t.constant_image(&img);
            let s = smoothness_nodes(&mut t, d, i);
            let g = t.backward(s);
            (t.scalar_value(s), g.get_or_zeros(d, vals.len()))
        };
        let (_, analytic) = eval(&base);
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            let mut m = base.clone();
            m[i] -= eps;
            let fd = (eval(&p).0 - eval(&m).0) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!((analytic[i] - fd).abs() / denom < 1e-4, "i={i}");
        }
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric(seed in 0u64..500) {
            let cfg = PhotometricConfig::default();
            let f = |s: u64, y: usize, x: usize, c: usize| {
                let v = (s.wrapping_mul(0x9e37).wrapping_add((y * 31 + x * 7 + c) as u64)) % 97;
                v as f64 / 96.0
            };
            let a = image_from(4, 4, 3, |y, x, c| f(seed, y, x, c));
            let b = image_from(4, 4, 3, |y, x, c| f(seed.wrapping_add(1), y, x, c));
            let s_ab = ssim_map(&a, &b, &cfg).unwrap();
            let s_ba = ssim_map(&b, &a, &cfg).unwrap();
            for i in 0..s_ab.data.len() {
                prop_assert!((s_ab.data[i] - s_ba.data[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn pe_nonnegative_and_symmetric(seed in 0u64..200) {
            let cfg = PhotometricConfig::default();
            let f = |s: u64, i: usize| ((s.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 33) % 1000) as f64 / 999.0;
            let a = Image::new(3, 4, 3, (0..36).map(|i| f(seed, i)).collect()).unwrap();
            let b = Image::new(3, 4, 3, (0..36).map(|i| f(seed + 7, i)).collect()).unwrap();
            let p_ab = pe(&a, &b, &cfg).unwrap();
            let p_ba = pe(&b, &a, &cfg).unwrap();
            for i in 0..p_ab.data.len() {
                prop_assert!(p_ab.data[i] >= 0.0);
                prop_assert!((p_ab.data[i] - p_ba.data[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn min_reprojection_bounded_by_inputs(vals in proptest::collection::vec(0.0f64..5.0, 12)) {
            let a = ScalarMap::new(2, 3, vals[0..6].to_vec()).unwrap();
            let b = ScalarMap::new(2, 3, vals[6..12].to_vec()).unwrap();
            let e = min_reprojection(&[a.clone(), b.clone()]).unwrap();
            for i in 0..6 {
                prop_assert!(e.values.data[i] <= a.data[i] && e.values.data[i] <= b.data[i]);
                let expect = if a.data[i] <= b.data[i] { 0 } else { 1 };
                prop_assert_eq!(e.argmin[i], expect);
            }
        }

        #[test]
        fn smoothness_invariant_to_positive_scaling(k in 0.01f64..100.0) {
            let d = ScalarMap::new(2, 3, vec![0.5, 1.0, 1.5, 2.0, 0.75, 1.25]).unwrap();
            let scaled = ScalarMap::new(2, 3, d.data.iter().map(|&v| v * k).collect()).unwrap();
            let img = Image::new(2, 3, 3, (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
            let l1 = smoothness(&d, &img).unwrap();
            let l2 = smoothness(&scaled, &img).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn auto_mask_is_binary(seed in 0u64..200) {
            let cfg = PhotometricConfig::default();
            let f = |s: u64, i: usize| ((s.wrapping_mul(0x5851f42d4c957f2d).wrapping_add(i as u64) >> 30) % 256) as f64 / 255.0;
            let t = Image::new(3, 3, 3, (0..27).map(|i| f(seed, i)).collect()).unwrap();
            let s1 = Image::new(3, 3, 3, (0..27).map(|i| f(seed + 1, i)).collect()).unwrap();
            let w1 = Image::new(3, 3, 3, (0..27).map(|i| f(seed + 2, i)).collect()).unwrap();
            let mu = auto_mask(&t, &[s1], &[w1], &cfg).unwrap();
            prop_assert!(mu.data.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
