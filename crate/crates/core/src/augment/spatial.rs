//! Positional augmentations: exact pixel permutations (vertical crop, tile
//! shuffle), random erase, and scale resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AugmentError;
use crate::geometry::Intrinsics;
use crate::imaging::Image;

const TAUS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

fn check_tau(tau: f64) -> Result<(), AugmentError> {
    if TAUS.iter().any(|&t| (t - tau).abs() < 1e-12) {
        Ok(())
    } else {
        Err(AugmentError::BadTau(tau))
    }
}

/// Move the top `round(tau*H)` rows underneath the rest:
/// output rows are `[k, k+1, ..., H-1, 0, ..., k-1]`.
pub fn vertical_crop(image: &Image, tau: f64) -> Result<Image, AugmentError> {
    check_tau(tau)?;
    let k = (tau * image.height as f64).round() as usize;
    Ok(rotate_rows(image, k))
}

/// Exact inverse of [`vertical_crop`].
pub fn invert_vertical_crop(image: &Image, tau: f64) -> Result<Image, AugmentError> {
    check_tau(tau)?;
    let k = (tau * image.height as f64).round() as usize;
    Ok(rotate_rows(image, (image.height - k) % image.height.max(1)))
}

fn rotate_rows(image: &Image, k: usize) -> Image {
    let (h, w, c) = (image.height, image.width, image.channels);
    let row_len = w * c;
    let mut data = Vec::with_capacity(image.data.len());
    for y in 0..h {
        let src = (y + k) % h;
        data.extend_from_slice(&image.data[src * row_len..(src + 1) * row_len]);
    }
    Image { height: h, width: w, channels: c, data }
}

fn check_grid(grid_w: usize, grid_h: usize) -> Result<(), AugmentError> {
    if (grid_w == 2 || grid_w == 4) && (grid_h == 2 || grid_h == 3) {
        Ok(())
    } else {
        Err(AugmentError::BadGrid(grid_w, grid_h))
    }
}

/// Center-crop to the largest grid-divisible raster, so tile moves are exact
/// permutations with exact inverses.
fn center_crop_divisible(image: &Image, grid_w: usize, grid_h: usize) -> Image {
    let h = image.height - image.height % grid_h;
    let w = image.width - image.width % grid_w;
    if h == image.height && w == image.width {
        return image.clone();
    }
    let y0 = (image.height - h) / 2;
    let x0 = (image.width - w) / 2;
    let c = image.channels;
    let mut data = Vec::with_capacity(h * w * c);
    for y in y0..y0 + h {
        let start = (y * image.width + x0) * c;
        data.extend_from_slice(&image.data[start..start + w * c]);
    }
    Image { height: h, width: w, channels: c, data }
}

/// Shuffle grid tiles by a seed-derived uniform permutation. Returns the
/// shuffled image (center-cropped to a divisible size if needed) and the
/// permutation: output tile `i` holds input tile `perm[i]`.
pub fn tile_shuffle(
    image: &Image,
    grid_w: usize,
    grid_h: usize,
    seed: u64,
) -> Result<(Image, Vec<usize>), AugmentError> {
    check_grid(grid_w, grid_h)?;
    let n = grid_w * grid_h;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let out = tile_shuffle_with_perm(image, grid_w, grid_h, &perm)?;
    Ok((out, perm))
}

/// Apply an explicit tile permutation (tiles indexed row-major).
pub fn tile_shuffle_with_perm(
    image: &Image,
    grid_w: usize,
    grid_h: usize,
    perm: &[usize],
) -> Result<Image, AugmentError> {
    check_grid(grid_w, grid_h)?;
    let img = center_crop_divisible(image, grid_w, grid_h);
    let (h, w, c) = (img.height, img.width, img.channels);
    let th = h / grid_h;
    let tw = w / grid_w;
    let mut data = vec![0.0; img.data.len()];
    for (dst, &src) in perm.iter().enumerate() {
        let (dy, dx) = (dst / grid_w, dst % grid_w);
        let (sy, sx) = (src / grid_w, src % grid_w);
        for row in 0..th {
            let s_start = ((sy * th + row) * w + sx * tw) * c;
            let d_start = ((dy * th + row) * w + dx * tw) * c;
            data[d_start..d_start + tw * c].copy_from_slice(&img.data[s_start..s_start + tw * c]);
        }
    }
    Ok(Image { height: h, width: w, channels: c, data })
}

/// Invert a tile shuffle given its permutation.
pub fn invert_tile_shuffle(
    image: &Image,
    grid_w: usize,
    grid_h: usize,
    perm: &[usize],
) -> Result<Image, AugmentError> {
    let mut inverse = vec![0usize; perm.len()];
    for (dst, &src) in perm.iter().enumerate() {
        inverse[src] = dst;
    }
    tile_shuffle_with_perm(image, grid_w, grid_h, &inverse)
}

/// Erased rectangle in pixel coordinates (inclusive start, exclusive end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Fill a seed-derived rectangle with uniform noise; pixels outside the
/// rectangle are untouched.
pub fn random_erase(image: &Image, seed: u64) -> (Image, EraseRect) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let area = (h * w) as f64 * rng.gen_range(0.02..0.2);
    let aspect: f64 = rng.gen_range(0.3..3.3);
    let rh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let rw = ((area / aspect).sqrt().round() as usize).clamp(1, w);
    let y0 = rng.gen_range(0..=h - rh);
    let x0 = rng.gen_range(0..=w - rw);
    let rect = EraseRect { x0, y0, x1: x0 + rw, y1: y0 + rh };
    let mut out = image.clone();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            for ch in 0..c {
                out.data[(y * w + x) * c + ch] = rng.gen_range(0.0..1.0);
            }
        }
    }
    (out, rect)
}

/// Zoom about the raster center by `factor` (clamp-to-edge sampling), keeping
/// the output size: resize-and-center-crop for `factor > 1`, resize-and-pad
/// by edge extension for `factor < 1`.
pub fn scale_resample(image: &Image, factor: f64) -> Image {
    let (h, w, c) = (image.height, image.width, image.channels);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut flow = crate::geometry::PixelFlowField::identity(h, w);
    for i in 0..h * w {
        flow.u[i] = cx + (flow.u[i] - cx) / factor;
        flow.v[i] = cy + (flow.v[i] - cy) / factor;
    }
    let (out, _) = crate::geometry::bilinear_sample(image, &flow).expect("same dims");
    let _ = c;
    out
}

/// Intrinsics adjustment matching [`scale_resample`].
pub fn scale_intrinsics(k: &Intrinsics, factor: f64, width: usize, height: usize) -> Intrinsics {
    let cx_img = (width as f64 - 1.0) / 2.0;
    let cy_img = (height as f64 - 1.0) / 2.0;
    Intrinsics {
        fx: k.fx * factor,
        fy: k.fy * factor,
        cx: cx_img + factor * (k.cx - cx_img),
        cy: cy_img + factor * (k.cy - cy_img),
    }
}
