//! Photometric, weather, and corruption kernels.
//!
//! Severity tables (index = severity - 1):
//!
//! | kind           | parameter                     | 1..5 |
//! |----------------|-------------------------------|------|
//! | gaussian_noise | sigma                         | 0.04, 0.06, 0.08, 0.09, 0.10 |
//! | shot_noise     | photons per unit intensity    | 60, 25, 12, 5, 3 |
//! | impulse_noise  | corrupted pixel fraction      | 0.03, 0.06, 0.09, 0.17, 0.27 |
//! | defocus_blur   | disk radius (px)              | 1, 2, 3, 4, 6 |
//! | glass_blur     | (max shift px, iterations)    | (1,1), (1,2), (2,2), (2,3), (3,3) |
//! | zoom_blur      | max zoom factor               | 1.06, 1.11, 1.16, 1.21, 1.26 |
//! | snow           | (flake density, whitening)    | see tables |
//! | frost          | (coverage, opacity)           | see tables |
//! | elastic        | displacement amplitude (px)   | 0.5, 1.0, 1.5, 2.0, 3.0 |
//! | pixelate       | downscale factor              | 0.6, 0.5, 0.4, 0.3, 0.25 |
//! | jpeg           | quality                       | 25, 18, 15, 10, 7 |
//! | motion_blur    | kernel length (px)            | 3, 5, 7, 9, 12 |
//! | rain_streaks   | streaks per pixel             | 8e-4, 1.6e-3, 3e-3, 5e-3, 8e-3 |
//! | brightness     | gain                          | 1.2, 1.4, 1.6, 1.8, 2.0 |
//! | ground_snow    | blend strength                | 0.15, 0.25, 0.35, 0.45, 0.6 |
//!
//! Determinism and severity monotonicity are the contracts; numeric parity
//! with external corruption benchmarks is not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::imaging::{Image, ScalarMap};

/// Neutral-gray atmospheric veil color.
pub const AIRLIGHT: f64 = 0.8;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

fn clamp_image(mut img: Image) -> Image {
    for v in img.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

fn convolve(image: &Image, taps: &[(isize, isize, f64)]) -> Image {
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut data = vec![0.0; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0.0;
                for &(dy, dx, wgt) in taps {
                    let sy = reflect(y as isize + dy, h);
                    let sx = reflect(x as isize + dx, w);
                    sum += wgt * image.data[(sy * w + sx) * c + ch];
                }
                data[(y * w + x) * c + ch] = sum;
            }
        }
    }
    Image { height: h, width: w, channels: c, data }
}

/// Bilinearly upsampled grid of seeded uniforms in [0,1], cell size in px.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / cell as f64;
            let fx = x as f64 / cell as f64;
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let ty = fy - y0 as f64;
            let tx = fx - x0 as f64;
            let g = |yy: usize, xx: usize| grid[yy.min(gh - 1) * gw + xx.min(gw - 1)];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Weather and time of day
// ---------------------------------------------------------------------------

/// Atmospheric scattering: `I' = I e^(-beta d) + A (1 - e^(-beta d))`.
pub fn fog(image: &Image, depth: &ScalarMap, beta: f64) -> Image {
    let mut out = image.clone();
    for idx in 0..depth.data.len() {
        let trans = (-beta * depth.data[idx]).exp();
        for ch in 0..image.channels {
            let v = &mut out.data[idx * image.channels + ch];
            *v = *v * trans + AIRLIGHT * (1.0 - trans);
        }
    }
    clamp_image(out)
}

pub fn rain_streaks(image: &Image, severity: u8, seed: u64) -> Image {
    const DENSITY: [f64; 5] = [8e-4, 1.6e-3, 3e-3, 5e-3, 8e-3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let count = ((h * w) as f64 * DENSITY[severity as usize - 1]).ceil() as usize;
    let mut out = image.clone();
    for _ in 0..count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let angle = rng.gen_range(70.0f64..110.0).to_radians();
        let len = rng.gen_range(5.0..15.0);
        let (dx, dy) = (angle.cos(), angle.sin());
        let alpha = 0.3;
        let steps = (len * 2.0) as usize;
        for s in 0..steps {
            let t = s as f64 * 0.5 - len / 2.0;
            let px = (cx + t * dx).round();
            let py = (cy + t * dy).round();
            if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                continue;
            }
            let idx = (py as usize * w + px as usize) * c;
            for ch in 0..c {
                out.data[idx + ch] = (1.0 - alpha) * out.data[idx + ch] + alpha;
            }
        }
    }
    clamp_image(out)
}

/// Brighten near-ground pixels in the lower image region toward white, with
/// a noisy mottle; nearer surfaces (smaller depth) collect more snow.
pub fn ground_snow(image: &Image, depth: &ScalarMap, severity: u8, seed: u64) -> Image {
    const STRENGTH: [f64; 5] = [0.15, 0.25, 0.35, 0.45, 0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let noise = value_noise(h, w, 4, &mut rng);
    let mut depths = depth.data.clone();
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_depth = depths[depths.len() / 2];
    let strength = STRENGTH[severity as usize - 1];
    let mut out = image.clone();
    for y in 0..h {
        let row_f = y as f64 / h.max(1) as f64;
        if row_f < 0.5 {
            continue;
        }
        let row_w = ((row_f - 0.5) / 0.5).min(1.0);
        for x in 0..w {
            let idx = y * w + x;
            let nearness = (median_depth / depth.data[idx]).clamp(0.0, 1.5) / 1.5;
            let a = strength * row_w * nearness * (0.5 + 0.5 * noise[idx]);
            for ch in 0..c {
                let v = &mut out.data[idx * c + ch];
                *v = (1.0 - a) * *v + a;
            }
        }
    }
    clamp_image(out)
}

pub fn motion_blur(image: &Image, severity: u8, seed: u64) -> Image {
    const LENGTH: [usize; 5] = [3, 5, 7, 9, 12];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = LENGTH[severity as usize - 1];
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut taps = Vec::with_capacity(len);
    let half = (len as f64 - 1.0) / 2.0;
    for i in 0..len {
        let t = i as f64 - half;
        taps.push(((t * dy).round() as isize, (t * dx).round() as isize, 1.0 / len as f64));
    }
    clamp_image(convolve(image, &taps))
}

/// Per-channel gain and gamma.
pub struct ToneParams {
    pub gains: [f64; 3],
    pub gamma: f64,
    pub lift: f64,
}

pub const NIGHT_TONE: ToneParams = ToneParams { gains: [0.25, 0.30, 0.45], gamma: 2.2, lift: 1.0 };
pub const DAWN_TONE: ToneParams = ToneParams { gains: [1.0, 0.85, 0.6], gamma: 1.05, lift: 0.85 };
pub const DUSK_TONE: ToneParams = ToneParams { gains: [1.0, 0.8, 0.7], gamma: 1.1, lift: 0.75 };

pub fn tone_map(image: &Image, params: ToneParams) -> Image {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(image.channels) {
        for (ch, v) in px.iter_mut().enumerate() {
            let g = if image.channels == 3 { params.gains[ch] } else { params.gains[0] };
            *v = params.lift * g * v.powf(params.gamma);
        }
    }
    clamp_image(out)
}

pub fn brightness(image: &Image, severity: u8) -> Image {
    const GAIN: [f64; 5] = [1.2, 1.4, 1.6, 1.8, 2.0];
    let g = GAIN[severity as usize - 1];
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        *v *= g;
    }
    clamp_image(out)
}

/// Replicate one channel to all three.
pub fn channel_isolate(image: &Image, channel: usize) -> Image {
    assert_eq!(image.channels, 3, "channel isolation needs RGB input");
    let mut out = image.clone();
    for px in 0..image.pixel_count() {
        let v = image.data[px * 3 + channel];
        out.data[px * 3] = v;
        out.data[px * 3 + 1] = v;
        out.data[px * 3 + 2] = v;
    }
    out
}

// ---------------------------------------------------------------------------
// Corruption family
// ---------------------------------------------------------------------------

pub const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.06, 0.08, 0.09, 0.10];

pub fn gaussian_noise(image: &Image, severity: u8, seed: u64) -> Image {
    let sigma = GAUSSIAN_SIGMA[severity as usize - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    clamp_image(out)
}

pub fn shot_noise(image: &Image, severity: u8, seed: u64) -> Image {
    const PHOTONS: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
    let lambda_scale = PHOTONS[severity as usize - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        let lam = *v * lambda_scale;
        *v = if lam > 0.0 {
            Poisson::new(lam).unwrap().sample(&mut rng) / lambda_scale
        } else {
            0.0
        };
    }
    clamp_image(out)
}

pub fn impulse_noise(image: &Image, severity: u8, seed: u64) -> Image {
    const FRACTION: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
    let p = FRACTION[severity as usize - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for px in 0..image.pixel_count() {
        let r: f64 = rng.gen_range(0.0..1.0);
        if r < p {
            let v = if r < p / 2.0 { 0.0 } else { 1.0 };
            for ch in 0..image.channels {
                out.data[px * image.channels + ch] = v;
            }
        }
    }
    out
}

pub fn defocus_blur(image: &Image, severity: u8) -> Image {
    const RADIUS: [isize; 5] = [1, 2, 3, 4, 6];
    let r = RADIUS[severity as usize - 1];
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                taps.push((dy, dx, 1.0));
            }
        }
    }
    let norm = 1.0 / taps.len() as f64;
    for t in taps.iter_mut() {
        t.2 = norm;
    }
    clamp_image(convolve(image, &taps))
}

pub fn glass_blur(image: &Image, severity: u8, seed: u64) -> Image {
    const SHIFT: [isize; 5] = [1, 1, 2, 2, 3];
    const ITERS: [usize; 5] = [1, 2, 2, 3, 3];
    let delta = SHIFT[severity as usize - 1];
    let iters = ITERS[severity as usize - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut out = image.clone();
    for _ in 0..iters {
        for y in 0..h {
            for x in 0..w {
                let dy = rng.gen_range(-delta..=delta);
                let dx = rng.gen_range(-delta..=delta);
                let sy = reflect(y as isize + dy, h);
                let sx = reflect(x as isize + dx, w);
                for ch in 0..c {
                    out.data.swap((y * w + x) * c + ch, (sy * w + sx) * c + ch);
                }
            }
        }
    }
    out
}

pub fn zoom_blur(image: &Image, severity: u8) -> Image {
    const MAX_ZOOM: [f64; 5] = [1.06, 1.11, 1.16, 1.21, 1.26];
    let max_z = MAX_ZOOM[severity as usize - 1];
    let (h, w, c) = (image.height, image.width, image.channels);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut layers = 1.0;
    let mut acc = image.data.clone();
    let mut z = 1.02;
    while z <= max_z + 1e-9 {
        for y in 0..h {
            for x in 0..w {
                let u = cx + (x as f64 - cx) / z;
                let v = cy + (y as f64 - cy) / z;
                let (x0, x1, fu, _) = crate::geometry::bilinear_axis(w, u);
                let (y0, y1, fv, _) = crate::geometry::bilinear_axis(h, v);
                for ch in 0..c {
                    let s00 = image.data[(y0 * w + x0) * c + ch];
                    let s01 = image.data[(y0 * w + x1) * c + ch];
                    let s10 = image.data[(y1 * w + x0) * c + ch];
                    let s11 = image.data[(y1 * w + x1) * c + ch];
                    let val = (s00 * (1.0 - fu) + s01 * fu) * (1.0 - fv) + (s10 * (1.0 - fu) + s11 * fu) * fv;
                    acc[(y * w + x) * c + ch] += val;
                }
            }
        }
        layers += 1.0;
        z += 0.02;
    }
    let data = acc.into_iter().map(|v| (v / layers).clamp(0.0, 1.0)).collect();
    Image { height: h, width: w, channels: c, data }
}

pub fn snow(image: &Image, severity: u8, seed: u64) -> Image {
    const DENSITY: [f64; 5] = [0.002, 0.004, 0.006, 0.009, 0.013];
    const WHITEN: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut out = image.clone();
    let whiten = WHITEN[severity as usize - 1];
    for v in out.data.iter_mut() {
        *v = *v * (1.0 - whiten) + whiten;
    }
    let count = ((h * w) as f64 * DENSITY[severity as usize - 1]).ceil() as usize;
    for _ in 0..count {
        let fx = rng.gen_range(0.0..w as f64);
        let fy = rng.gen_range(0.0..h as f64);
        let radius: f64 = rng.gen_range(0.5..1.5);
        let r_i = radius.ceil() as isize;
        for dy in -r_i..=r_i {
            for dx in -r_i..=r_i {
                let px = fx as isize + dx;
                let py = fy as isize + dy;
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    continue;
                }
                let d2 = ((px as f64 - fx).powi(2) + (py as f64 - fy).powi(2)) / (radius * radius);
                if d2 > 1.0 {
                    continue;
                }
                let a = 0.7 * (1.0 - d2);
                let idx = (py as usize * w + px as usize) * c;
                for ch in 0..c {
                    out.data[idx + ch] = (1.0 - a) * out.data[idx + ch] + a;
                }
            }
        }
    }
    clamp_image(out)
}

pub fn frost(image: &Image, severity: u8, seed: u64) -> Image {
    const COVERAGE: [f64; 5] = [0.15, 0.25, 0.35, 0.45, 0.55];
    const OPACITY: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (image.height, image.width, image.channels);
    let noise = value_noise(h, w, 6, &mut rng);
    let threshold = 1.0 - COVERAGE[severity as usize - 1];
    let opacity = OPACITY[severity as usize - 1];
    let mut out = image.clone();
    for idx in 0..h * w {
        if noise[idx] <= threshold {
            continue;
        }
        let a = opacity * (noise[idx] - threshold) / (1.0 - threshold);
        for ch in 0..c {
            let v = &mut out.data[idx * c + ch];
            *v = (1.0 - a) * *v + a * 0.9;
        }
    }
    clamp_image(out)
}

pub fn elastic(image: &Image, severity: u8, seed: u64) -> Image {
    const AMPLITUDE: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];
    let amp = AMPLITUDE[severity as usize - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (image.height, image.width);
    let nx = value_noise(h, w, 8, &mut rng);
    let ny = value_noise(h, w, 8, &mut rng);
    let mut flow = crate::geometry::PixelFlowField::identity(h, w);
    for i in 0..h * w {
        flow.u[i] += (nx[i] * 2.0 - 1.0) * amp;
        flow.v[i] += (ny[i] * 2.0 - 1.0) * amp;
    }
    let (out, _) = crate::geometry::bilinear_sample(image, &flow).expect("same dims");
    clamp_image(out)
}

pub fn pixelate(image: &Image, severity: u8) -> Image {
    const FACTOR: [f64; 5] = [0.6, 0.5, 0.4, 0.3, 0.25];
    let f = FACTOR[severity as usize - 1];
    let (h, w, c) = (image.height, image.width, image.channels);
    let h2 = ((h as f64 * f).round() as usize).max(1);
    let w2 = ((w as f64 * f).round() as usize).max(1);
    // Block-average into the reduced raster, then nearest-upsample back.
    let mut small = vec![0.0; h2 * w2 * c];
    for by in 0..h2 {
        let y_lo = by * h / h2;
        let y_hi = ((by + 1) * h / h2).max(y_lo + 1);
        for bx in 0..w2 {
            let x_lo = bx * w / w2;
            let x_hi = ((bx + 1) * w / w2).max(x_lo + 1);
            for ch in 0..c {
                let mut sum = 0.0;
                for y in y_lo..y_hi {
                    for x in x_lo..x_hi {
                        sum += image.data[(y * w + x) * c + ch];
                    }
                }
                small[(by * w2 + bx) * c + ch] = sum / ((y_hi - y_lo) * (x_hi - x_lo)) as f64;
            }
        }
    }
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        let by = (y * h2 / h).min(h2 - 1);
        for x in 0..w {
            let bx = (x * w2 / w).min(w2 - 1);
            for ch in 0..c {
                data[(y * w + x) * c + ch] = small[(by * w2 + bx) * c + ch];
            }
        }
    }
    Image { height: h, width: w, channels: c, data }
}

const JPEG_QUALITY: [u32; 5] = [25, 18, 15, 10, 7];

/// Standard luminance quantization base table (quality 50).
const JPEG_Q50: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn jpeg_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [0.0; 64];
    for i in 0..64 {
        t[i] = ((JPEG_Q50[i] * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    t
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (k, row) in c.iter_mut().enumerate() {
        let alpha = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, cell) in row.iter_mut().enumerate() {
            *cell = alpha * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0).cos();
        }
    }
    c
}

pub fn jpeg(image: &Image, severity: u8) -> Image {
    jpeg_compress(image, JPEG_QUALITY[severity as usize - 1])
}

/// Blockwise DCT quantization in the 0..255 domain. Table entries of 1 pass
/// coefficients through unquantized, so an all-ones table is the identity.
pub fn jpeg_compress(image: &Image, quality: u32) -> Image {
    let table = jpeg_table(quality);
    let basis = dct_basis();
    let (h, w, c) = (image.height, image.width, image.channels);
    let hb = h.div_ceil(8) * 8;
    let wb = w.div_ceil(8) * 8;
    let mut out = image.clone();
    let mut block = [[0.0f64; 8]; 8];
    let mut coef = [[0.0f64; 8]; 8];
    for ch in 0..c {
        for by in (0..hb).step_by(8) {
            for bx in (0..wb).step_by(8) {
                for (iy, row) in block.iter_mut().enumerate() {
                    for (ix, cell) in row.iter_mut().enumerate() {
                        let sy = (by + iy).min(h - 1);
                        let sx = (bx + ix).min(w - 1);
                        *cell = image.data[(sy * w + sx) * c + ch] * 255.0 - 128.0;
                    }
                }
                // coef = C * block * C^T
                for u in 0..8 {
                    for v in 0..8 {
                        let mut s = 0.0;
                        for y in 0..8 {
                            for x in 0..8 {
                                s += basis[u][y] * block[y][x] * basis[v][x];
                            }
                        }
                        let q = table[u * 8 + v];
                        coef[u][v] = if q <= 1.0 { s } else { (s / q).round() * q };
                    }
                }
                // block = C^T * coef * C
                for y in 0..8 {
                    for x in 0..8 {
                        let mut s = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                s += basis[u][y] * coef[u][v] * basis[v][x];
                            }
                        }
                        if by + y < h && bx + x < w {
                            out.data[((by + y) * w + (bx + x)) * c + ch] = ((s + 128.0) / 255.0).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Image {
        let mut data = Vec::new();
        for i in 0..(16 * 16 * 3) {
            data.push((i as f64 * 0.37911).fract());
        }
        Image::new(16, 16, 3, data).unwrap()
    }

    #[test]
    fn gaussian_noise_sample_variance_tracks_severity_table() {
        // Large constant image: the sample variance of the added noise
        // estimates sigma^2.
        let img = Image::constant(64, 64, 3, 0.5);
        for sev in 1..=5u8 {
            let noisy = gaussian_noise(&img, sev, 42);
            let diffs: Vec<f64> = noisy.data.iter().map(|&v| v - 0.5).collect();
            let mean: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
            let sigma = GAUSSIAN_SIGMA[sev as usize - 1];
            assert!(
                (var.sqrt() - sigma).abs() < 0.15 * sigma,
                "sev {sev}: sample sigma {} vs {}",
                var.sqrt(),
                sigma
            );
        }
    }

    #[test]
    fn pixelate_of_constant_image_is_identity() {
        let img = Image::constant(13, 17, 3, 0.42);
        let out = pixelate(&img, 5);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jpeg_all_ones_table_is_identity() {
        // Quality 100 scales the base table down to all ones, which the
        // quantizer passes through.
        let t = jpeg_table(100);
        assert!(t.iter().all(|&q| q == 1.0));
        let img = test_image();
        let out = jpeg_compress(&img, 100);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn jpeg_severity_increases_distortion() {
        let img = test_image();
        let err = |sev: u8| -> f64 {
            let out = jpeg(&img, sev);
            out.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).sum()
        };
        assert!(err(5) > err(1));
    }

    #[test]
    fn tone_maps_darken_night_most() {
        let img = test_image();
        let lum = |im: &Image| im.data.iter().sum::<f64>();
        let night = lum(&tone_map(&img, NIGHT_TONE));
        let dawn = lum(&tone_map(&img, DAWN_TONE));
        let base = lum(&img);
        assert!(night < dawn && dawn < base);
    }

    #[test]
    fn channel_isolation_replicates_channel() {
        let img = test_image();
        let r = channel_isolate(&img, 0);
        for px in 0..img.pixel_count() {
            let v = img.data[px * 3];
            assert_eq!(r.data[px * 3], v);
            assert_eq!(r.data[px * 3 + 1], v);
            assert_eq!(r.data[px * 3 + 2], v);
        }
    }

    #[test]
    fn impulse_noise_fraction_scales_with_severity() {
        let img = Image::constant(64, 64, 3, 0.5);
        let changed = |sev: u8| -> usize {
            let out = impulse_noise(&img, sev, 7);
            (0..img.pixel_count()).filter(|&p| out.data[p * 3] != 0.5).count()
        };
        let low = changed(1);
        let high = changed(5);
        assert!(high > low * 3, "low {low}, high {high}");
    }

    #[test]
    fn blurs_preserve_constant_images() {
        let img = Image::constant(16, 16, 3, 0.37);
        for sev in [1u8, 3, 5] {
            assert!(defocus_blur(&img, sev).data.iter().all(|&v| (v - 0.37).abs() < 1e-12));
            assert!(motion_blur(&img, sev, 3).data.iter().all(|&v| (v - 0.37).abs() < 1e-12));
            assert!(zoom_blur(&img, sev).data.iter().all(|&v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn glass_blur_preserves_pixel_multiset() {
        let img = test_image();
        let out = glass_blur(&img, 3, 11);
        let mut a: Vec<u64> = img.data.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = out.data.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}
