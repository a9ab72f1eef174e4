//! Core raster types and bit-exact file I/O.
//!
//! Images hold `f64` values in `[0,1]`; quantization to 8 bits happens only
//! at the PPM/PGM boundary. Depth maps and other float fields persist as PFM
//! (`Pf`, scale `-1.0`, little-endian) which round-trips `f32` losslessly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} header: {detail}")]
    MalformedHeader { format: &'static str, detail: String },
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("big-endian PFM scale {0} is not supported (expected negative)")]
    BigEndianScale(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value out of range: {0}")]
    ValueOutOfRange(f64),
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
}

/// A color or grayscale image: row-major, channel-interleaved, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        if data.len() != height * width * channels {
            return Err(ImagingError::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ImagingError::ValueOutOfRange(v));
            }
        }
        Ok(Self { height, width, channels, data })
    }

    /// Constant-value image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("constant in range")
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

/// A per-pixel scalar field (depth, error map, mask); values unbounded unless
/// noted but always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != height * width {
            return Err(ImagingError::DimensionMismatch(format!(
                "data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        for &v in &data {
            if !v.is_finite() {
                return Err(ImagingError::ValueOutOfRange(v));
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }
}

/// Boolean per-pixel validity (in-frustum / in-bounds tracking).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

// ---------------------------------------------------------------------------
// PPM / PGM (binary, maxval 255)
// ---------------------------------------------------------------------------

fn read_pnm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // Skip whitespace and `#` comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Read a binary PPM (`P6`, 3 channels) or PGM (`P5`, 1 channel), maxval 255.
pub fn read_ppm<P: AsRef<Path>>(path: P) -> Result<Image, ImagingError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_ppm_bytes(&bytes)
}

pub fn read_ppm_bytes(bytes: &[u8]) -> Result<Image, ImagingError> {
    let mut pos = 0usize;
    let magic = read_pnm_token(bytes, &mut pos).ok_or(ImagingError::MalformedHeader {
        format: "PPM",
        detail: "missing magic".into(),
    })?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(ImagingError::MalformedHeader {
                format: "PPM",
                detail: format!("unknown magic {other:?}"),
            })
        }
    };
    let parse_dim = |tok: Option<String>| -> Result<usize, ImagingError> {
        tok.and_then(|t| t.parse::<usize>().ok())
            .ok_or(ImagingError::MalformedHeader { format: "PPM", detail: "bad dimension".into() })
    };
    let width = parse_dim(read_pnm_token(bytes, &mut pos))?;
    let height = parse_dim(read_pnm_token(bytes, &mut pos))?;
    let maxval: u32 = read_pnm_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or(ImagingError::MalformedHeader { format: "PPM", detail: "bad maxval".into() })?;
    if maxval != 255 {
        return Err(ImagingError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates header and payload.
    pos += 1;
    let expected = height * width * channels;
    let payload = bytes.get(pos..pos + expected).ok_or(ImagingError::TruncatedPayload {
        expected,
        got: bytes.len().saturating_sub(pos),
    })?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(height, width, channels, data)
}

/// Write a binary PPM (3 channels) or PGM (1 channel), maxval 255.
/// Values quantize as `round(v * 255)`.
pub fn write_ppm<P: AsRef<Path>>(image: &Image, path: P) -> Result<(), ImagingError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&ppm_bytes(image))?;
    out.flush()?;
    Ok(())
}

pub fn ppm_bytes(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    bytes
}

/// Write a `{0,255}` PGM from a binary map (values < 0.5 map to 0).
pub fn write_mask_pgm<P: AsRef<Path>>(mask: &ScalarMap, path: P) -> Result<(), ImagingError> {
    let data: Vec<f64> = mask.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let image = Image::new(mask.height, mask.width, 1, data)?;
    write_ppm(&image, path)
}

// ---------------------------------------------------------------------------
// PFM (grayscale `Pf`, scale -1.0 => little-endian, bottom-to-top rows)
// ---------------------------------------------------------------------------

/// Read a grayscale PFM. Only little-endian files (negative scale) are accepted.
pub fn read_pfm<P: AsRef<Path>>(path: P) -> Result<ScalarMap, ImagingError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_pfm_bytes(&bytes)
}

pub fn read_pfm_bytes(bytes: &[u8]) -> Result<ScalarMap, ImagingError> {
    let mut pos = 0usize;
    let magic = read_pnm_token(bytes, &mut pos).ok_or(ImagingError::MalformedHeader {
        format: "PFM",
        detail: "missing magic".into(),
    })?;
    if magic != "Pf" {
        return Err(ImagingError::MalformedHeader {
            format: "PFM",
            detail: format!("unknown magic {magic:?} (only grayscale Pf supported)"),
        });
    }
    let parse = |tok: Option<String>, what: &str| -> Result<f64, ImagingError> {
        tok.and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| ImagingError::MalformedHeader { format: "PFM", detail: format!("bad {what}") })
    };
    let width = parse(read_pnm_token(bytes, &mut pos), "width")? as usize;
    let height = parse(read_pnm_token(bytes, &mut pos), "height")? as usize;
    let scale = parse(read_pnm_token(bytes, &mut pos), "scale")?;
    if scale >= 0.0 {
        return Err(ImagingError::BigEndianScale(scale));
    }
    pos += 1;
    let expected = height * width * 4;
    let payload = bytes.get(pos..pos + expected).ok_or(ImagingError::TruncatedPayload {
        expected,
        got: bytes.len().saturating_sub(pos),
    })?;
    // PFM stores rows bottom-to-top.
    let mut data = vec![0.0f64; height * width];
    for row in 0..height {
        let src_row = height - 1 - row;
        for col in 0..width {
            let off = (src_row * width + col) * 4;
            let raw = [payload[off], payload[off + 1], payload[off + 2], payload[off + 3]];
            data[row * width + col] = f64::from(f32::from_le_bytes(raw));
        }
    }
    ScalarMap::new(height, width, data)
}

/// Write a grayscale PFM with scale `-1.0` (little-endian).
pub fn write_pfm<P: AsRef<Path>>(map: &ScalarMap, path: P) -> Result<(), ImagingError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&pfm_bytes(map))?;
    out.flush()?;
    Ok(())
}

pub fn pfm_bytes(map: &ScalarMap) -> Vec<u8> {
    let mut bytes = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for row in (0..map.height).rev() {
        for col in 0..map.width {
            bytes.extend((map.at(row, col) as f32).to_le_bytes());
        }
    }
    bytes
}

// ---------------------------------------------------------------------------
// Grayscale conversion (ITU-R 601 weights)
// ---------------------------------------------------------------------------

pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Convert a 3-channel image to luminance, replicated back to 3 channels.
pub fn to_grayscale(image: &Image) -> Result<Image, ImagingError> {
    if image.channels != 3 {
        return Err(ImagingError::ChannelMismatch { expected: 3, got: image.channels });
    }
    let mut data = Vec::with_capacity(image.data.len());
    for px in image.data.chunks_exact(3) {
        let y = (GRAY_WEIGHTS[0] * px[0] + GRAY_WEIGHTS[1] * px[1] + GRAY_WEIGHTS[2] * px[2]).clamp(0.0, 1.0);
        data.extend_from_slice(&[y, y, y]);
    }
    Image::new(image.height, image.width, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_all_white_maps_to_one() {
        let bytes = b"P6\n2 2\n255\n\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff";
        let img = read_ppm_bytes(bytes).unwrap();
        assert_eq!((img.height, img.width, img.channels), (2, 2, 3));
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ppm_byte_128_maps_to_128_over_255() {
        let bytes = b"P5\n1 1\n255\n\x80";
        let img = read_ppm_bytes(bytes).unwrap();
        assert_eq!(img.data[0], 128.0 / 255.0);
    }

    #[test]
    fn ppm_round_trip_is_byte_exact() {
        let mut payload = Vec::new();
        for i in 0..12u8 {
            payload.push(i.wrapping_mul(21));
        }
        let mut file = b"P6\n2 2\n255\n".to_vec();
        file.extend(&payload);
        let img = read_ppm_bytes(&file).unwrap();
        assert_eq!(ppm_bytes(&img), file);
    }

    #[test]
    fn ppm_rejects_bad_maxval_and_truncation() {
        assert!(matches!(read_ppm_bytes(b"P6\n1 1\n65535\n\0\0"), Err(ImagingError::UnsupportedMaxval(65535))));
        assert!(matches!(
            read_ppm_bytes(b"P6\n2 2\n255\n\0\0\0"),
            Err(ImagingError::TruncatedPayload { .. })
        ));
        assert!(matches!(read_ppm_bytes(b"P7\n1 1\n255\n\0"), Err(ImagingError::MalformedHeader { .. })));
    }

    #[test]
    fn pfm_constant_round_trip() {
        let map = ScalarMap::constant(3, 2, 5.0);
        let bytes = pfm_bytes(&map);
        let back = read_pfm_bytes(&bytes).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn pfm_preserves_exact_f32_values() {
        let map = ScalarMap::new(1, 2, vec![1.5, -2.25]).unwrap();
        let back = read_pfm_bytes(&pfm_bytes(&map)).unwrap();
        assert_eq!(back.data, vec![1.5, -2.25]);
        // Byte-level oracle: 1.5f32 little-endian, bottom row first.
        let bytes = pfm_bytes(&map);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[0..4], &1.5f32.to_le_bytes());
        assert_eq!(&payload[4..8], &(-2.25f32).to_le_bytes());
    }

    #[test]
    fn pfm_rejects_positive_scale() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend(1.0f32.to_be_bytes());
        assert!(matches!(read_pfm_bytes(&bytes), Err(ImagingError::BigEndianScale(_))));
    }

    #[test]
    fn pfm_file_round_trip_byte_exact() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [0.25f32, -7.5, 3.0e-3, 1.0e6] {
            bytes.extend(v.to_le_bytes());
        }
        let map = read_pfm_bytes(&bytes).unwrap();
        assert_eq!(pfm_bytes(&map), bytes);
    }

    #[test]
    fn grayscale_weights_and_idempotence() {
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&red).unwrap();
        assert!((g.data[0] - 0.299).abs() < 1e-15);
        assert_eq!(g.data[0], g.data[1]);
        assert_eq!(g.data[1], g.data[2]);

        let white = Image::constant(2, 2, 3, 1.0);
        let gw = to_grayscale(&white).unwrap();
        assert!(gw.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let twice = to_grayscale(&g).unwrap();
        assert_eq!(twice, g);
    }

    #[test]
    fn grayscale_rejects_single_channel() {
        let gray = Image::constant(1, 1, 1, 0.5);
        assert!(matches!(to_grayscale(&gray), Err(ImagingError::ChannelMismatch { .. })));
    }

    proptest! {
        #[test]
        fn ppm_quantized_round_trip(values in proptest::collection::vec(0u8..=255, 27)) {
            let data: Vec<f64> = values.iter().map(|&b| f64::from(b) / 255.0).collect();
            let img = Image::new(3, 3, 3, data).unwrap();
            let back = read_ppm_bytes(&ppm_bytes(&img)).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn pfm_round_trip_lossless_for_f32(values in proptest::collection::vec(-1.0e6f32..1.0e6, 12)) {
            let data: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
            let map = ScalarMap::new(3, 4, data).unwrap();
            let back = read_pfm_bytes(&pfm_bytes(&map)).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn grayscale_channel_permutation_of_gray_is_noop(v in 0.0f64..1.0) {
            let img = Image::new(1, 2, 3, vec![v, v, v, 1.0 - v, 1.0 - v, 1.0 - v]).unwrap();
            let g = to_grayscale(&img).unwrap();
            for px in 0..2 {
                let base = img.data[px * 3];
                prop_assert!((g.data[px * 3] - base).abs() < 1e-12);
            }
        }
    }
}
