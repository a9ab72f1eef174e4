//! Differentiable view-synthesis laboratory.
//!
//! The crate optimizes per-pixel disparity and camera pose directly against
//! photometric reprojection losses on procedurally generated scenes with
//! exact ground truth. It provides:
//!
//! - [`imaging`]: raster types and bit-exact PPM/PFM/PGM I/O
//! - [`geometry`]: pinhole projection, axis-angle poses, inverse warping
//! - [`photometric`]: SSIM, photometric error, min-reprojection, auto-masking,
//!   edge-aware smoothness
//! - [`robustloss`]: pair training, semi-augmented warping, bi-directional
//!   masked pseudo-supervision for depth, pose pseudo-supervision, and the
//!   weighted total loss
//! - [`augment`]: deterministic, seedable weather / corruption / positional
//!   augmentations with per-scene or per-frame parameter consistency
//! - [`synth`]: plane-scene renderer producing photometrically consistent
//!   triplets with exact depth and pose
//! - [`diff`]: reverse-mode differentiation tape, Adam, the optimization
//!   loop, and a finite-difference gradient checker
//! - [`metrics`]: the seven standard depth-evaluation metrics

pub mod augment;
pub mod diff;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod photometric;
pub mod robustloss;
pub mod synth;
