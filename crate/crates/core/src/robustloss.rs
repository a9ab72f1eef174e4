//! Pair training with semi-augmented warping, bi-directional masked
//! pseudo-supervision for depth, pose pseudo-supervision, and the weighted
//! total loss.
//!
//! Two branches estimate the same scene: the unaugmented branch observes the
//! clean triplet, the augmented branch the augmented one. The augmented
//! branch's reprojection normally warps the *clean* sources with the
//! augmented branch's depth and the *clean* pose, which isolates its depth
//! from frame-inconsistent augmentation; toggles restore the naive warp to
//! reproduce the ablation rows. Per-pixel masks decide which branch's depth
//! serves as a stop-gradient regression target for the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::tape::{Dims, NodeId, Tape};
use crate::geometry::{Intrinsics, PoseParams, Z_EPS};
use crate::imaging::{Image, ScalarMap, ValidityMask};
use crate::photometric::{self, ErrorMap, PhotometricConfig, PhotometricError};
use crate::synth::TripletRecord;

#[derive(Debug, Error)]
pub enum RobustLossError {
    #[error("photometric error: {0}")]
    Photometric(#[from] PhotometricError),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("mask is not binary at index {0}")]
    NonBinaryMask(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty source list")]
    EmptySources,
    #[error("pose list length mismatch: {0} vs {1}")]
    PoseLengthMismatch(usize, usize),
    #[error("pyramid level {0} needs at least an 8x8 raster, got {1}x{2}")]
    RasterTooSmall(usize, usize, usize),
}

/// Weights of the pseudo-supervision, pose, and smoothness terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub omega: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { omega: 0.01, beta: 0.01, gamma: 0.001 }
    }
}

/// Ablation-row switches. All false with an augmented branch present is the
/// naive scheme (reconstruct augmented images from augmented inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AblationToggles {
    /// Add the clean branch's photometric term next to the augmented one.
    pub pair_training: bool,
    /// Warp clean sources against the clean target (instead of augmented).
    pub semi_warp_image: bool,
    /// Use the clean branch's pose in the augmented branch's warp.
    pub semi_warp_pose: bool,
    /// Bi-directional masked depth pseudo-supervision.
    pub pseudo_depth: bool,
    /// One-way pose pseudo-supervision (augmented toward clean).
    pub pseudo_pose: bool,
}

impl AblationToggles {
    pub fn full() -> Self {
        AblationToggles {
            pair_training: true,
            semi_warp_image: true,
            semi_warp_pose: true,
            pseudo_depth: true,
            pseudo_pose: true,
        }
    }
}

/// Sigmoid-disparity depth parametrization bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange { d_min: 0.1, d_max: 100.0 }
    }
}

impl DepthRange {
    /// `depth = 1 / (sigma * (1/d_min - 1/d_max) + 1/d_max)`.
    pub fn depth_of_sigma(&self, sigma: f64) -> f64 {
        1.0 / (sigma * (1.0 / self.d_min - 1.0 / self.d_max) + 1.0 / self.d_max)
    }
}

/// Free variables of one branch: unconstrained per-pixel disparity plus one
/// pose per source frame.
#[derive(Debug, Clone)]
pub struct BranchState {
    pub disp_raw: Vec<f64>,
    pub poses: [PoseParams; 2],
}

impl BranchState {
    pub fn neutral(pixel_count: usize) -> Self {
        BranchState { disp_raw: vec![0.0; pixel_count], poses: [PoseParams::identity(); 2] }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.disp_raw.iter().map(|&r| 1.0 / (1.0 + (-r).exp())).collect()
    }

    pub fn depth(&self, range: &DepthRange, height: usize, width: usize) -> ScalarMap {
        let data = self.sigma().iter().map(|&s| range.depth_of_sigma(s)).collect();
        ScalarMap::new(height, width, data).expect("finite depth")
    }
}

/// Variables of a triplet: the clean branch and, when augmentation is
/// active, the augmented branch.
#[derive(Debug, Clone)]
pub struct TripletVars {
    pub unaug: BranchState,
    pub aug: Option<BranchState>,
}

/// Scalar loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScalars {
    pub l_p: f64,
    pub l_a: f64,
    pub l_v: f64,
    pub l_ps: f64,
    pub l_r: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub total: f64,
}

/// Loss terms plus the level-0 per-pixel masks.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub scalars: LossScalars,
    pub mu: ScalarMap,
    pub mu_aug: Option<ScalarMap>,
    pub m_v: Option<ScalarMap>,
    pub m_a: Option<ScalarMap>,
}

// ---------------------------------------------------------------------------
// Plain-value operations
// ---------------------------------------------------------------------------

/// Reconstruct the augmented target from augmented inputs only.
pub fn naive_augmented_warp(
    aug_source: &Image,
    aug_depth: &ScalarMap,
    aug_pose: &PoseParams,
    k: &Intrinsics,
) -> Result<(Image, ValidityMask), RobustLossError> {
    Ok(crate::geometry::inverse_warp(aug_source, aug_depth, aug_pose, k)?)
}

/// Warp the clean source with the augmented branch's depth and the clean
/// branch's pose.
pub fn semi_augmented_warp(
    unaug_source: &Image,
    aug_depth: &ScalarMap,
    unaug_pose: &PoseParams,
    k: &Intrinsics,
) -> Result<(Image, ValidityMask), RobustLossError> {
    Ok(crate::geometry::inverse_warp(unaug_source, aug_depth, unaug_pose, k)?)
}

/// Pair photometric loss: both branches compare against the clean target and
/// each is masked by its own auto-mask; the result is the sum of the two
/// masked means (divided by the full pixel count).
pub fn pair_photometric_loss(
    target: &Image,
    warped_unaug: &[Image],
    warped_semi: &[Image],
    sources: &[Image],
    cfg: &PhotometricConfig,
) -> Result<(f64, ScalarMap, ScalarMap, ErrorMap, ErrorMap), RobustLossError> {
    if warped_unaug.is_empty() || warped_semi.is_empty() || sources.is_empty() {
        return Err(RobustLossError::EmptySources);
    }
    let pe_of = |warped: &[Image]| -> Result<ErrorMap, RobustLossError> {
        let maps: Vec<ScalarMap> =
            warped.iter().map(|w| photometric::pe(target, w, cfg)).collect::<Result<_, _>>()?;
        Ok(photometric::min_reprojection(&maps)?)
    };
    let err_unaug = pe_of(warped_unaug)?;
    let err_semi = pe_of(warped_semi)?;
    let mu = photometric::auto_mask(target, sources, warped_unaug, cfg)?;
    let mu_semi = photometric::auto_mask(target, sources, warped_semi, cfg)?;
    let n = mu.data.len() as f64;
    let masked_mean = |err: &ErrorMap, mask: &ScalarMap| -> f64 {
        err.values.data.iter().zip(&mask.data).map(|(&e, &m)| e * m).sum::<f64>() / n
    };
    let loss = masked_mean(&err_unaug, &mu) + masked_mean(&err_semi, &mu_semi);
    Ok((loss, mu, mu_semi, err_unaug, err_semi))
}

/// Iverson-bracket consistency masks gated by the auto-mask; strict
/// inequalities leave ties in neither mask.
pub fn consistency_masks(
    err_unaug: &ErrorMap,
    err_aug: &ErrorMap,
    mu: &ScalarMap,
) -> Result<(ScalarMap, ScalarMap), RobustLossError> {
    let n = mu.data.len();
    if err_unaug.values.data.len() != n || err_aug.values.data.len() != n {
        return Err(RobustLossError::DimensionMismatch("mask/error dims differ".into()));
    }
    if let Some(i) = mu.data.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(RobustLossError::NonBinaryMask(i));
    }
    let mut m_v = vec![0.0; n];
    let mut m_a = vec![0.0; n];
    for i in 0..n {
        if mu.data[i] == 0.0 {
            continue;
        }
        let u = err_unaug.values.data[i];
        let a = err_aug.values.data[i];
        if u < a {
            m_v[i] = 1.0;
        } else if a < u {
            m_a[i] = 1.0;
        }
    }
    Ok((
        ScalarMap::new(mu.height, mu.width, m_v).unwrap(),
        ScalarMap::new(mu.height, mu.width, m_a).unwrap(),
    ))
}

/// Bi-directional pseudo-supervision depth terms (values only; the
/// stop-gradient contract lives in the differentiable builder). Means divide
/// by the full pixel count.
pub fn pseudo_depth_loss(
    depth_unaug: &ScalarMap,
    depth_aug: &ScalarMap,
    m_v: &ScalarMap,
    m_a: &ScalarMap,
) -> Result<(f64, f64, f64), RobustLossError> {
    let n = depth_unaug.data.len();
    if depth_aug.data.len() != n || m_v.data.len() != n || m_a.data.len() != n {
        return Err(RobustLossError::DimensionMismatch("mask/depth dims differ".into()));
    }
    for m in [m_v, m_a] {
        if let Some(i) = m.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(RobustLossError::NonBinaryMask(i));
        }
    }
    let mut l_a = 0.0;
    let mut l_v = 0.0;
    for i in 0..n {
        let diff = (depth_aug.data[i] - depth_unaug.data[i]).abs();
        let term = (diff + 1.0).ln();
        l_a += term * m_v.data[i];
        l_v += term * m_a.data[i];
    }
    l_a /= n as f64;
    l_v /= n as f64;
    Ok((l_a, l_v, l_a + l_v))
}

/// One-way pose pseudo-supervision: component-mean L1 of (augmented minus
/// clean) rotation and translation.
pub fn pose_pseudo_loss(
    aug_poses: &[PoseParams],
    unaug_poses: &[PoseParams],
) -> Result<(f64, f64), RobustLossError> {
    if aug_poses.len() != unaug_poses.len() {
        return Err(RobustLossError::PoseLengthMismatch(aug_poses.len(), unaug_poses.len()));
    }
    let n = (aug_poses.len() * 3).max(1) as f64;
    let mut l_r = 0.0;
    let mut l_t = 0.0;
    for (a, u) in aug_poses.iter().zip(unaug_poses) {
        for i in 0..3 {
            l_r += (a.axis_angle[i] - u.axis_angle[i]).abs();
            l_t += (a.translation[i] - u.translation[i]).abs();
        }
    }
    Ok((l_r / n, l_t / n))
}

// ---------------------------------------------------------------------------
// Differentiable pipeline
// ---------------------------------------------------------------------------

/// Per-level constants of one triplet.
struct LevelData {
    k: Intrinsics,
    h: usize,
    w: usize,
    target: Image,
    sources: [Image; 2],
    target_aug: Option<Image>,
    sources_aug: Option<[Image; 2]>,
    dirx: Vec<f64>,
    diry: Vec<f64>,
    /// min over sources of pe(target, source): auto-mask reference.
    min_identity_pe_clean: Vec<f64>,
    min_identity_pe_aug: Option<Vec<f64>>,
}

/// Constant data of one triplet's loss graph, prepared once per run.
pub struct LossPipeline {
    levels: Vec<LevelData>,
    pub cfg: PhotometricConfig,
    pub weights: LossWeights,
    pub toggles: AblationToggles,
    pub depth_range: DepthRange,
    pub height: usize,
    pub width: usize,
    pub has_aug: bool,
}

/// Node ids of one triplet's variables inside a tape.
#[derive(Debug, Clone)]
pub struct TripletVarIds {
    pub disp_unaug: NodeId,
    pub disp_aug: Option<NodeId>,
    /// (rotation, translation) per source frame.
    pub poses_unaug: [(NodeId, NodeId); 2],
    pub poses_aug: Option<[(NodeId, NodeId); 2]>,
}

impl TripletVarIds {
    pub fn all_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.disp_unaug];
        if let Some(d) = self.disp_aug {
            ids.push(d);
        }
        for (r, t) in self.poses_unaug {
            ids.push(r);
            ids.push(t);
        }
        if let Some(poses) = self.poses_aug {
            for (r, t) in poses {
                ids.push(r);
                ids.push(t);
            }
        }
        ids
    }
}

pub struct BuiltTriplet {
    pub total: NodeId,
    pub vars: TripletVarIds,
    pub breakdown: LossBreakdown,
    /// Values of every stop-gradient buffer in creation order; feeding them
    /// back through [`LossPipeline::build_frozen`] evaluates the partial
    /// objective that the analytic gradient differentiates.
    pub stopgrad_values: Vec<Vec<f64>>,
}

fn pool_image(img: &Image) -> Image {
    let (h2, w2) = (img.height / 2, img.width / 2);
    let c = img.channels;
    let mut data = vec![0.0; h2 * w2 * c];
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let base = (2 * y * img.width + 2 * x) * c + ch;
                let sum = img.data[base]
                    + img.data[base + c]
                    + img.data[base + img.width * c]
                    + img.data[base + img.width * c + c];
                data[(y * w2 + x) * c + ch] = sum / 4.0;
            }
        }
    }
    Image { height: h2, width: w2, channels: c, data }
}

fn min_identity_pe(
    target: &Image,
    sources: &[Image; 2],
    cfg: &PhotometricConfig,
) -> Result<Vec<f64>, RobustLossError> {
    let pe0 = photometric::pe(target, &sources[0], cfg)?;
    let pe1 = photometric::pe(target, &sources[1], cfg)?;
    Ok(pe0.data.iter().zip(&pe1.data).map(|(&a, &b)| a.min(b)).collect())
}

impl LossPipeline {
    /// Prepare per-level constants for one triplet. `aug_frames` supplies the
    /// augmented counterparts in time order when an augmented branch exists.
    pub fn new(
        record: &TripletRecord,
        aug_frames: Option<&[Image; 3]>,
        pyramid_levels: usize,
        cfg: PhotometricConfig,
        weights: LossWeights,
        toggles: AblationToggles,
        depth_range: DepthRange,
    ) -> Result<Self, RobustLossError> {
        cfg.validate()?;
        let mut levels = Vec::new();
        let mut target = record.frames[1].clone();
        let mut sources = [record.frames[0].clone(), record.frames[2].clone()];
        let mut aug = aug_frames.map(|f| (f[1].clone(), [f[0].clone(), f[2].clone()]));
        if let Some((t, _)) = &aug {
            if t.height != target.height || t.width != target.width {
                return Err(RobustLossError::DimensionMismatch(
                    "augmented frames must match the clean raster".into(),
                ));
            }
        }
        for level in 0..pyramid_levels.max(1) {
            let k = record.k.at_level(level);
            let (h, w) = (target.height, target.width);
            if h < 8 || w < 8 {
                return Err(RobustLossError::RasterTooSmall(level, h, w));
            }
            let mut dirx = Vec::with_capacity(h * w);
            let mut diry = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    dirx.push((x as f64 - k.cx) / k.fx);
                    diry.push((y as f64 - k.cy) / k.fy);
                }
            }
            let min_identity_pe_clean = min_identity_pe(&target, &sources, &cfg)?;
            let (target_aug, sources_aug, min_identity_pe_aug) = match &aug {
                Some((t, s)) => {
                    let mid = min_identity_pe(t, s, &cfg)?;
                    (Some(t.clone()), Some(s.clone()), Some(mid))
                }
                None => (None, None, None),
            };
            levels.push(LevelData {
                k,
                h,
                w,
                target: target.clone(),
                sources: sources.clone(),
                target_aug,
                sources_aug,
                dirx,
                diry,
                min_identity_pe_clean,
                min_identity_pe_aug,
            });
            if level + 1 < pyramid_levels {
                target = pool_image(&target);
                sources = [pool_image(&sources[0]), pool_image(&sources[1])];
                aug = aug.map(|(t, s)| (pool_image(&t), [pool_image(&s[0]), pool_image(&s[1])]));
            }
        }
        let height = levels[0].h;
        let width = levels[0].w;
        let has_aug = aug_frames.is_some();
        Ok(LossPipeline { levels, cfg, weights, toggles, depth_range, height, width, has_aug })
    }

    /// Record the full loss graph for the given variable values. Returns the
    /// scalar total node, the variable node ids, and the loss breakdown.
    pub fn build(&self, tape: &mut Tape, vars: &TripletVars) -> BuiltTriplet {
        self.build_inner(tape, vars, None)
    }

    /// Like [`LossPipeline::build`], but pins every stop-gradient buffer to
    /// previously captured values, making the graph a plain function of the
    /// variables. Finite differences of this build match the analytic
    /// gradients of the unfrozen one.
    pub fn build_frozen(&self, tape: &mut Tape, vars: &TripletVars, frozen: &[Vec<f64>]) -> BuiltTriplet {
        self.build_inner(tape, vars, Some(frozen))
    }

    fn build_inner(&self, tape: &mut Tape, vars: &TripletVars, freeze: Option<&[Vec<f64>]>) -> BuiltTriplet {
        let mut sg_values: Vec<Vec<f64>> = Vec::new();
        let mut sg = |tape: &mut Tape, x: NodeId| -> NodeId {
            let node = match freeze {
                Some(vals) => {
                    let dims = tape.dims(x);
                    tape.constant(dims, vals[sg_values.len()].clone())
                }
                None => tape.stop_grad(x),
            };
            sg_values.push(tape.value(node).to_vec());
            node
        };
        let disp_unaug = tape.var(Dims::map(self.height, self.width), vars.unaug.disp_raw.clone());
        let poses_unaug = [0, 1].map(|s| {
            let p = &vars.unaug.poses[s];
            (
                tape.var(Dims::vector(3), p.axis_angle.to_vec()),
                tape.var(Dims::vector(3), p.translation.to_vec()),
            )
        });
        let (disp_aug, poses_aug) = match (&vars.aug, self.has_aug) {
            (Some(aug), true) => {
                let d = tape.var(Dims::map(self.height, self.width), aug.disp_raw.clone());
                let p = [0, 1].map(|s| {
                    let pp = &aug.poses[s];
                    (
                        tape.var(Dims::vector(3), pp.axis_angle.to_vec()),
                        tape.var(Dims::vector(3), pp.translation.to_vec()),
                    )
                });
                (Some(d), Some(p))
            }
            _ => (None, None),
        };
        let var_ids = TripletVarIds { disp_unaug, disp_aug, poses_unaug, poses_aug };

        let sigma_unaug0 = tape.logistic(disp_unaug);
        let sigma_aug0 = disp_aug.map(|d| tape.logistic(d));

        // The clean branch trains whenever it is the only branch or pair
        // training is on; the augmented branch always trains when present.
        let train_clean = !self.has_aug || self.toggles.pair_training;
        let need_clean_warp = train_clean || (self.has_aug && self.toggles.pseudo_depth);

        let mut level_totals = Vec::new();
        let mut sum =
            LossScalars { l_p: 0.0, l_a: 0.0, l_v: 0.0, l_ps: 0.0, l_r: 0.0, l_t: 0.0, l_s: 0.0, total: 0.0 };
        let mut maps0: Option<(ScalarMap, Option<ScalarMap>, Option<ScalarMap>, Option<ScalarMap>)> = None;

        // Pose pseudo-supervision is level-independent.
        let pose_loss = if self.has_aug && self.toggles.pseudo_pose {
            let ids_a = poses_aug.unwrap();
            let ids_u = poses_unaug;
            let mut r_terms = Vec::new();
            let mut t_terms = Vec::new();
            for s in 0..2 {
                let sg_r = sg(tape, ids_u[s].0);
                let dr = tape.sub(ids_a[s].0, sg_r);
                let ar = tape.abs(dr);
                r_terms.push(tape.mean_all(ar));
                let sg_t = sg(tape, ids_u[s].1);
                let dt = tape.sub(ids_a[s].1, sg_t);
                let at = tape.abs(dt);
                t_terms.push(tape.mean_all(at));
            }
            let half = tape.cscalar(0.5);
            let rs = tape.add(r_terms[0], r_terms[1]);
            let l_r = tape.mul(rs, half);
            let ts = tape.add(t_terms[0], t_terms[1]);
            let l_t = tape.mul(ts, half);
            Some((l_r, l_t))
        } else {
            None
        };
        if let Some((l_r, l_t)) = pose_loss {
            sum.l_r = tape.scalar_value(l_r);
            sum.l_t = tape.scalar_value(l_t);
        }

        let mut sigma_unaug = sigma_unaug0;
        let mut sigma_aug = sigma_aug0;
        for (li, level) in self.levels.iter().enumerate() {
            if li > 0 {
                sigma_unaug = tape.avg_pool2(sigma_unaug);
                sigma_aug = sigma_aug.map(|s| tape.avg_pool2(s));
            }
            let depth_unaug = self.depth_node(tape, sigma_unaug);
            let depth_aug = sigma_aug.map(|s| self.depth_node(tape, s));

            // Clean branch warps.
            let clean_minpe = if need_clean_warp {
                let pes = [0, 1].map(|s| {
                    let warped = self.warp_nodes(tape, level, &level.sources[s], depth_unaug, poses_unaug[s]);
                    let tgt = tape.constant_image(&level.target);
                    photometric::pe_nodes(tape, tgt, warped, &self.cfg)
                });
                Some(tape.min2(pes[0], pes[1]))
            } else {
                None
            };
            let mu_vals: Option<Vec<f64>> = clean_minpe.map(|mp| {
                tape.value(mp)
                    .iter()
                    .zip(&level.min_identity_pe_clean)
                    .map(|(&w, &s)| if w < s { 1.0 } else { 0.0 })
                    .collect()
            });

            // Augmented branch warps.
            let aug_minpe = if self.has_aug {
                let d = depth_aug.expect("aug branch needs aug vars");
                let pose_ids = if self.toggles.semi_warp_pose { poses_unaug } else { poses_aug.unwrap() };
                let (tgt_img, src_imgs): (&Image, &[Image; 2]) = if self.toggles.semi_warp_image {
                    (&level.target, &level.sources)
                } else {
                    (level.target_aug.as_ref().unwrap(), level.sources_aug.as_ref().unwrap())
                };
                let pes = [0, 1].map(|s| {
                    let warped = self.warp_nodes(tape, level, &src_imgs[s], d, pose_ids[s]);
                    let tgt = tape.constant_image(tgt_img);
                    photometric::pe_nodes(tape, tgt, warped, &self.cfg)
                });
                Some(tape.min2(pes[0], pes[1]))
            } else {
                None
            };
            let mu_aug_vals: Option<Vec<f64>> = aug_minpe.map(|mp| {
                let reference = if self.toggles.semi_warp_image {
                    &level.min_identity_pe_clean
                } else {
                    level.min_identity_pe_aug.as_ref().unwrap()
                };
                tape.value(mp)
                    .iter()
                    .zip(reference)
                    .map(|(&w, &s)| if w < s { 1.0 } else { 0.0 })
                    .collect()
            });

            // Photometric term: masked means over the full pixel count.
            let mut l_p_node: Option<NodeId> = None;
            let mut add_masked = |tape: &mut Tape, minpe: NodeId, mask: &[f64]| {
                let m = tape.constant(Dims::map(level.h, level.w), mask.to_vec());
                let masked = tape.mul(minpe, m);
                let mean = tape.mean_all(masked);
                l_p_node = Some(match l_p_node {
                    Some(prev) => tape.add(prev, mean),
                    None => mean,
                });
            };
            if train_clean {
                add_masked(tape, clean_minpe.unwrap(), mu_vals.as_ref().unwrap());
            }
            if self.has_aug {
                add_masked(tape, aug_minpe.unwrap(), mu_aug_vals.as_ref().unwrap());
            }
            let l_p_node = l_p_node.expect("at least one photometric term");

            // Bi-directional pseudo-supervision.
            let mut m_v_map: Option<Vec<f64>> = None;
            let mut m_a_map: Option<Vec<f64>> = None;
            let l_ps_node = if self.has_aug && self.toggles.pseudo_depth {
                let cp = tape.value(clean_minpe.expect("pseudo_depth needs the clean warp")).to_vec();
                let ap = tape.value(aug_minpe.unwrap()).to_vec();
                let mu = mu_vals.as_ref().unwrap();
                let mut mv = vec![0.0; cp.len()];
                let mut ma = vec![0.0; cp.len()];
                for i in 0..cp.len() {
                    if mu[i] == 0.0 {
                        continue;
                    }
                    if cp[i] < ap[i] {
                        mv[i] = 1.0;
                    } else if ap[i] < cp[i] {
                        ma[i] = 1.0;
                    }
                }
                let da = depth_aug.unwrap();
                let one = tape.cscalar(1.0);
                // L_a: gradient reaches only the augmented depth.
                let sg_u = sg(tape, depth_unaug);
                let diff_a = tape.sub(da, sg_u);
                let abs_a = tape.abs(diff_a);
                let shift_a = tape.add(abs_a, one);
                let log_a = tape.ln(shift_a);
                let mv_const = tape.constant(Dims::map(level.h, level.w), mv.clone());
                let masked_a = tape.mul(log_a, mv_const);
                let l_a = tape.mean_all(masked_a);
                // L_v: gradient reaches only the clean depth.
                let sg_a = sg(tape, da);
                let diff_v = tape.sub(depth_unaug, sg_a);
                let abs_v = tape.abs(diff_v);
                let shift_v = tape.add(abs_v, one);
                let log_v = tape.ln(shift_v);
                let ma_const = tape.constant(Dims::map(level.h, level.w), ma.clone());
                let masked_v = tape.mul(log_v, ma_const);
                let l_v = tape.mean_all(masked_v);
                let l_ps = tape.add(l_a, l_v);
                sum.l_a += tape.scalar_value(l_a);
                sum.l_v += tape.scalar_value(l_v);
                m_v_map = Some(mv);
                m_a_map = Some(ma);
                Some(l_ps)
            } else {
                None
            };

            // Edge-aware smoothness over the trained branches' disparities.
            let mut smooth_terms: Vec<NodeId> = Vec::new();
            if train_clean {
                let img = tape.constant_image(&level.target);
                smooth_terms.push(photometric::smoothness_nodes(tape, sigma_unaug, img));
            }
            if self.has_aug {
                let img_ref = level.target_aug.as_ref().unwrap_or(&level.target);
                let img = tape.constant_image(img_ref);
                smooth_terms.push(photometric::smoothness_nodes(tape, sigma_aug.unwrap(), img));
            }
            let l_s_node = {
                let mut it = smooth_terms.iter();
                let first = *it.next().expect("at least one smoothness term");
                let combined = it.fold(first, |acc, &t| tape.add(acc, t));
                if smooth_terms.len() > 1 {
                    let inv = tape.cscalar(1.0 / smooth_terms.len() as f64);
                    tape.mul(combined, inv)
                } else {
                    combined
                }
            };

            // Per-level total.
            let gamma = tape.cscalar(self.weights.gamma);
            let gs = tape.mul(l_s_node, gamma);
            let mut level_total = tape.add(l_p_node, gs);
            if let Some(lps) = l_ps_node {
                let omega = tape.cscalar(self.weights.omega);
                let w_lps = tape.mul(lps, omega);
                level_total = tape.add(level_total, w_lps);
            }
            level_totals.push(level_total);

            sum.l_p += tape.scalar_value(l_p_node);
            if let Some(lps) = l_ps_node {
                sum.l_ps += tape.scalar_value(lps);
            }
            sum.l_s += tape.scalar_value(l_s_node);

            if li == 0 {
                let zeros = || vec![0.0; level.h * level.w];
                let mu0 = ScalarMap::new(level.h, level.w, mu_vals.clone().unwrap_or_else(zeros)).unwrap();
                let mua0 =
                    mu_aug_vals.as_ref().map(|m| ScalarMap::new(level.h, level.w, m.clone()).unwrap());
                let mv0 = m_v_map.as_ref().map(|m| ScalarMap::new(level.h, level.w, m.clone()).unwrap());
                let ma0 = m_a_map.as_ref().map(|m| ScalarMap::new(level.h, level.w, m.clone()).unwrap());
                maps0 = Some((mu0, mua0, mv0, ma0));
            }
        }

        // Equal-weight level average plus the pose terms.
        let num_levels = level_totals.len();
        let mut total = level_totals[0];
        for lt in level_totals.iter().skip(1) {
            total = tape.add(total, *lt);
        }
        if num_levels > 1 {
            let inv = tape.cscalar(1.0 / num_levels as f64);
            total = tape.mul(total, inv);
        }
        if let Some((l_r, l_t)) = pose_loss {
            let beta = tape.cscalar(self.weights.beta);
            let pose_sum = tape.add(l_r, l_t);
            let weighted = tape.mul(pose_sum, beta);
            total = tape.add(total, weighted);
        }

        let inv_levels = 1.0 / num_levels as f64;
        let scalars = LossScalars {
            l_p: sum.l_p * inv_levels,
            l_a: sum.l_a * inv_levels,
            l_v: sum.l_v * inv_levels,
            l_ps: sum.l_ps * inv_levels,
            l_r: sum.l_r,
            l_t: sum.l_t,
            l_s: sum.l_s * inv_levels,
            total: tape.scalar_value(total),
        };
        let (mu, mu_aug, m_v, m_a) = maps0.unwrap();
        BuiltTriplet {
            total,
            vars: var_ids,
            breakdown: LossBreakdown { scalars, mu, mu_aug, m_v, m_a },
            stopgrad_values: sg_values,
        }
    }

    fn depth_node(&self, tape: &mut Tape, sigma: NodeId) -> NodeId {
        let a = tape.cscalar(1.0 / self.depth_range.d_min - 1.0 / self.depth_range.d_max);
        let b = tape.cscalar(1.0 / self.depth_range.d_max);
        let scaled = tape.mul(sigma, a);
        let denom = tape.add(scaled, b);
        let one = tape.cscalar(1.0);
        tape.div(one, denom)
    }

    /// Differentiable inverse warp of a (constant) source image by the given
    /// depth node and pose variable nodes.
    fn warp_nodes(
        &self,
        tape: &mut Tape,
        level: &LevelData,
        source: &Image,
        depth: NodeId,
        pose: (NodeId, NodeId),
    ) -> NodeId {
        let (rot, trans) = pose;
        let x = tape.index(rot, 0);
        let y = tape.index(rot, 1);
        let z = tape.index(rot, 2);
        let xx = tape.mul(x, x);
        let yy = tape.mul(y, y);
        let zz = tape.mul(z, z);
        let xy = tape.mul(x, y);
        let xz = tape.mul(x, z);
        let yz = tape.mul(y, z);
        let xy_sum = tape.add(xx, yy);
        let u_sq = tape.add(xy_sum, zz);
        let ca = tape.rot_coeff_a(u_sq);
        let cb = tape.rot_coeff_b(u_sq);
        let one = tape.cscalar(1.0);

        // R = I + a K + b K^2 entries as scalar nodes.
        let yy_zz = tape.add(yy, zz);
        let b_yy_zz = tape.mul(cb, yy_zz);
        let r00 = tape.sub(one, b_yy_zz);
        let xx_zz = tape.add(xx, zz);
        let b_xx_zz = tape.mul(cb, xx_zz);
        let r11 = tape.sub(one, b_xx_zz);
        let b_xx_yy = tape.mul(cb, xy_sum);
        let r22 = tape.sub(one, b_xx_yy);
        let az = tape.mul(ca, z);
        let ay = tape.mul(ca, y);
        let ax = tape.mul(ca, x);
        let bxy = tape.mul(cb, xy);
        let bxz = tape.mul(cb, xz);
        let byz = tape.mul(cb, yz);
        let neg_az = tape.neg(az);
        let r01 = tape.add(neg_az, bxy);
        let r02 = tape.add(ay, bxz);
        let r10 = tape.add(az, bxy);
        let neg_ax = tape.neg(ax);
        let r12 = tape.add(neg_ax, byz);
        let neg_ay = tape.neg(ay);
        let r20 = tape.add(neg_ay, bxz);
        let r21 = tape.add(ax, byz);

        let t0 = tape.index(trans, 0);
        let t1 = tape.index(trans, 1);
        let t2 = tape.index(trans, 2);

        let dims = Dims::map(level.h, level.w);
        let dirx = tape.constant(dims, level.dirx.clone());
        let diry = tape.constant(dims, level.diry.clone());
        let px = tape.mul(depth, dirx);
        let py = tape.mul(depth, diry);
        let pz = depth;

        let mut row = |ra: NodeId, rb: NodeId, rc: NodeId, t: NodeId| {
            let a = tape.mul(px, ra);
            let b = tape.mul(py, rb);
            let c = tape.mul(pz, rc);
            let ab = tape.add(a, b);
            let abc = tape.add(ab, c);
            tape.add(abc, t)
        };
        let qx = row(r00, r01, r02, t0);
        let qy = row(r10, r11, r12, t1);
        let qz = row(r20, r21, r22, t2);
        let qz_safe = tape.clamp_min(qz, Z_EPS);

        let fx = tape.cscalar(level.k.fx);
        let fy = tape.cscalar(level.k.fy);
        let cx = tape.cscalar(level.k.cx);
        let cy = tape.cscalar(level.k.cy);
        let xn = tape.div(qx, qz_safe);
        let yn = tape.div(qy, qz_safe);
        let uf = tape.mul(xn, fx);
        let u_px = tape.add(uf, cx);
        let vf = tape.mul(yn, fy);
        let v_px = tape.add(vf, cy);

        let src = tape.constant_image(source);
        tape.bilinear_gather(src, u_px, v_px)
    }
}
