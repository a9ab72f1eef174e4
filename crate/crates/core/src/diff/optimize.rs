//! Direct optimization of per-pixel disparity and camera pose.
//!
//! Each step rebuilds the loss tape over every triplet (the argmin/mask
//! routing is re-recorded), averages the triplet totals, back-propagates,
//! and applies Adam per variable. Runs are bit-deterministic under a fixed
//! seed: initialization, data order, and reductions are all fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::diff::adam::{AdamHyper, AdamState, LrSchedule};
use crate::diff::tape::Tape;
use crate::imaging::Image;
use crate::photometric::PhotometricConfig;
use crate::robustloss::{
    AblationToggles, BranchState, DepthRange, LossBreakdown, LossPipeline, LossScalars, RobustLossError,
    TripletVars,
};
use crate::synth::TripletRecord;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("loss pipeline error: {0}")]
    Pipeline(#[from] RobustLossError),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize, diagnostics: Box<Vec<LossBreakdown>> },
    #[error("no triplets to optimize")]
    EmptyDataset,
}

/// Settings of one optimization run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub steps: usize,
    pub lr: f64,
    /// Learning-rate decay milestones as fractions of the step budget.
    pub lr_milestone_fractions: Vec<f64>,
    pub lr_decay: f64,
    pub seed: u64,
    pub pyramid_levels: usize,
    pub weights: crate::robustloss::LossWeights,
    pub toggles: AblationToggles,
    pub photometric: PhotometricConfig,
    pub depth_range: DepthRange,
    /// Standard deviation of the pose initialization jitter.
    pub pose_jitter: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            steps: 2000,
            lr: 1e-4,
            lr_milestone_fractions: vec![2.0 / 3.0, 5.0 / 6.0, 29.0 / 30.0],
            lr_decay: 0.1,
            seed: 0,
            pyramid_levels: 1,
            weights: Default::default(),
            toggles: Default::default(),
            photometric: Default::default(),
            depth_range: Default::default(),
            pose_jitter: 0.01,
        }
    }
}

/// One line of the step log.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub scalars: LossScalars,
}

pub struct RunResult {
    pub vars: Vec<TripletVars>,
    pub log: Vec<StepRecord>,
    /// Breakdown of the final state (fresh forward pass after the last step).
    pub final_breakdowns: Vec<LossBreakdown>,
}

/// Neutral disparity (sigma 0.5 everywhere) plus identity-with-jitter poses.
/// The jitter is shared between the two branches so that an identity
/// augmentation starts from exactly equal branch states.
pub fn init_vars(
    records: &[TripletRecord],
    with_aug: bool,
    seed: u64,
    pose_jitter: f64,
) -> Vec<TripletVars> {
    let mut out = Vec::with_capacity(records.len());
    for (t, rec) in records.iter().enumerate() {
        let n = rec.frames[1].pixel_count();
        let mut branch = BranchState::neutral(n);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::augment::mix_seed(&[seed, t as u64, 0x905e]));
        if pose_jitter > 0.0 {
            let normal = Normal::new(0.0, pose_jitter).unwrap();
            for pose in branch.poses.iter_mut() {
                for i in 0..3 {
                    pose.axis_angle[i] = normal.sample(&mut rng);
                }
                for i in 0..3 {
                    pose.translation[i] = normal.sample(&mut rng);
                }
            }
        }
        let aug = with_aug.then(|| branch.clone());
        out.push(TripletVars { unaug: branch, aug });
    }
    out
}

fn mean_scalars(parts: &[LossScalars]) -> LossScalars {
    let n = parts.len().max(1) as f64;
    let mut acc = LossScalars { l_p: 0.0, l_a: 0.0, l_v: 0.0, l_ps: 0.0, l_r: 0.0, l_t: 0.0, l_s: 0.0, total: 0.0 };
    for p in parts {
        acc.l_p += p.l_p;
        acc.l_a += p.l_a;
        acc.l_v += p.l_v;
        acc.l_ps += p.l_ps;
        acc.l_r += p.l_r;
        acc.l_t += p.l_t;
        acc.l_s += p.l_s;
        acc.total += p.total;
    }
    LossScalars {
        l_p: acc.l_p / n,
        l_a: acc.l_a / n,
        l_v: acc.l_v / n,
        l_ps: acc.l_ps / n,
        l_r: acc.l_r / n,
        l_t: acc.l_t / n,
        l_s: acc.l_s / n,
        total: acc.total / n,
    }
}

/// Run the optimization. `aug_frames`, when present, holds the augmented
/// triplet frames (time order) per record and activates the augmented branch.
pub fn optimize(
    records: &[TripletRecord],
    aug_frames: Option<&[[Image; 3]]>,
    settings: &RunSettings,
) -> Result<RunResult, OptimizeError> {
    if records.is_empty() {
        return Err(OptimizeError::EmptyDataset);
    }
    let with_aug = aug_frames.is_some();
    let mut pipelines = Vec::with_capacity(records.len());
    for (t, rec) in records.iter().enumerate() {
        let aug = aug_frames.map(|a| &a[t]);
        pipelines.push(LossPipeline::new(
            rec,
            aug,
            settings.pyramid_levels,
            settings.photometric,
            settings.weights,
            settings.toggles,
            settings.depth_range,
        )?);
    }
    let mut vars = init_vars(records, with_aug, settings.seed, settings.pose_jitter);

    let hyper = AdamHyper { lr: settings.lr, ..Default::default() };
    let schedule = LrSchedule::from_fractions(&settings.lr_milestone_fractions, settings.steps, settings.lr_decay);

    // Adam state per triplet: disparity maps and pose vectors per branch.
    struct TripletAdam {
        disp_unaug: AdamState,
        disp_aug: Option<AdamState>,
        poses_unaug: [(AdamState, AdamState); 2],
        poses_aug: Option<[(AdamState, AdamState); 2]>,
    }
    let mut adam: Vec<TripletAdam> = vars
        .iter()
        .map(|v| TripletAdam {
            disp_unaug: AdamState::zeros(v.unaug.disp_raw.len()),
            disp_aug: v.aug.as_ref().map(|a| AdamState::zeros(a.disp_raw.len())),
            poses_unaug: [(AdamState::zeros(3), AdamState::zeros(3)), (AdamState::zeros(3), AdamState::zeros(3))],
            poses_aug: v.aug.as_ref().map(|_| {
                [(AdamState::zeros(3), AdamState::zeros(3)), (AdamState::zeros(3), AdamState::zeros(3))]
            }),
        })
        .collect();

    let mut log = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let lr = schedule.lr_at(hyper.lr, step);
        let mut tape = Tape::new();
        let mut built = Vec::with_capacity(records.len());
        for (pipeline, v) in pipelines.iter().zip(&vars) {
            built.push(pipeline.build(&mut tape, v));
        }
        // Mean total over triplets.
        let mut total = built[0].total;
        for b in built.iter().skip(1) {
            total = tape.add(total, b.total);
        }
        if built.len() > 1 {
            let inv = tape.cscalar(1.0 / built.len() as f64);
            total = tape.mul(total, inv);
        }
        let total_value = tape.scalar_value(total);
        if !total_value.is_finite() {
            let diagnostics = built.into_iter().map(|b| b.breakdown).collect();
            return Err(OptimizeError::NonFinite { step, diagnostics: Box::new(diagnostics) });
        }
        let grads = tape.backward(total);

        let scalars = mean_scalars(&built.iter().map(|b| b.breakdown.scalars).collect::<Vec<_>>());
        log.push(StepRecord { step, lr, scalars });

        let adam_step = step + 1;
        for (t, b) in built.iter().enumerate() {
            let ids = &b.vars;
            let v = &mut vars[t];
            let st = &mut adam[t];
            let g = grads.get_or_zeros(ids.disp_unaug, v.unaug.disp_raw.len());
            st.disp_unaug.update(&mut v.unaug.disp_raw, &g, &hyper, lr, adam_step);
            for s in 0..2 {
                let (rid, tid) = ids.poses_unaug[s];
                let gr = grads.get_or_zeros(rid, 3);
                st.poses_unaug[s].0.update(&mut v.unaug.poses[s].axis_angle, &gr, &hyper, lr, adam_step);
                let gt = grads.get_or_zeros(tid, 3);
                st.poses_unaug[s].1.update(&mut v.unaug.poses[s].translation, &gt, &hyper, lr, adam_step);
            }
            if let (Some(did), Some(aug)) = (ids.disp_aug, v.aug.as_mut()) {
                let ga = grads.get_or_zeros(did, aug.disp_raw.len());
                st.disp_aug.as_mut().unwrap().update(&mut aug.disp_raw, &ga, &hyper, lr, adam_step);
                let pose_ids = ids.poses_aug.unwrap();
                let pose_states = st.poses_aug.as_mut().unwrap();
                for s in 0..2 {
                    let (rid, tid) = pose_ids[s];
                    let gr = grads.get_or_zeros(rid, 3);
                    pose_states[s].0.update(&mut aug.poses[s].axis_angle, &gr, &hyper, lr, adam_step);
                    let gt = grads.get_or_zeros(tid, 3);
                    pose_states[s].1.update(&mut aug.poses[s].translation, &gt, &hyper, lr, adam_step);
                }
            }
        }
    }

    // Final forward pass for end-state breakdowns and maps.
    let mut tape = Tape::new();
    let final_breakdowns: Vec<LossBreakdown> = pipelines
        .iter()
        .zip(&vars)
        .map(|(p, v)| p.build(&mut tape, v).breakdown)
        .collect();

    Ok(RunResult { vars, log, final_breakdowns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_scene, default_intrinsics, make_triplet, sample_trajectory, ScenePreset};

    fn small_record(seed: u64) -> TripletRecord {
        let scene = build_scene(ScenePreset::GroundAndWalls, seed);
        let traj = sample_trajectory(seed, default_intrinsics(24, 16));
        make_triplet(&scene, &traj, 16, 24).unwrap()
    }

    #[test]
    fn zero_steps_returns_initial_state() {
        let rec = small_record(1);
        let settings = RunSettings { steps: 0, seed: 5, ..Default::default() };
        let result = optimize(std::slice::from_ref(&rec), None, &settings).unwrap();
        let fresh = init_vars(std::slice::from_ref(&rec), false, 5, settings.pose_jitter);
        assert_eq!(result.vars[0].unaug.disp_raw, fresh[0].unaug.disp_raw);
        assert_eq!(result.vars[0].unaug.poses[0].translation, fresh[0].unaug.poses[0].translation);
        assert!(result.log.is_empty());
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        let rec = small_record(2);
        let settings = RunSettings { steps: 5, seed: 9, ..Default::default() };
        let a = optimize(std::slice::from_ref(&rec), None, &settings).unwrap();
        let b = optimize(std::slice::from_ref(&rec), None, &settings).unwrap();
        assert_eq!(a.vars[0].unaug.disp_raw, b.vars[0].unaug.disp_raw);
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.scalars.total.to_bits(), rb.scalars.total.to_bits());
        }
    }

    #[test]
    fn loss_decreases_on_short_clean_run() {
        let rec = small_record(3);
        let settings = RunSettings { steps: 60, seed: 1, ..Default::default() };
        let result = optimize(std::slice::from_ref(&rec), None, &settings).unwrap();
        let first = result.log.first().unwrap().scalars.total;
        let last = result.log.last().unwrap().scalars.total;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn branch_jitter_is_shared_at_init() {
        let rec = small_record(4);
        let vars = init_vars(std::slice::from_ref(&rec), true, 11, 0.01);
        let u = &vars[0].unaug;
        let a = vars[0].aug.as_ref().unwrap();
        assert_eq!(u.poses[0].axis_angle, a.poses[0].axis_angle);
        assert_eq!(u.poses[1].translation, a.poses[1].translation);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let settings = RunSettings::default();
        assert!(matches!(optimize(&[], None, &settings), Err(OptimizeError::EmptyDataset)));
    }
}
