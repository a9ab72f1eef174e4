//! Central finite-difference verification of the loss pipeline gradients.
//!
//! The objective is piecewise smooth: per-pixel minima, auto-masks,
//! consistency masks, absolute values, depth clamps, and bilinear cell
//! indices all switch branches at measure-zero sets. A finite difference
//! across such a switch compares different smooth pieces and is meaningless,
//! so each probe evaluates the tape's discrete signature at both ends; a
//! point counts as *tie-free* only when every probed component keeps the
//! signature of the center evaluation. Points that fail are resampled.
//!
//! Comparison uses relative error with an absolute floor:
//! `|a - fd| / max(|a|, |fd|, floor)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::tape::Tape;
use crate::robustloss::{BranchState, LossPipeline, TripletVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSlot {
    DispUnaug,
    DispAug,
    RotUnaug(usize),
    TransUnaug(usize),
    RotAug(usize),
    TransAug(usize),
}

impl std::fmt::Display for VarSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VarSlot::DispUnaug => write!(f, "disparity[clean]"),
            VarSlot::DispAug => write!(f, "disparity[aug]"),
            VarSlot::RotUnaug(s) => write!(f, "rotation[clean,{s}]"),
            VarSlot::TransUnaug(s) => write!(f, "translation[clean,{s}]"),
            VarSlot::RotAug(s) => write!(f, "rotation[aug,{s}]"),
            VarSlot::TransAug(s) => write!(f, "translation[aug,{s}]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComponentFailure {
    pub point: usize,
    pub slot: VarSlot,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub points_requested: usize,
    pub points_tested: usize,
    pub components_checked: usize,
    pub resampled_points: usize,
    pub max_rel_error: f64,
    pub failures: Vec<ComponentFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.points_tested >= self.points_requested
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckSettings {
    pub points: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
    /// Attempt budget for finding tie-free points.
    pub max_attempts: usize,
    /// Raw-disparity sampling band. The default maps to depths around one
    /// scene unit, where the projection Jacobian (f/z) is gentle enough that
    /// central-difference truncation stays well under the tolerance; check
    /// against scenes whose geometry sits at that scale.
    pub disp_raw_range: (f64, f64),
    /// Pose component sampling half-ranges (rotation, translation).
    pub pose_range: (f64, f64),
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            points: 20,
            eps: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
            max_attempts: 400,
            disp_raw_range: (-2.74, -1.74),
            pose_range: (0.02, 0.03),
        }
    }
}

pub fn rel_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

fn component_mut(vars: &mut TripletVars, slot: VarSlot, index: usize) -> &mut f64 {
    match slot {
        VarSlot::DispUnaug => &mut vars.unaug.disp_raw[index],
        VarSlot::DispAug => &mut vars.aug.as_mut().unwrap().disp_raw[index],
        VarSlot::RotUnaug(s) => &mut vars.unaug.poses[s].axis_angle[index],
        VarSlot::TransUnaug(s) => &mut vars.unaug.poses[s].translation[index],
        VarSlot::RotAug(s) => &mut vars.aug.as_mut().unwrap().poses[s].axis_angle[index],
        VarSlot::TransAug(s) => &mut vars.aug.as_mut().unwrap().poses[s].translation[index],
    }
}

fn random_vars(pipeline: &LossPipeline, settings: &GradcheckSettings, rng: &mut ChaCha8Rng) -> TripletVars {
    let n = pipeline.height * pipeline.width;
    let (raw_lo, raw_hi) = settings.disp_raw_range;
    let (rot_r, trans_r) = settings.pose_range;
    let mut draw_branch = |rng: &mut ChaCha8Rng| {
        let mut b = BranchState::neutral(n);
        for v in b.disp_raw.iter_mut() {
            *v = rng.gen_range(raw_lo..raw_hi);
        }
        for p in b.poses.iter_mut() {
            for i in 0..3 {
                p.axis_angle[i] = rng.gen_range(-rot_r..rot_r);
                p.translation[i] = rng.gen_range(-trans_r..trans_r);
            }
        }
        b
    };
    let unaug = draw_branch(rng);
    let aug = pipeline.has_aug.then(|| {
        let mut a = draw_branch(rng);
        // Keep branches distinct so the consistency masks are non-trivial.
        for v in a.disp_raw.iter_mut() {
            *v += 0.05;
        }
        a
    });
    TripletVars { unaug, aug }
}

/// Check analytic gradients of the full pipeline against central finite
/// differences on random tie-free points.
pub fn gradcheck_pipeline(pipeline: &LossPipeline, settings: &GradcheckSettings) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut report = GradcheckReport {
        points_requested: settings.points,
        points_tested: 0,
        components_checked: 0,
        resampled_points: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };

    let n = pipeline.height * pipeline.width;
    let mut slots: Vec<(VarSlot, usize)> = Vec::new();
    for i in 0..n {
        slots.push((VarSlot::DispUnaug, i));
    }
    if pipeline.has_aug {
        for i in 0..n {
            slots.push((VarSlot::DispAug, i));
        }
    }
    for s in 0..2 {
        for i in 0..3 {
            slots.push((VarSlot::RotUnaug(s), i));
            slots.push((VarSlot::TransUnaug(s), i));
            if pipeline.has_aug {
                slots.push((VarSlot::RotAug(s), i));
                slots.push((VarSlot::TransAug(s), i));
            }
        }
    }

    let mut attempts = 0;
    while report.points_tested < settings.points && attempts < settings.max_attempts {
        attempts += 1;
        let vars = random_vars(pipeline, settings, &mut rng);
        let mut center_tape = Tape::new();
        let built = pipeline.build(&mut center_tape, &vars);
        let sig0 = center_tape.discrete_signature();
        let grads = center_tape.backward(built.total);

        let analytic_of = |slot: VarSlot, index: usize| -> f64 {
            let id = match slot {
                VarSlot::DispUnaug => built.vars.disp_unaug,
                VarSlot::DispAug => built.vars.disp_aug.unwrap(),
                VarSlot::RotUnaug(s) => built.vars.poses_unaug[s].0,
                VarSlot::TransUnaug(s) => built.vars.poses_unaug[s].1,
                VarSlot::RotAug(s) => built.vars.poses_aug.unwrap()[s].0,
                VarSlot::TransAug(s) => built.vars.poses_aug.unwrap()[s].1,
            };
            grads.get(id).map(|g| g[index]).unwrap_or(0.0)
        };

        let mut point_failures = Vec::new();
        let mut point_max = 0.0f64;
        let mut kinked = false;
        for &(slot, index) in &slots {
            // Finite differences evaluate the partial objective with the
            // stop-gradient buffers frozen at the center values; that is the
            // function the analytic gradient differentiates.
            let eval = |delta: f64| -> (f64, u64) {
                let mut v = vars.clone();
                *component_mut(&mut v, slot, index) += delta;
                let mut tape = Tape::new();
                let b = pipeline.build_frozen(&mut tape, &v, &built.stopgrad_values);
                (tape.scalar_value(b.total), tape.discrete_signature())
            };
            let (fp, sp) = eval(settings.eps);
            let (fm, sm) = eval(-settings.eps);
            if sp != sig0 || sm != sig0 {
                kinked = true;
                break;
            }
            let fd = (fp - fm) / (2.0 * settings.eps);
            let analytic = analytic_of(slot, index);
            let rel = rel_error(analytic, fd, settings.floor);
            point_max = point_max.max(rel);
            if rel > settings.tolerance {
                point_failures.push(ComponentFailure {
                    point: report.points_tested,
                    slot,
                    index,
                    analytic,
                    fd,
                    rel_error: rel,
                });
            }
        }
        if kinked {
            report.resampled_points += 1;
            continue;
        }
        report.points_tested += 1;
        report.components_checked += slots.len();
        report.max_rel_error = report.max_rel_error.max(point_max);
        report.failures.extend(point_failures);
    }
    report
}
