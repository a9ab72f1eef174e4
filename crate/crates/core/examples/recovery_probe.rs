//! Quick probe of clean-scene recovery quality at acceptance settings.

use warplab::diff::optimize::{optimize, RunSettings};
use warplab::imaging::ValidityMask;
use warplab::metrics;
use warplab::robustloss::DepthRange;
use warplab::synth::{build_scene, default_intrinsics, make_triplet, sample_trajectory};

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let (h, w) = (128usize, 192usize);
    let scene = build_scene("ground_and_walls".parse().unwrap(), seed);
    let traj = sample_trajectory(seed, default_intrinsics(w, h));
    let rec = make_triplet(&scene, &traj, h, w).unwrap();
    let t0 = std::time::Instant::now();
    let settings = RunSettings { steps, seed, ..Default::default() };
    let result = optimize(std::slice::from_ref(&rec), None, &settings).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    let depth = result.vars[0].unaug.depth(&DepthRange::default(), h, w);
    let valid = ValidityMask::all_valid(h, w);
    let m = metrics::evaluate(&depth, &rec.depths[1], &valid, true, metrics::DEFAULT_CLAMP).unwrap();
    let gt_poses = rec.source_poses();
    let est = &result.vars[0].unaug.poses;
    let ang0 = angle_deg(est[0].translation, gt_poses[0].translation);
    let ang1 = angle_deg(est[1].translation, gt_poses[1].translation);
    let first = result.log.first().map(|r| r.scalars.total).unwrap_or(0.0);
    let last = result.log.last().map(|r| r.scalars.total).unwrap_or(0.0);
    println!(
        "seed {seed}: abs_rel {:.4}, trans angles {:.2} / {:.2} deg, loss {:.5} -> {:.5}, {:.1}s",
        m.abs_rel, ang0, ang1, first, last, elapsed
    );
}
