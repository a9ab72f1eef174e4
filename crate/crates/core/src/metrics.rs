//! Standard depth-evaluation metrics with optional median scaling.

use thiserror::Error;

use crate::imaging::{ScalarMap, ValidityMask};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no valid pixels to evaluate")]
    NoValidPixels,
    #[error("ground truth must be positive on valid pixels, found {0}")]
    NonPositiveGroundTruth(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// The seven standard depth metrics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.a1, self.a2, self.a3
        )
    }

    pub fn mean_of(rows: &[DepthMetrics]) -> DepthMetrics {
        let n = rows.len().max(1) as f64;
        let mut acc = DepthMetrics { abs_rel: 0.0, sq_rel: 0.0, rmse: 0.0, rmse_log: 0.0, a1: 0.0, a2: 0.0, a3: 0.0 };
        for r in rows {
            acc.abs_rel += r.abs_rel;
            acc.sq_rel += r.sq_rel;
            acc.rmse += r.rmse;
            acc.rmse_log += r.rmse_log;
            acc.a1 += r.a1;
            acc.a2 += r.a2;
            acc.a3 += r.a3;
        }
        DepthMetrics {
            abs_rel: acc.abs_rel / n,
            sq_rel: acc.sq_rel / n,
            rmse: acc.rmse / n,
            rmse_log: acc.rmse_log / n,
            a1: acc.a1 / n,
            a2: acc.a2 / n,
            a3: acc.a3 / n,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Evaluate predicted depth against ground truth over valid pixels.
///
/// With `median_scale` the prediction is rescaled by
/// `median(gt) / median(pred)` first; both maps are then clamped to
/// `[clamp.0, clamp.1]`.
pub fn evaluate(
    pred: &ScalarMap,
    gt: &ScalarMap,
    valid: &ValidityMask,
    median_scale: bool,
    clamp: (f64, f64),
) -> Result<DepthMetrics, MetricsError> {
    if pred.height != gt.height || pred.width != gt.width || valid.height != gt.height || valid.width != gt.width {
        return Err(MetricsError::DimensionMismatch(format!(
            "pred {}x{}, gt {}x{}, valid {}x{}",
            pred.height, pred.width, gt.height, gt.width, valid.height, valid.width
        )));
    }
    let mut p_vals = Vec::new();
    let mut g_vals = Vec::new();
    for i in 0..gt.data.len() {
        if !valid.data[i] {
            continue;
        }
        if gt.data[i] <= 0.0 {
            return Err(MetricsError::NonPositiveGroundTruth(gt.data[i]));
        }
        p_vals.push(pred.data[i]);
        g_vals.push(gt.data[i]);
    }
    if p_vals.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }
    if median_scale {
        let med_g = median(&mut g_vals.clone());
        let med_p = median(&mut p_vals.clone());
        let ratio = if med_p > 0.0 { med_g / med_p } else { 1.0 };
        for p in p_vals.iter_mut() {
            *p *= ratio;
        }
    }
    let (lo, hi) = clamp;
    let n = p_vals.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut a3 = 0.0;
    for i in 0..p_vals.len() {
        let p = p_vals[i].clamp(lo, hi);
        let g = g_vals[i].clamp(lo, hi);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            a1 += 1.0;
        }
        if ratio < 1.25f64.powi(2) {
            a2 += 1.0;
        }
        if ratio < 1.25f64.powi(3) {
            a3 += 1.0;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        a1: a1 / n,
        a2: a2 / n,
        a3: a3 / n,
    })
}

pub const DEFAULT_CLAMP: (f64, f64) = (0.1, 100.0);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_from(h: usize, w: usize, mut f: impl FnMut(usize) -> f64) -> ScalarMap {
        ScalarMap::new(h, w, (0..h * w).map(&mut f).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_zero_errors() {
        let gt = map_from(4, 4, |i| 1.0 + i as f64 * 0.3);
        let valid = ValidityMask::all_valid(4, 4);
        let m = evaluate(&gt, &gt, &valid, false, DEFAULT_CLAMP).unwrap();
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.a1, m.a2, m.a3),
            (0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn median_scaling_absorbs_global_scale() {
        let gt = map_from(3, 4, |i| 2.0 + (i % 5) as f64);
        let pred = ScalarMap::new(3, 4, gt.data.iter().map(|&v| 2.0 * v).collect()).unwrap();
        let valid = ValidityMask::all_valid(3, 4);
        let m = evaluate(&pred, &gt, &valid, true, DEFAULT_CLAMP).unwrap();
        assert!(m.abs_rel.abs() < 1e-12 && m.rmse.abs() < 1e-12);
        assert_eq!((m.a1, m.a2, m.a3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn thirty_percent_error_matches_direct_arithmetic() {
        let gt = map_from(2, 2, |_| 10.0);
        let pred = map_from(2, 2, |_| 13.0);
        let valid = ValidityMask::all_valid(2, 2);
        let m = evaluate(&pred, &gt, &valid, false, DEFAULT_CLAMP).unwrap();
        assert!((m.abs_rel - 0.3).abs() < 1e-12);
        assert_eq!(m.a1, 0.0); // 1.3 > 1.25
        assert_eq!(m.a2, 1.0); // 1.3 < 1.5625
        assert!((m.sq_rel - 0.9).abs() < 1e-12);
        assert!((m.rmse - 3.0).abs() < 1e-12);
    }

    #[test]
    fn delta_thresholds_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let gt = map_from(3, 3, |_| rng.gen_range(0.5..20.0));
            let pred = map_from(3, 3, |_| rng.gen_range(0.5..20.0));
            let valid = ValidityMask::all_valid(3, 3);
            let m = evaluate(&pred, &gt, &valid, false, DEFAULT_CLAMP).unwrap();
            assert!(m.a1 <= m.a2 && m.a2 <= m.a3 && m.a3 <= 1.0);
        }
    }

    #[test]
    fn agrees_with_brute_force_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..25 {
            let gt = map_from(8, 8, |_| rng.gen_range(0.2..50.0));
            let pred = map_from(8, 8, |_| rng.gen_range(0.2..50.0));
            let valid = ValidityMask::new(8, 8, (0..64).map(|_| rng.gen_bool(0.8)).collect());
            if valid.count_valid() == 0 {
                continue;
            }
            let m = evaluate(&pred, &gt, &valid, false, DEFAULT_CLAMP).unwrap();
            // Brute force, independently written.
            let mut pairs = Vec::new();
            for i in 0..64 {
                if valid.data[i] {
                    pairs.push((pred.data[i].clamp(0.1, 100.0), gt.data[i].clamp(0.1, 100.0)));
                }
            }
            let n = pairs.len() as f64;
            let abs_rel: f64 = pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / n;
            let sq_rel: f64 = pairs.iter().map(|(p, g)| (p - g) * (p - g) / g).sum::<f64>() / n;
            let rmse: f64 = (pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n).sqrt();
            let rmse_log: f64 =
                (pairs.iter().map(|(p, g)| (p.ln() - g.ln()).powi(2)).sum::<f64>() / n).sqrt();
            let a = |k: i32| {
                pairs.iter().filter(|(p, g)| (p / g).max(g / p) < 1.25f64.powi(k)).count() as f64 / n
            };
            assert!((m.abs_rel - abs_rel).abs() < 1e-12);
            assert!((m.sq_rel - sq_rel).abs() < 1e-12);
            assert!((m.rmse - rmse).abs() < 1e-12);
            assert!((m.rmse_log - rmse_log).abs() < 1e-12);
            assert!((m.a1 - a(1)).abs() < 1e-12 && (m.a2 - a(2)).abs() < 1e-12 && (m.a3 - a(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_empty_and_non_positive() {
        let gt = map_from(2, 2, |_| 1.0);
        let none_valid = ValidityMask::new(2, 2, vec![false; 4]);
        assert!(matches!(
            evaluate(&gt, &gt, &none_valid, false, DEFAULT_CLAMP),
            Err(MetricsError::NoValidPixels)
        ));
        let bad_gt = map_from(2, 2, |i| if i == 0 { -1.0 } else { 1.0 });
        let valid = ValidityMask::all_valid(2, 2);
        assert!(matches!(
            evaluate(&gt, &bad_gt, &valid, false, DEFAULT_CLAMP),
            Err(MetricsError::NonPositiveGroundTruth(_))
        ));
    }

    #[test]
    fn median_scaled_metrics_invariant_to_prediction_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = map_from(5, 5, |_| rng.gen_range(0.3..30.0));
        let pred = map_from(5, 5, |_| rng.gen_range(0.3..30.0));
        let valid = ValidityMask::all_valid(5, 5);
        let base = evaluate(&pred, &gt, &valid, true, DEFAULT_CLAMP).unwrap();
        for k in [0.1, 3.0, 42.0] {
            let scaled = ScalarMap::new(5, 5, pred.data.iter().map(|&v| v * k).collect()).unwrap();
            let m = evaluate(&scaled, &gt, &valid, true, DEFAULT_CLAMP).unwrap();
            assert!((m.abs_rel - base.abs_rel).abs() < 1e-12);
            assert!((m.rmse - base.rmse).abs() < 1e-12);
        }
    }
}
