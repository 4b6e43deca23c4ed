use rayon::prelude::*;

use super::correspond::{correspond_multi, default_tolerance, MatchCounts};
use crate::error::{Error, Result};
use crate::maps::{ContourPrediction, LabelMap};

/// One point of the dataset precision/recall curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSummary {
    /// Ascending threshold order.
    pub pr_points: Vec<PrPoint>,
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub ap: f64,
}

/// `k / (n + 1)` for `k = 1..=n`.
pub fn thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub thresholds: usize,
    /// Matching radius in pixels; `None` uses 0.75% of each image diagonal.
    pub tolerance: Option<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { thresholds: 99, tolerance: None }
    }
}

/// Binarizes every (already thinned) prediction at every threshold and
/// matches it against its ground-truth set. Returns `counts[image][t]`.
/// Images are processed in parallel on the current rayon pool; the result
/// does not depend on the number of threads.
pub fn collect_counts(
    preds: &[ContourPrediction],
    gts: &[Vec<LabelMap>],
    cfg: &BenchmarkConfig,
) -> Result<Vec<Vec<MatchCounts>>> {
    if cfg.thresholds < 2 {
        return Err(Error::Benchmark(format!("need at least 2 thresholds, got {}", cfg.thresholds)));
    }
    if preds.len() != gts.len() {
        return Err(Error::Benchmark(format!("{} predictions for {} ground-truth sets", preds.len(), gts.len())));
    }
    let ts = thresholds(cfg.thresholds);
    preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| {
            let tol = cfg.tolerance.unwrap_or_else(|| default_tolerance(p.width(), p.height()));
            ts.iter().map(|&t| correspond_multi(&p.binarize(t as f32), g, tol)).collect()
        })
        .collect()
}

/// Full benchmark over thinned predictions.
pub fn benchmark(preds: &[ContourPrediction], gts: &[Vec<LabelMap>], cfg: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    let counts = collect_counts(preds, gts, cfg)?;
    benchmark_from_counts(&thresholds(cfg.thresholds), &counts)
}

/// ODS, OIS and AP from per-image, per-threshold counts.
///
/// * ODS: best F of the dataset-level counts over thresholds.
/// * OIS: every image contributes its counts at its own best-F threshold
///   (ties go to the higher threshold); F of the summed counts.
/// * AP: area under precision over recall, with precision made
///   non-increasing in recall and the curve extended to recall 0 at the
///   maximum precision; trapezoidal rule.
pub fn benchmark_from_counts(ts: &[f64], counts: &[Vec<MatchCounts>]) -> Result<BenchmarkSummary> {
    if counts.iter().any(|c| c.len() != ts.len()) {
        return Err(Error::Benchmark("counts do not cover every threshold".into()));
    }
    let totals: Vec<MatchCounts> = (0..ts.len()).map(|k| counts.iter().map(|c| c[k]).sum()).collect();
    if totals.iter().all(|c| c.total_gt == 0) {
        return Err(Error::Benchmark("no ground-truth boundary pixels; recall is undefined".into()));
    }
    let pr_points: Vec<PrPoint> = ts
        .iter()
        .zip(&totals)
        .map(|(&t, c)| PrPoint { threshold: t, precision: c.precision(), recall: c.recall(), f: c.f_measure() })
        .collect();
    let (ods_k, ods) = pr_points
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, p)| if p.f > best.1 { (k, p.f) } else { best });

    let ois_counts: MatchCounts = counts
        .iter()
        .map(|c| {
            let mut best = 0;
            for k in 1..c.len() {
                if c[k].f_measure() >= c[best].f_measure() {
                    best = k;
                }
            }
            c[best]
        })
        .sum();

    Ok(BenchmarkSummary {
        ods,
        ods_threshold: ts[ods_k],
        ois: ois_counts.f_measure(),
        ap: average_precision(&pr_points),
        pr_points,
    })
}

fn average_precision(points: &[PrPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    // Running maximum from high recall to low.
    for i in (0..pr.len().saturating_sub(1)).rev() {
        pr[i].1 = pr[i].1.max(pr[i + 1].1);
    }
    let p_max = pr.first().map_or(0.0, |p| p.1);
    let mut area = 0.0;
    let mut prev = (0.0, p_max);
    for &(r, p) in &pr {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area
}

