//! Evaluation math: tracking error against the nearest-in-time ground
//! truth, Top-N location extraction, the Top-N coverage rate, and location
//! entropy over discretized cells.

use crate::attacker::Estimate;
use crate::geo::{self, CellIndex, GeoError, GeoPoint, GridSpec};
use crate::mobility::Trace;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// Cell size used to discretize "locations" when nothing finer is
/// specified: the finest policy-relevant scale.
pub const DEFAULT_LOCATION_CELL_M: f64 = 100.0;

/// A trace inferred by the attacker: launch times paired with estimates.
/// May be empty when every launch failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredTrace {
    pub user_id: String,
    pub points: Vec<(u64, Estimate)>,
}

impl InferredTrace {
    pub fn positions(&self) -> Vec<(u64, GeoPoint)> {
        self.points.iter().map(|(t, e)| (*t, e.point)).collect()
    }

    pub fn truncated(&self, cutoff_t: u64) -> InferredTrace {
        InferredTrace {
            user_id: self.user_id.clone(),
            points: self.points.iter().filter(|(t, _)| *t < cutoff_t).cloned().collect(),
        }
    }
}

/// Distance from each inferred point to the truth fix nearest in time
/// (ties resolved to the earlier fix). This upper-bounds the localization
/// error: the victim may have moved between the fix and the attack.
pub fn tracking_error_series(inferred: &InferredTrace, truth: &Trace) -> Vec<f64> {
    inferred
        .points
        .iter()
        .map(|&(t, ref est)| geo::distance_m(est.point, nearest_in_time(truth, t)))
        .collect()
}

fn nearest_in_time(truth: &Trace, t: u64) -> GeoPoint {
    let pts = truth.points();
    let idx = pts.partition_point(|&(pt, _)| pt <= t);
    match (idx.checked_sub(1).map(|i| pts[i]), pts.get(idx)) {
        (Some((tb, pb)), Some(&(ta, pa))) => {
            let db = t - tb;
            let da = ta - t;
            // earlier point wins ties
            if db <= da {
                pb
            } else {
                pa
            }
        }
        (Some((_, pb)), None) => pb,
        (None, Some(&(_, pa))) => pa,
        (None, None) => unreachable!("traces are nonempty"),
    }
}

/// Mean, median, and decimated CDF knots of an error series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean_m: f64,
    pub median_m: f64,
    /// (error_m, cumulative fraction) pairs, at most 20 knots.
    pub cdf: Vec<(f64, f64)>,
}

pub fn summarize_errors(series: &[f64]) -> Option<ErrorSummary> {
    if series.is_empty() {
        return None;
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let knots = 20.min(n);
    let cdf = (1..=knots)
        .map(|k| {
            let idx = (k * n).div_ceil(knots) - 1;
            (sorted[idx], (idx + 1) as f64 / n as f64)
        })
        .collect();
    Some(ErrorSummary { count: n, mean_m: mean, median_m: median, cdf })
}

/// The N most visited cells of a trace, counts descending, ties broken by
/// lexicographic cell index. Fewer than N distinct cells yields a shorter
/// list (the TNR denominator stays N).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopNResult {
    pub cells: Vec<CellIndex>,
    pub counts: Vec<u64>,
}

impl TopNResult {
    pub fn cell_set(&self) -> BTreeSet<CellIndex> {
        self.cells.iter().copied().collect()
    }
}

pub fn top_n(trace: &Trace, n: usize, grid: &GridSpec) -> Result<TopNResult, GeoError> {
    top_n_points(&trace.points().iter().map(|&(_, p)| p).collect::<Vec<_>>(), n, grid)
}

pub fn top_n_inferred(
    inferred: &InferredTrace,
    n: usize,
    grid: &GridSpec,
) -> Result<TopNResult, GeoError> {
    top_n_points(&inferred.points.iter().map(|(_, e)| e.point).collect::<Vec<_>>(), n, grid)
}

fn top_n_points(points: &[GeoPoint], n: usize, grid: &GridSpec) -> Result<TopNResult, GeoError> {
    let mut counts: HashMap<CellIndex, u64> = HashMap::new();
    for &p in points {
        *counts.entry(geo::cell_of(p, grid, 0)?).or_insert(0) += 1;
    }
    let mut ranked: Vec<(CellIndex, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(n);
    Ok(TopNResult {
        cells: ranked.iter().map(|&(c, _)| c).collect(),
        counts: ranked.iter().map(|&(_, k)| k).collect(),
    })
}

/// Top-N coverage rate: |top cells recovered| / N over unordered sets.
pub fn tnr(
    truth: &Trace,
    inferred: &InferredTrace,
    n: usize,
    grid: &GridSpec,
) -> Result<f64, GeoError> {
    assert!(n >= 1, "N must be >= 1");
    let truth_top = top_n(truth, n, grid)?.cell_set();
    let inferred_top = top_n_inferred(inferred, n, grid)?.cell_set();
    Ok(truth_top.intersection(&inferred_top).count() as f64 / n as f64)
}

/// Shannon entropy (natural log) of the cell-visit distribution.
pub fn location_entropy(trace: &Trace, grid: &GridSpec) -> Result<f64, GeoError> {
    entropy_of_points(&trace.points().iter().map(|&(_, p)| p).collect::<Vec<_>>(), grid)
}

fn entropy_of_points(points: &[GeoPoint], grid: &GridSpec) -> Result<f64, GeoError> {
    let mut counts: HashMap<CellIndex, u64> = HashMap::new();
    for &p in points {
        *counts.entry(geo::cell_of(p, grid, 0)?).or_insert(0) += 1;
    }
    let total = points.len() as f64;
    Ok(counts
        .values()
        .map(|&k| {
            let p = k as f64 / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum())
}

/// H1/H2: ground-truth entropy over inferred entropy. `None` when the
/// inferred entropy is exactly zero (the ratio is undefined, not infinite),
/// including the no-inferred-points case.
pub fn usage_ratio(
    truth: &Trace,
    inferred: &InferredTrace,
    grid: &GridSpec,
) -> Result<Option<f64>, GeoError> {
    let h1 = location_entropy(truth, grid)?;
    if inferred.points.is_empty() {
        return Ok(None);
    }
    let h2 = entropy_of_points(
        &inferred.points.iter().map(|(_, e)| e.point).collect::<Vec<_>>(),
        grid,
    )?;
    if h2 == 0.0 {
        Ok(None)
    } else {
        Ok(Some(h1 / h2))
    }
}
