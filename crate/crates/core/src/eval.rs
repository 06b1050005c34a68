//! AUROC and histogram export.

use crate::error::{Error, Result};

/// In- and out-of-distribution scores; higher means more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSets {
    pub inlier_scores: Vec<f64>,
    pub outlier_scores: Vec<f64>,
}

impl ScoredSets {
    pub fn new(inlier_scores: Vec<f64>, outlier_scores: Vec<f64>) -> Result<Self> {
        if inlier_scores.is_empty() {
            return Err(Error::Empty("inlier scores"));
        }
        if outlier_scores.is_empty() {
            return Err(Error::Empty("outlier scores"));
        }
        if inlier_scores.iter().chain(&outlier_scores).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        Ok(Self {
            inlier_scores,
            outlier_scores,
        })
    }

    /// The same sets with roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            inlier_scores: self.outlier_scores.clone(),
            outlier_scores: self.inlier_scores.clone(),
        }
    }
}

/// Mann-Whitney AUROC with half credit for ties, via midranks.
pub fn auroc(sets: &ScoredSets) -> f64 {
    let n = sets.inlier_scores.len();
    let m = sets.outlier_scores.len();
    let mut all: Vec<(f64, bool)> = sets
        .inlier_scores
        .iter()
        .map(|v| (*v, true))
        .chain(sets.outlier_scores.iter().map(|v| (*v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of doubled midranks keeps everything integral
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j, midrank (i+1+j)/2
        let inliers_in_group = all[i..j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += inliers_in_group * (i + 1 + j) as u128;
        i = j;
    }
    // U = R - n(n+1)/2, doubled
    let doubled_u = doubled_rank_sum - (n as u128) * (n as u128 + 1);
    doubled_u as f64 / (2.0 * n as f64 * m as f64)
}

/// Pairwise `O(n·m)` count; the reference for [`auroc`].
pub fn auroc_bruteforce(sets: &ScoredSets) -> f64 {
    let mut doubled: u128 = 0;
    for a in &sets.inlier_scores {
        for b in &sets.outlier_scores {
            if a > b {
                doubled += 2;
            } else if a == b {
                doubled += 1;
            }
        }
    }
    doubled as f64 / (2.0 * sets.inlier_scores.len() as f64 * sets.outlier_scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` equally spaced edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values outside the range, including NaN.
    pub out_of_range: u64,
}

/// Equal-width histogram over `[lo, hi]`; the last bin includes `hi`.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::param("histogram needs at least one bin"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::param(format!("invalid histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    let mut out_of_range = 0;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            out_of_range += 1;
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        out_of_range,
    })
}

/// Range spanning every finite value in `sets`, widened when degenerate.
pub fn common_range<'a>(sets: impl IntoIterator<Item = &'a [f64]>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in sets.into_iter().flatten().filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}
