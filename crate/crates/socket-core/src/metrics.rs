//! Ranking-quality metrics: NDCG, precision, Jaccard, and the selected-score
//! histogram with its top-k cutoff.

use crate::error::{Error, Result};
use std::collections::HashSet;

/// NDCG of a ranked list of relevance grades.
///
/// `DCG = sum (2^r_i - 1) / log2(i + 1)` with `i` starting at 1; the ideal
/// DCG sorts the grades descending. An ideal DCG of zero (every grade
/// contributes nothing) counts as a perfect 1.0.
pub fn ndcg(relevance_in_rank_order: &[f64]) -> Result<f64> {
    if relevance_in_rank_order.is_empty() {
        return Err(Error::param("relevance", "must be nonempty"));
    }
    if relevance_in_rank_order.iter().any(|r| !r.is_finite()) {
        return Err(Error::param("relevance", "must be finite"));
    }
    let dcg = discounted_gain(relevance_in_rank_order.iter().copied());
    let mut ideal: Vec<f64> = relevance_in_rank_order.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = discounted_gain(ideal.into_iter());
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg / idcg)
}

fn discounted_gain(grades: impl Iterator<Item = f64>) -> f64 {
    grades
        .enumerate()
        .map(|(i, r)| (r.exp2() - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Fraction of the `k` selected items that are relevant.
pub fn precision(selected: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k", "must be positive"));
    }
    if selected.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: selected.len(),
        });
    }
    let hits = selected.iter().filter(|j| relevant.contains(j)).count();
    Ok(hits as f64 / k as f64)
}

/// Set overlap `|A ∩ B| / |A ∪ B|`; two empty sets count as identical (1.0).
pub fn jaccard(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Maps raw scores to integer grades `0..levels` by rank quantile within the
/// instance. Order-preserving, and keeps `2^grade` bounded regardless of the
/// score scale. Ties are ordered by index.
pub fn quantile_grades(scores: &[f64], levels: u32) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        scores[*a]
            .partial_cmp(&scores[*b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let mut grades = vec![0.0; n];
    for (rank, j) in order.into_iter().enumerate() {
        let g = (rank * levels as usize) / n.max(1);
        grades[j] = g.min(levels as usize - 1) as f64;
    }
    grades
}

/// One method's ranking against dot-product ground truth.
#[derive(Debug, Clone)]
pub struct RankingInstance {
    /// Ground-truth relevance of every key (query-key inner products).
    pub ground_truth_scores: Vec<f64>,
    /// The method's selected indices, best first.
    pub method_ranking: Vec<usize>,
    /// The true top-k indices (k = ranking length), ties toward smaller index.
    pub truth_top_k: Vec<usize>,
}

impl RankingInstance {
    pub fn new(ground_truth_scores: Vec<f64>, method_ranking: Vec<usize>) -> Result<Self> {
        let n = ground_truth_scores.len();
        let k = method_ranking.len();
        if k == 0 || k > n {
            return Err(Error::param("method_ranking", "length must be in 1..=n"));
        }
        let mut seen = vec![false; n];
        for j in &method_ranking {
            if *j >= n {
                return Err(Error::param("method_ranking", format!("index {j} out of range")));
            }
            if seen[*j] {
                return Err(Error::param("method_ranking", format!("duplicate index {j}")));
            }
            seen[*j] = true;
        }
        let truth_top_k = top_k_indices(&ground_truth_scores, k);
        Ok(Self {
            ground_truth_scores,
            method_ranking,
            truth_top_k,
        })
    }

    pub fn k(&self) -> usize {
        self.method_ranking.len()
    }
}

/// Indices of the `k` largest scores, descending, ties toward smaller index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    order.truncate(k);
    order
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SelectionHistogram {
    pub bins: Vec<HistogramBin>,
    /// The k-th largest ground-truth score overall.
    pub cutoff: f64,
    /// Fraction of selected keys whose ground truth reaches the cutoff.
    pub mass_above_cutoff: f64,
}

/// Histogram of the ground-truth scores of the selected keys, over equal-width
/// bins spanning their observed range, plus the true top-k cutoff and the
/// fraction of the selection at or above it.
pub fn selection_histogram(instance: &RankingInstance, bins: usize) -> Result<SelectionHistogram> {
    if bins < 2 {
        return Err(Error::param("bins", "must be at least 2"));
    }
    if instance.method_ranking.is_empty() {
        return Err(Error::param("method_ranking", "must be nonempty"));
    }
    let selected_scores: Vec<f64> = instance
        .method_ranking
        .iter()
        .map(|j| instance.ground_truth_scores[*j])
        .collect();
    let lo = selected_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = selected_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let k = instance.k();
    let cutoff = {
        let mut sorted = instance.ground_truth_scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        sorted[k - 1]
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for s in &selected_scores {
        let slot = if width > 0.0 {
            (((s - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[slot] += 1;
    }
    let above = selected_scores.iter().filter(|s| **s >= cutoff).count();
    Ok(SelectionHistogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                bin_left: lo + i as f64 * width,
                bin_right: lo + (i + 1) as f64 * width,
                count,
            })
            .collect(),
        cutoff,
        mass_above_cutoff: above as f64 / k as f64,
    })
}

/// Full metric report for one ranking.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricReport {
    pub ndcg: f64,
    pub precision: f64,
    pub jaccard: f64,
    pub histogram: SelectionHistogram,
}

/// Evaluates a ranking: NDCG over rank-quantile grades (16 levels), precision
/// and Jaccard against the true top-k, and the selection histogram.
pub fn evaluate_ranking(instance: &RankingInstance, bins: usize) -> Result<MetricReport> {
    let grades = quantile_grades(&instance.ground_truth_scores, 16);
    let in_rank_order: Vec<f64> = instance.method_ranking.iter().map(|j| grades[*j]).collect();
    let truth: HashSet<usize> = instance.truth_top_k.iter().copied().collect();
    let selected: HashSet<usize> = instance.method_ranking.iter().copied().collect();
    Ok(MetricReport {
        ndcg: ndcg(&in_rank_order)?,
        precision: precision(&instance.method_ranking, &truth, instance.k())?,
        jaccard: jaccard(&selected, &truth),
        histogram: selection_histogram(instance, bins)?,
    })
}
