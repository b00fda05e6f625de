//! Attention references and estimators.
//!
//! The exact baselines live here (dense softmax attention, the angular-kernel
//! attention target) together with the estimators the theory compares against
//! them: the finite-table soft-count output, its Monte-Carlo population
//! limit, and the value-aware importance-sampling estimator.
//!
//! Attention math is carried in double precision with fixed summation order;
//! keys, values and collision scores stay single precision.

use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::linalg::dot_f64;
use crate::lsh::bucket_id;
use crate::parallel::chunked_partials;
use crate::rng::stream_rng;
use crate::soft::{masked_value_scores, CornerFactors, SoftHashConfig, SoftScoreSet};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense attention output together with the full weight vector.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Vec<f64>,
    /// Length-`n` softmax weights; zero at masked positions.
    pub weights: Vec<f64>,
}

/// Exact softmax attention over every unmasked key.
///
/// Logits are the raw inner products `k_j . q`; pass `scale_logits` to divide
/// them by `sqrt(d)` when comparing against conventionally scaled attention.
pub fn dense_attention(q: &[f32], cache: &KvCache, scale_logits: bool) -> Result<AttentionOutput> {
    if q.len() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: cache.dim(),
            actual: q.len(),
        });
    }
    let n = cache.tokens();
    if n == 0 || cache.valid_tokens() == 0 {
        return Err(Error::NoSelectableKeys);
    }
    let scale = if scale_logits {
        1.0 / (cache.dim() as f64).sqrt()
    } else {
        1.0
    };
    let mut logits = vec![f64::NEG_INFINITY; n];
    let mut max_logit = f64::NEG_INFINITY;
    for j in 0..n {
        if cache.is_valid(j) {
            let logit = dot_f64(cache.key(j), q) * scale;
            logits[j] = logit;
            max_logit = max_logit.max(logit);
        }
    }
    let mut weights = vec![0.0f64; n];
    let mut total = 0.0f64;
    for j in 0..n {
        if cache.is_valid(j) {
            let w = (logits[j] - max_logit).exp();
            weights[j] = w;
            total += w;
        }
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    let mut output = vec![0.0f64; cache.dim()];
    for j in 0..n {
        let w = weights[j];
        if w > 0.0 {
            for (o, v) in output.iter_mut().zip(cache.value(j)) {
                *o += w * *v as f64;
            }
        }
    }
    Ok(AttentionOutput { output, weights })
}

/// How the attention weights over the selected set are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogitMode {
    /// Softmax of the true inner products over the selected set.
    Exact,
    /// Softmax of the aggregated soft collision scores over the selected set.
    SoftCount,
}

/// Top-k selection policy.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SelectionConfig {
    /// Token budget `k`.
    pub budget: usize,
    pub logit_mode: LogitMode,
    /// Leading tokens always retained (subject to the mask).
    pub sink_tokens: usize,
    /// Trailing tokens always retained (subject to the mask).
    pub local_window: usize,
}

impl SelectionConfig {
    pub fn new(budget: usize, logit_mode: LogitMode) -> Self {
        Self {
            budget,
            logit_mode,
            sink_tokens: 0,
            local_window: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::param("budget", "must be positive"));
        }
        if self.sink_tokens + self.local_window > self.budget {
            return Err(Error::param(
                "sink_tokens/local_window",
                "forced retention exceeds the budget",
            ));
        }
        Ok(())
    }
}

/// Sparse attention output.
#[derive(Debug, Clone)]
pub struct SparseAttention {
    pub output: Vec<f64>,
    /// Selected indices in ascending order.
    pub selected: Vec<usize>,
    /// Weights over `selected`, same order.
    pub weights: Vec<f64>,
}

/// Selects the attended index set: sink and local-window tokens are forced
/// (mask permitting), the rest of the budget goes to the keys with the
/// largest `score * ||v||`, ties toward the smaller index. Returns ascending
/// indices. Selection does not depend on the logit mode.
pub fn select_top_k(
    cache: &KvCache,
    scores: &SoftScoreSet,
    sel: &SelectionConfig,
) -> Result<Vec<usize>> {
    sel.validate()?;
    let n = cache.tokens();
    let selection_scores = masked_value_scores(scores, cache)?;
    let selectable = selection_scores.iter().filter(|s| s.is_some()).count();
    if selectable == 0 {
        return Err(Error::NoSelectableKeys);
    }
    if sel.budget > selectable {
        return Err(Error::BudgetExceedsSelectable {
            budget: sel.budget,
            selectable,
        });
    }

    let mut forced = vec![false; n];
    for j in 0..sel.sink_tokens.min(n) {
        forced[j] = selection_scores[j].is_some();
    }
    for j in n.saturating_sub(sel.local_window)..n {
        forced[j] = selection_scores[j].is_some();
    }
    let forced_count = forced.iter().filter(|f| **f).count();

    let mut candidates: Vec<(f32, usize)> = (0..n)
        .filter(|j| !forced[*j])
        .filter_map(|j| selection_scores[j].map(|s| (s, j)))
        .collect();
    candidates.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("selection scores are finite")
            .then(a.1.cmp(&b.1))
    });

    let mut selected: Vec<usize> = forced
        .iter()
        .enumerate()
        .filter_map(|(j, f)| f.then_some(j))
        .collect();
    selected.extend(
        candidates
            .iter()
            .take(sel.budget - forced_count)
            .map(|(_, j)| *j),
    );
    selected.sort_unstable();
    Ok(selected)
}

/// Attention restricted to an already-selected index set.
pub fn attend_selected(
    q: &[f32],
    cache: &KvCache,
    scores: &SoftScoreSet,
    selected: &[usize],
    logit_mode: LogitMode,
    scale_logits: bool,
) -> Result<SparseAttention> {
    if q.len() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: cache.dim(),
            actual: q.len(),
        });
    }
    if selected.is_empty() {
        return Err(Error::NoSelectableKeys);
    }
    let logit_scale = if scale_logits {
        1.0 / (cache.dim() as f64).sqrt()
    } else {
        1.0
    };
    let logits: Vec<f64> = match logit_mode {
        LogitMode::Exact => selected
            .iter()
            .map(|j| dot_f64(cache.key(*j), q) * logit_scale)
            .collect(),
        LogitMode::SoftCount => selected.iter().map(|j| scores.scores[*j] as f64).collect(),
    };
    let max_logit = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.into_iter().map(|e| e / total).collect();

    let mut output = vec![0.0f64; cache.dim()];
    for (w, j) in weights.iter().zip(selected) {
        for (o, v) in output.iter_mut().zip(cache.value(*j)) {
            *o += w * *v as f64;
        }
    }
    Ok(SparseAttention {
        output,
        selected: selected.to_vec(),
        weights,
    })
}

/// Selects sink, local-window and top-scoring keys by `score * ||v||`, then
/// attends over the selected set only. Ties break toward the smaller index.
/// Both logit modes produce the identical selected set.
pub fn sparse_attention(
    q: &[f32],
    cache: &KvCache,
    scores: &SoftScoreSet,
    sel: &SelectionConfig,
    scale_logits: bool,
) -> Result<SparseAttention> {
    let selected = select_top_k(cache, scores, sel)?;
    attend_selected(q, cache, scores, &selected, sel.logit_mode, scale_logits)
}

/// The angular-kernel attention target.
#[derive(Debug, Clone)]
pub struct AngularTarget {
    /// Per-key kernel weights `(1 - angle/pi)^P`, in `[0, 1]`.
    pub kernel_weights: Vec<f64>,
    pub normalizer: f64,
    pub distribution: Vec<f64>,
    pub output: Vec<f64>,
}

/// Computes angular attention: per-key weights are the single-plane collision
/// probability raised to the `hyperplanes`-th power.
pub fn angular_attention(q: &[f32], cache: &KvCache, hyperplanes: u32) -> Result<AngularTarget> {
    if q.len() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: cache.dim(),
            actual: q.len(),
        });
    }
    if hyperplanes == 0 {
        return Err(Error::param("hyperplanes", "must be positive"));
    }
    let q_norm = crate::linalg::norm_f64(q);
    if q_norm == 0.0 {
        return Err(Error::ZeroNorm {
            kind: "query",
            index: 0,
        });
    }
    let n = cache.tokens();
    if n == 0 {
        return Err(Error::NoSelectableKeys);
    }
    let mut kernel_weights = Vec::with_capacity(n);
    for j in 0..n {
        let k_norm = crate::linalg::norm_f64(cache.key(j));
        if k_norm == 0.0 {
            return Err(Error::ZeroNorm {
                kind: "key",
                index: j,
            });
        }
        let cosine = (dot_f64(cache.key(j), q) / (q_norm * k_norm)).clamp(-1.0, 1.0);
        let base = 1.0 - cosine.acos() / std::f64::consts::PI;
        kernel_weights.push(base.powi(hyperplanes as i32));
    }
    let normalizer: f64 = kernel_weights.iter().sum();
    if normalizer == 0.0 {
        return Err(Error::DegenerateNormalizer {
            context: "angular attention",
        });
    }
    let distribution: Vec<f64> = kernel_weights.iter().map(|w| w / normalizer).collect();
    let mut output = vec![0.0f64; cache.dim()];
    for (a, j) in distribution.iter().zip(0..n) {
        for (o, v) in output.iter_mut().zip(cache.value(j)) {
            *o += a * *v as f64;
        }
    }
    Ok(AngularTarget {
        kernel_weights,
        normalizer,
        distribution,
        output,
    })
}

/// The finite-table soft-count attention output: values averaged under the
/// normalized soft score distribution.
pub fn finite_table_output(scores: &SoftScoreSet, cache: &KvCache) -> Result<Vec<f64>> {
    if scores.distribution.len() != cache.tokens() {
        return Err(Error::DimensionMismatch {
            expected: cache.tokens(),
            actual: scores.distribution.len(),
        });
    }
    debug_assert!(scores.normalizer > 0.0);
    let mut output = vec![0.0f64; cache.dim()];
    for (j, a) in scores.distribution.iter().enumerate() {
        for (o, v) in output.iter_mut().zip(cache.value(j)) {
            *o += a * *v as f64;
        }
    }
    Ok(output)
}

/// Monte-Carlo estimate of the single-table population quantities: expected
/// per-key soft score, its normalizer and attention output, and the expected
/// mass placed outside the query's hard bucket.
#[derive(Debug, Clone)]
pub struct PopulationEstimate {
    /// Expected per-key single-table soft score.
    pub mean_scores: Vec<f64>,
    pub mean_scores_se: Vec<f64>,
    pub normalizer: f64,
    pub normalizer_se: f64,
    pub distribution: Vec<f64>,
    pub output: Vec<f64>,
    /// Expected probability mass outside the hard query bucket.
    pub nondominant_mass: f64,
    pub nondominant_mass_se: f64,
    pub mc_tables: usize,
    /// Largest bucket occupancy observed across the sampled tables.
    pub max_bucket_occupancy: usize,
}

struct PopulationPartial {
    score_sum: Vec<f64>,
    score_sumsq: Vec<f64>,
    z_sum: f64,
    z_sumsq: f64,
    mass_sum: f64,
    mass_sumsq: f64,
    max_occupancy: usize,
}

/// Averages per-table soft scores over `mc_tables` fresh tables (derived
/// stream per table index) and reports standard errors alongside.
pub fn population_estimate(
    q: &[f32],
    cache: &KvCache,
    cfg: &SoftHashConfig,
    hyperplanes: u32,
    mc_tables: usize,
    seed: u64,
) -> Result<PopulationEstimate> {
    cfg.validate()?;
    if q.len() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: cache.dim(),
            actual: q.len(),
        });
    }
    if hyperplanes == 0 || hyperplanes > 16 {
        return Err(Error::param("hyperplanes", "must be in 1..=16"));
    }
    if mc_tables < 100 {
        return Err(Error::param("mc_tables", "must be at least 100"));
    }
    let n = cache.tokens();
    if n == 0 {
        return Err(Error::NoSelectableKeys);
    }
    let dim = cache.dim();
    let p = hyperplanes as usize;
    let buckets = 1usize << hyperplanes;
    let tau = cfg.tau;

    let partials = chunked_partials(mc_tables, 64, |range| {
        let mut part = PopulationPartial {
            score_sum: vec![0.0; n],
            score_sumsq: vec![0.0; n],
            z_sum: 0.0,
            z_sumsq: 0.0,
            mass_sum: 0.0,
            mass_sumsq: 0.0,
            max_occupancy: 0,
        };
        let mut projection = vec![0.0f32; p * dim];
        let mut occupancy = vec![0u32; buckets];
        for table in range {
            let mut rng = stream_rng(seed, table as u64);
            for slot in projection.iter_mut() {
                *slot = StandardNormal.sample(&mut rng);
            }
            let u = crate::soft::squash_query(&projection, hyperplanes, dim, q);
            let factors = CornerFactors::from_squashed(&u, tau);
            occupancy.iter_mut().for_each(|c| *c = 0);
            let mut z = 0.0f64;
            for j in 0..n {
                let bucket = bucket_id(&projection, hyperplanes, dim, cache.key(j));
                occupancy[bucket as usize] += 1;
                let s = factors.corner(bucket);
                part.score_sum[j] += s;
                part.score_sumsq[j] += s * s;
                z += s;
            }
            part.z_sum += z;
            part.z_sumsq += z * z;
            let mass = 1.0 - factors.dominant();
            part.mass_sum += mass;
            part.mass_sumsq += mass * mass;
            part.max_occupancy = part
                .max_occupancy
                .max(occupancy.iter().copied().max().unwrap_or(0) as usize);
        }
        part
    });

    let mut score_sum = vec![0.0f64; n];
    let mut score_sumsq = vec![0.0f64; n];
    let mut z_sum = 0.0;
    let mut z_sumsq = 0.0;
    let mut mass_sum = 0.0;
    let mut mass_sumsq = 0.0;
    let mut max_occupancy = 0usize;
    for part in partials {
        for j in 0..n {
            score_sum[j] += part.score_sum[j];
            score_sumsq[j] += part.score_sumsq[j];
        }
        z_sum += part.z_sum;
        z_sumsq += part.z_sumsq;
        mass_sum += part.mass_sum;
        mass_sumsq += part.mass_sumsq;
        max_occupancy = max_occupancy.max(part.max_occupancy);
    }

    let t = mc_tables as f64;
    let se = |sum: f64, sumsq: f64| {
        let mean = sum / t;
        let var = ((sumsq / t - mean * mean) * t / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    };
    let mean_scores: Vec<f64> = score_sum.iter().map(|s| s / t).collect();
    let mean_scores_se: Vec<f64> = score_sum
        .iter()
        .zip(&score_sumsq)
        .map(|(s, sq)| se(*s, *sq))
        .collect();
    let normalizer: f64 = mean_scores.iter().sum();
    assert!(normalizer > 0.0, "population normalizer must be positive");
    let distribution: Vec<f64> = mean_scores.iter().map(|w| w / normalizer).collect();
    let mut output = vec![0.0f64; dim];
    for (j, a) in distribution.iter().enumerate() {
        for (o, v) in output.iter_mut().zip(cache.value(j)) {
            *o += a * *v as f64;
        }
    }
    Ok(PopulationEstimate {
        mean_scores,
        mean_scores_se,
        normalizer,
        normalizer_se: se(z_sum, z_sumsq),
        distribution,
        output,
        nondominant_mass: mass_sum / t,
        nondominant_mass_se: se(mass_sum, mass_sumsq),
        mc_tables,
        max_bucket_occupancy: max_occupancy,
    })
}

/// Value-aware sampling distribution and sample count for the importance
/// estimator.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub num_samples: usize,
    pub seed: u64,
    /// `p_j` proportional to `distribution_j * ||v_j||`; sums to one.
    pub sampling_probs: Vec<f64>,
}

impl SamplerConfig {
    pub fn from_scores(
        scores: &SoftScoreSet,
        cache: &KvCache,
        num_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::param("num_samples", "must be positive"));
        }
        if scores.distribution.len() != cache.tokens() {
            return Err(Error::DimensionMismatch {
                expected: cache.tokens(),
                actual: scores.distribution.len(),
            });
        }
        let raw: Vec<f64> = scores
            .distribution
            .iter()
            .enumerate()
            .map(|(j, a)| a * cache.value_norm(j) as f64)
            .collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateNormalizer {
                context: "sampling distribution",
            });
        }
        let sampling_probs: Vec<f64> = raw.into_iter().map(|w| w / total).collect();
        debug_assert!((sampling_probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        Ok(Self {
            num_samples,
            seed,
            sampling_probs,
        })
    }
}

/// Importance-sampling estimate of the finite-table output: `num_samples`
/// i.i.d. categorical draws by inverse CDF over the fixed index order, each
/// contributing `distribution_J / p_J * v_J`.
pub fn sample_estimator(
    scores: &SoftScoreSet,
    cache: &KvCache,
    sampler: &SamplerConfig,
) -> Result<Vec<f64>> {
    let n = cache.tokens();
    if sampler.sampling_probs.len() != n || scores.distribution.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sampler.sampling_probs.len(),
        });
    }
    if sampler.num_samples == 0 {
        return Err(Error::param("num_samples", "must be positive"));
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    for p in &sampler.sampling_probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = stream_rng(sampler.seed, 0);
    let mut output = vec![0.0f64; cache.dim()];
    for _ in 0..sampler.num_samples {
        let u: f64 = rng.random();
        let mut j = cumulative.partition_point(|c| *c <= u);
        if j >= n {
            j = n - 1;
        }
        // Guard the float edge where u lands beyond the last positive mass.
        while sampler.sampling_probs[j] == 0.0 && j > 0 {
            j -= 1;
        }
        let ratio = scores.distribution[j] / sampler.sampling_probs[j];
        for (o, v) in output.iter_mut().zip(cache.value(j)) {
            *o += ratio * *v as f64;
        }
    }
    for o in output.iter_mut() {
        *o /= sampler.num_samples as f64;
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::KvCache;
    use crate::linalg::{l2_distance, norm_f64_slice};
    use crate::lsh::{build_tables, hash_keys, hash_query, LshParams};
    use crate::soft::{hard_score, soft_bucket_probs, soft_score};

    fn scored_instance(
        n: usize,
        d: usize,
        p: u32,
        l: usize,
        tau: f64,
        seed: u64,
    ) -> (KvCache, Vec<f32>, SoftScoreSet) {
        let cache = KvCache::gaussian(n, d, seed).unwrap();
        let q_cache = KvCache::gaussian(1, d, seed ^ 0xDEAD).unwrap();
        let q = q_cache.key(0).to_vec();
        let tables = build_tables(&LshParams::new(p, l, d, seed ^ 0xBEEF).unwrap()).unwrap();
        let assignment = hash_keys(&tables, &cache).unwrap();
        let dist = soft_bucket_probs(&tables, &q, &SoftHashConfig::new(tau).unwrap()).unwrap();
        let scores = soft_score(&dist, &assignment).unwrap();
        (cache, q, scores)
    }

    #[test]
    fn dense_single_key() {
        let cache = KvCache::gaussian(1, 6, 1).unwrap();
        let q = vec![0.5f32; 6];
        let out = dense_attention(&q, &cache, false).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        for (o, v) in out.output.iter().zip(cache.value(0)) {
            assert_eq!(*o, *v as f64);
        }
    }

    #[test]
    fn dense_equal_logits_are_uniform() {
        let cache = KvCache::gaussian(8, 5, 2).unwrap();
        let q = vec![0.0f32; 5];
        let out = dense_attention(&q, &cache, false).unwrap();
        for w in &out.weights {
            assert!((w - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_matches_naive_two_loop_oracle() {
        let cache = KvCache::gaussian(32, 8, 3).unwrap();
        let q_cache = KvCache::gaussian(1, 8, 4).unwrap();
        let q = q_cache.key(0);
        let got = dense_attention(q, &cache, false).unwrap();
        // Naive oracle: no max subtraction, plain double loops.
        let mut weights = Vec::new();
        for j in 0..32 {
            let mut dot = 0.0f64;
            for i in 0..8 {
                dot += cache.key(j)[i] as f64 * q[i] as f64;
            }
            weights.push(dot.exp());
        }
        let total: f64 = weights.iter().sum();
        let mut oracle = vec![0.0f64; 8];
        for j in 0..32 {
            for i in 0..8 {
                oracle[i] += weights[j] / total * cache.value(j)[i] as f64;
            }
        }
        let rel = l2_distance(&got.output, &oracle) / norm_f64_slice(&oracle);
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn dense_rejects_empty_and_all_masked() {
        let empty = KvCache::new(vec![], vec![], 4).unwrap();
        assert!(matches!(
            dense_attention(&[0.0; 4], &empty, false),
            Err(Error::NoSelectableKeys)
        ));
        let mut cache = KvCache::gaussian(3, 4, 5).unwrap();
        cache.set_mask(vec![false; 3]).unwrap();
        assert!(matches!(
            dense_attention(&[0.0; 4], &cache, false),
            Err(Error::NoSelectableKeys)
        ));
    }

    #[test]
    fn full_budget_matches_dense() {
        let (cache, q, scores) = scored_instance(64, 16, 4, 8, 0.5, 6);
        let dense = dense_attention(&q, &cache, false).unwrap();
        let sparse = sparse_attention(
            &q,
            &cache,
            &scores,
            &SelectionConfig::new(64, LogitMode::Exact),
            false,
        )
        .unwrap();
        assert_eq!(sparse.selected, (0..64).collect::<Vec<_>>());
        let rel = l2_distance(&sparse.output, &dense.output) / norm_f64_slice(&dense.output);
        assert!(rel <= 1e-6);
    }

    #[test]
    fn budget_one_takes_the_top_scored_key() {
        let (cache, q, scores) = scored_instance(32, 8, 4, 8, 0.5, 7);
        let sel = masked_value_scores(&scores, &cache).unwrap();
        let top = (0..32)
            .max_by(|a, b| sel[*a].unwrap().partial_cmp(&sel[*b].unwrap()).unwrap())
            .unwrap();
        for mode in [LogitMode::Exact, LogitMode::SoftCount] {
            let sparse = sparse_attention(
                &q,
                &cache,
                &scores,
                &SelectionConfig::new(1, mode),
                false,
            )
            .unwrap();
            assert_eq!(sparse.selected, vec![top]);
            for (o, v) in sparse.output.iter().zip(cache.value(top)) {
                assert!((o - *v as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_logit_modes_select_identically() {
        let (cache, q, scores) = scored_instance(128, 16, 6, 12, 0.5, 8);
        let exact = sparse_attention(
            &q,
            &cache,
            &scores,
            &SelectionConfig::new(16, LogitMode::Exact),
            false,
        )
        .unwrap();
        let soft = sparse_attention(
            &q,
            &cache,
            &scores,
            &SelectionConfig::new(16, LogitMode::SoftCount),
            false,
        )
        .unwrap();
        assert_eq!(exact.selected, soft.selected);
    }

    #[test]
    fn sink_and_window_are_forced() {
        let (cache, q, scores) = scored_instance(64, 8, 4, 6, 0.5, 9);
        let cfg = SelectionConfig {
            budget: 12,
            logit_mode: LogitMode::Exact,
            sink_tokens: 3,
            local_window: 2,
        };
        let sparse = sparse_attention(&q, &cache, &scores, &cfg, false).unwrap();
        for j in [0usize, 1, 2, 62, 63] {
            assert!(sparse.selected.contains(&j), "missing forced token {j}");
        }
        assert_eq!(sparse.selected.len(), 12);
    }

    #[test]
    fn selection_errors() {
        let (cache, q, scores) = scored_instance(16, 8, 4, 6, 0.5, 10);
        let zero_budget = SelectionConfig::new(0, LogitMode::Exact);
        assert!(sparse_attention(&q, &cache, &scores, &zero_budget, false).is_err());
        let over = SelectionConfig::new(17, LogitMode::Exact);
        assert!(matches!(
            sparse_attention(&q, &cache, &scores, &over, false),
            Err(Error::BudgetExceedsSelectable { .. })
        ));
        let mut masked = cache.clone();
        masked.set_mask(vec![false; 16]).unwrap();
        let cfg = SelectionConfig::new(4, LogitMode::Exact);
        assert!(matches!(
            sparse_attention(&q, &masked, &scores, &cfg, false),
            Err(Error::NoSelectableKeys)
        ));
    }

    #[test]
    fn value_scaling_leaves_selection_and_exact_weights_unchanged() {
        let (cache, q, scores) = scored_instance(96, 8, 4, 10, 0.5, 11);
        let scaled = {
            let keys: Vec<f32> = (0..96).flat_map(|j| cache.key(j).to_vec()).collect();
            let values: Vec<f32> = (0..96)
                .flat_map(|j| cache.value(j).iter().map(|v| v * 3.5).collect::<Vec<_>>())
                .collect();
            KvCache::new(keys, values, 8).unwrap()
        };
        let cfg = SelectionConfig::new(10, LogitMode::Exact);
        let a = sparse_attention(&q, &cache, &scores, &cfg, false).unwrap();
        let b = sparse_attention(&q, &scaled, &scores, &cfg, false).unwrap();
        assert_eq!(a.selected, b.selected);
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa - wb).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_selection_beats_hard_selection_on_average() {
        // Same budget, same value weighting; the continuous scores should
        // pick a better set than the tied integer collision counts.
        let n = 1024;
        let d = 64;
        let budget = n / 10;
        let seeds = 20;
        let mut soft_err = 0.0;
        let mut hard_err = 0.0;
        for seed in 0..seeds {
            let cache = KvCache::gaussian(n, d, 300 + seed).unwrap();
            let qc = KvCache::gaussian(1, d, 900 + seed).unwrap();
            let q = qc.key(0);
            let tables =
                build_tables(&LshParams::new(8, 60, d, 500 + seed).unwrap()).unwrap();
            let assignment = hash_keys(&tables, &cache).unwrap();
            let dist = soft_bucket_probs(&tables, q, &SoftHashConfig::default()).unwrap();
            let soft = soft_score(&dist, &assignment).unwrap();
            let dense = dense_attention(q, &cache, false).unwrap();
            let cfg = SelectionConfig::new(budget, LogitMode::Exact);
            let soft_out = sparse_attention(q, &cache, &soft, &cfg, false).unwrap();

            // Hard selection: reuse the sparse path with scores replaced by
            // the integer collision counts.
            let hard_counts = hard_score(&hash_query(&tables, q).unwrap(), &assignment).unwrap();
            let hard_as_scores = SoftScoreSet {
                scores: hard_counts.iter().map(|c| *c as f32).collect(),
                mean_scores: hard_counts.iter().map(|c| *c as f32 / 60.0).collect(),
                normalizer: 1.0,
                distribution: vec![1.0 / n as f64; n],
            };
            let hard_out = sparse_attention(q, &cache, &hard_as_scores, &cfg, false).unwrap();

            let denom = norm_f64_slice(&dense.output);
            soft_err += l2_distance(&soft_out.output, &dense.output) / denom;
            hard_err += l2_distance(&hard_out.output, &dense.output) / denom;
        }
        assert!(
            soft_err < hard_err,
            "soft mean rel err {} vs hard {}",
            soft_err / seeds as f64,
            hard_err / seeds as f64
        );
    }

    #[test]
    fn angular_kernel_endpoint_values() {
        // A 3-4-5 query keeps every norm and cosine exact in floating point.
        let q = vec![3.0f32, 4.0, 0.0, 0.0];
        let keys: Vec<f32> = [
            [3.0f32, 4.0, 0.0, 0.0],  // aligned: cos = 1
            [-3.0, -4.0, 0.0, 0.0],   // antipodal: cos = -1
            [-4.0, 3.0, 0.0, 0.0],    // orthogonal: cos = 0
        ]
        .concat();
        let cache = KvCache::new(keys, vec![1.0; 12], 4).unwrap();
        let target = angular_attention(&q, &cache, 8).unwrap();
        assert_eq!(target.kernel_weights[0], 1.0);
        assert_eq!(target.kernel_weights[1], 0.0);
        assert_eq!(target.kernel_weights[2], 0.00390625); // 2^-8 exactly
    }

    #[test]
    fn angular_power_identity() {
        let cache = KvCache::gaussian(16, 12, 13).unwrap();
        let qc = KvCache::gaussian(1, 12, 14).unwrap();
        let q = qc.key(0);
        let w1 = angular_attention(q, &cache, 1).unwrap().kernel_weights;
        for p in [2u32, 4, 8] {
            let wp = angular_attention(q, &cache, p).unwrap().kernel_weights;
            for j in 0..16 {
                assert_eq!(wp[j], w1[j].powi(p as i32));
            }
        }
    }

    #[test]
    fn angular_rejects_zero_norm() {
        let mut keys = vec![0.1f32; 8]; // keys 0 and 1
        keys.extend_from_slice(&[0.0; 4]); // key 2 is zero
        let cache = KvCache::new(keys, vec![1.0; 12], 4).unwrap();
        let q = vec![1.0f32, 0.0, 0.0, 0.0];
        match angular_attention(&q, &cache, 4) {
            Err(Error::ZeroNorm { kind: "key", index }) => assert_eq!(index, 2),
            other => panic!("expected zero-norm key error, got {other:?}"),
        }
        assert!(matches!(
            angular_attention(&[0.0; 4], &cache, 4),
            Err(Error::ZeroNorm { kind: "query", .. })
        ));
    }

    #[test]
    fn finite_table_output_basics() {
        let (cache, _q, scores) = scored_instance(1, 8, 4, 6, 0.5, 15);
        let out = finite_table_output(&scores, &cache).unwrap();
        for (o, v) in out.iter().zip(cache.value(0)) {
            assert!((o - *v as f64).abs() < 1e-12);
        }

        let (cache, _q, scores) = scored_instance(24, 8, 4, 6, 0.5, 16);
        let got = finite_table_output(&scores, &cache).unwrap();
        let mut oracle = vec![0.0f64; 8];
        for j in 0..24 {
            for i in 0..8 {
                oracle[i] += scores.distribution[j] * cache.value(j)[i] as f64;
            }
        }
        assert!(l2_distance(&got, &oracle) <= 1e-12);
    }

    #[test]
    fn uniform_distribution_returns_value_centroid() {
        let cache = KvCache::gaussian(10, 6, 17).unwrap();
        let scores = SoftScoreSet {
            scores: vec![1.0; 10],
            mean_scores: vec![0.1; 10],
            normalizer: 1.0,
            distribution: vec![0.1; 10],
        };
        let out = finite_table_output(&scores, &cache).unwrap();
        let mut centroid = vec![0.0f64; 6];
        for j in 0..10 {
            for i in 0..6 {
                centroid[i] += cache.value(j)[i] as f64 / 10.0;
            }
        }
        assert!(l2_distance(&out, &centroid) <= 1e-12);
    }

    #[test]
    fn population_mass_flattens_at_high_temperature() {
        let cache = KvCache::gaussian(4, 64, 18).unwrap();
        let qc = KvCache::gaussian(1, 64, 19).unwrap();
        let est = population_estimate(
            qc.key(0),
            &cache,
            &SoftHashConfig::new(100.0).unwrap(),
            8,
            2_000,
            20,
        )
        .unwrap();
        let limit = 1.0 - 1.0 / 256.0;
        assert!(
            (est.nondominant_mass - limit).abs() <= 1e-2,
            "mass {} limit {limit}",
            est.nondominant_mass
        );
    }

    #[test]
    fn population_mass_vanishes_at_low_temperature() {
        // Saturated query keeps every squashed coordinate away from the tie
        // set, so the soft distribution peaks hard.
        let cache = KvCache::gaussian(4, 64, 21).unwrap();
        let qc = KvCache::gaussian(1, 64, 22).unwrap();
        let q: Vec<f32> = qc.key(0).iter().map(|x| x * 1000.0).collect();
        let est = population_estimate(
            &q,
            &cache,
            &SoftHashConfig::new(0.01).unwrap(),
            8,
            2_000,
            23,
        )
        .unwrap();
        assert!(est.nondominant_mass <= 1e-2, "mass {}", est.nondominant_mass);
    }

    #[test]
    fn population_score_is_maximal_for_the_query_itself() {
        let cache = KvCache::gaussian(24, 32, 24).unwrap();
        let q = cache.key(5).to_vec();
        let est = population_estimate(
            &q,
            &cache,
            &SoftHashConfig::default(),
            8,
            2_000,
            25,
        )
        .unwrap();
        for j in 0..24 {
            let slack = 3.0 * (est.mean_scores_se[5] + est.mean_scores_se[j]);
            assert!(
                est.mean_scores[5] >= est.mean_scores[j] - slack,
                "key {j}: {} vs {}",
                est.mean_scores[j],
                est.mean_scores[5]
            );
        }
    }

    #[test]
    fn population_nondominant_mass_bounded_by_uniform_limit() {
        let cache = KvCache::gaussian(8, 16, 26).unwrap();
        let qc = KvCache::gaussian(1, 16, 27).unwrap();
        for tau in [0.1, 1.0, 10.0] {
            let est = population_estimate(
                qc.key(0),
                &cache,
                &SoftHashConfig::new(tau).unwrap(),
                4,
                500,
                28,
            )
            .unwrap();
            assert!(est.nondominant_mass >= 0.0);
            assert!(
                est.nondominant_mass
                    <= 1.0 - 1.0 / 16.0 + 3.0 * est.nondominant_mass_se + 1e-12
            );
        }
    }

    #[test]
    fn sampler_single_key_returns_its_value() {
        let (cache, _q, scores) = scored_instance(1, 8, 4, 6, 0.5, 29);
        for m in [1usize, 7, 64] {
            let sampler = SamplerConfig::from_scores(&scores, &cache, m, 30).unwrap();
            let t = sample_estimator(&scores, &cache, &sampler).unwrap();
            for (o, v) in t.iter().zip(cache.value(0)) {
                assert!((o - *v as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampler_rejects_all_zero_values() {
        let cache = KvCache::new(vec![1.0; 8], vec![0.0; 8], 4).unwrap();
        let scores = SoftScoreSet {
            scores: vec![1.0, 1.0],
            mean_scores: vec![0.5, 0.5],
            normalizer: 1.0,
            distribution: vec![0.5, 0.5],
        };
        assert!(matches!(
            SamplerConfig::from_scores(&scores, &cache, 4, 0),
            Err(Error::DegenerateNormalizer { .. })
        ));
    }

    #[test]
    fn sampler_is_unbiased_for_the_finite_table_output() {
        let (cache, _q, scores) = scored_instance(64, 4, 4, 12, 0.5, 31);
        let target = finite_table_output(&scores, &cache).unwrap();
        let resamples = 20_000usize;
        let m = 16;
        let mut mean = vec![0.0f64; 4];
        let mut sumsq = vec![0.0f64; 4];
        for rep in 0..resamples {
            let sampler = SamplerConfig::from_scores(&scores, &cache, m, 7_000 + rep as u64)
                .unwrap();
            let t = sample_estimator(&scores, &cache, &sampler).unwrap();
            for i in 0..4 {
                mean[i] += t[i];
                sumsq[i] += t[i] * t[i];
            }
        }
        for i in 0..4 {
            let mu = mean[i] / resamples as f64;
            let var = (sumsq[i] / resamples as f64 - mu * mu).max(0.0);
            let se = (var / resamples as f64).sqrt();
            assert!(
                (mu - target[i]).abs() <= 3.0 * se,
                "component {i}: {mu} vs {} (se {se})",
                target[i]
            );
        }
    }

    #[test]
    fn sampler_zero_probability_keys_are_never_drawn() {
        // Key 1 has a zero value vector, so its sampling probability is zero
        // and the estimator must never index it.
        let mut values = vec![1.0f32; 12];
        values[4..8].fill(0.0);
        let cache = KvCache::new(vec![0.5f32; 12], values, 4).unwrap();
        let scores = SoftScoreSet {
            scores: vec![1.0; 3],
            mean_scores: vec![0.5; 3],
            normalizer: 1.5,
            distribution: vec![1.0 / 3.0; 3],
        };
        let sampler = SamplerConfig::from_scores(&scores, &cache, 512, 33).unwrap();
        assert_eq!(sampler.sampling_probs[1], 0.0);
        let t = sample_estimator(&scores, &cache, &sampler).unwrap();
        assert!(t.iter().all(|x| x.is_finite()));
    }
}
