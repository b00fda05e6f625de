//! Soft bucket distributions and collision scores.
//!
//! The query is not hashed to a single bucket. Per table, the squashed
//! projection `u = tanh(W q) / sqrt(d)` induces a softmax distribution over
//! the `R = 2^P` hypercube corners with logits `u . c_r / tau`. A key is
//! scored by the probability mass its hard bucket receives, summed across
//! tables; masked, value-norm-weighted variants feed top-k selection.
//!
//! Because the logits are linear in the corner coordinates, the corner
//! softmax factorizes exactly into a per-coordinate product of logistic
//! terms:
//!
//! ```text
//! p(r) = prod_i sigma(2 u_i c_{r,i} / tau)
//! ```
//!
//! which turns a query-side score lookup from `O(R)` into `O(P)` per table
//! and cannot overflow. The full `L x R` table of probabilities is still
//! materialized by [`soft_bucket_probs`] (it is the object the theory talks
//! about); the per-key scoring path in [`soft_score`] only touches the
//! squashed query.

use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::linalg::dot_f32;
use crate::lsh::{BucketAssignment, HashTableSet};
use crate::parallel::chunked_partials;

/// Temperature for soft bucket assignment.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SoftHashConfig {
    /// Temperature `tau > 0`. Small values approach hard hashing, large
    /// values flatten the bucket distribution toward uniform.
    pub tau: f64,
}

impl Default for SoftHashConfig {
    fn default() -> Self {
        // Midpoint of the 0.3-0.7 range that works across datasets.
        Self { tau: 0.5 }
    }
}

impl SoftHashConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let cfg = Self { tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param("tau", "must be positive and finite"));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-coordinate corner factors of one table: `pos[i] = sigma(2 u_i / tau)`
/// for corner bit 1, `neg[i]` for bit 0.
#[derive(Debug, Clone)]
pub(crate) struct CornerFactors {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl CornerFactors {
    pub fn from_squashed(u: &[f64], tau: f64) -> Self {
        let pos = u.iter().map(|ui| logistic(2.0 * ui / tau)).collect();
        let neg = u.iter().map(|ui| logistic(-2.0 * ui / tau)).collect();
        Self { pos, neg }
    }

    /// Probability of one corner, `O(P)`.
    #[inline]
    pub fn corner(&self, id: u16) -> f64 {
        let mut p = 1.0;
        for (i, (pos, neg)) in self.pos.iter().zip(&self.neg).enumerate() {
            p *= if (id >> i) & 1 == 1 { *pos } else { *neg };
        }
        p
    }

    /// Probability of the dominant (hard query) corner.
    #[inline]
    pub fn dominant(&self) -> f64 {
        self.pos
            .iter()
            .zip(&self.neg)
            .map(|(p, n)| p.max(*n))
            .product()
    }
}

/// Squashes a query against one projection matrix: `tanh(W q) / sqrt(d)`,
/// in table row order. The `f32` projection dot matches the hard hashing
/// path, so signs (and therefore the dominant corner) coincide exactly.
pub(crate) fn squash_query(projection: &[f32], hyperplanes: u32, dim: usize, q: &[f32]) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..hyperplanes as usize)
        .map(|row| {
            let dot = dot_f32(&projection[row * dim..(row + 1) * dim], q);
            (dot as f64).tanh() * scale
        })
        .collect()
}

/// A query's soft bucket distribution in every table.
#[derive(Debug, Clone)]
pub struct SoftBucketDistribution {
    tau: f64,
    hyperplanes: u32,
    num_tables: usize,
    /// `num_tables x R` probabilities, row-major.
    probs: Vec<f64>,
    /// `num_tables x hyperplanes` squashed query, row-major.
    squashed: Vec<f64>,
}

/// Computes the full soft bucket distribution of `query` in every table.
pub fn soft_bucket_probs(
    tables: &HashTableSet,
    query: &[f32],
    cfg: &SoftHashConfig,
) -> Result<SoftBucketDistribution> {
    cfg.validate()?;
    let params = tables.params();
    if query.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            actual: query.len(),
        });
    }
    let p = params.hyperplanes as usize;
    let r = params.buckets();
    let mut squashed = Vec::with_capacity(params.num_tables * p);
    let mut probs = Vec::with_capacity(params.num_tables * r);
    for table in 0..params.num_tables {
        let u = squash_query(
            tables.projection(table),
            params.hyperplanes,
            params.dim,
            query,
        );
        let factors = CornerFactors::from_squashed(&u, cfg.tau);
        for id in 0..r {
            probs.push(factors.corner(id as u16));
        }
        squashed.extend_from_slice(&u);
    }
    Ok(SoftBucketDistribution {
        tau: cfg.tau,
        hyperplanes: params.hyperplanes,
        num_tables: params.num_tables,
        probs,
        squashed,
    })
}

impl SoftBucketDistribution {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn hyperplanes(&self) -> u32 {
        self.hyperplanes
    }

    pub fn num_tables(&self) -> usize {
        self.num_tables
    }

    pub fn buckets(&self) -> usize {
        1 << self.hyperplanes
    }

    /// The length-`R` probability row of one table.
    pub fn row(&self, table: usize) -> &[f64] {
        let r = self.buckets();
        &self.probs[table * r..(table + 1) * r]
    }

    /// The squashed query of one table.
    pub fn squashed(&self, table: usize) -> &[f64] {
        let p = self.hyperplanes as usize;
        &self.squashed[table * p..(table + 1) * p]
    }

    /// Hard bucket of the query in one table: bit `i` set iff `u_i >= 0`.
    /// This is always an argmax of the table's probability row.
    pub fn hard_bucket(&self, table: usize) -> u16 {
        let mut id = 0u16;
        for (i, ui) in self.squashed(table).iter().enumerate() {
            if *ui >= 0.0 {
                id |= 1 << i;
            }
        }
        id
    }
}

/// Aggregated soft collision scores for one query against a key set.
#[derive(Debug, Clone)]
pub struct SoftScoreSet {
    /// Per-key mass summed over tables, in `[0, L]`.
    pub scores: Vec<f32>,
    /// `scores / L`, in `[0, 1]`.
    pub mean_scores: Vec<f32>,
    /// Sum of `mean_scores`, accumulated in double precision in index order.
    pub normalizer: f64,
    /// `mean_scores / normalizer`; sums to one.
    pub distribution: Vec<f64>,
}

/// Scores every key: the probability mass its bucket receives, summed over
/// tables. Uses the `O(P)`-per-table factorized lookup; no bucket row is
/// materialized.
pub fn soft_score(
    dist: &SoftBucketDistribution,
    assignment: &BucketAssignment,
) -> Result<SoftScoreSet> {
    if dist.num_tables() != assignment.num_tables() {
        return Err(Error::TableCountMismatch {
            left: dist.num_tables(),
            right: assignment.num_tables(),
        });
    }
    if dist.hyperplanes() != assignment.hyperplanes() {
        return Err(Error::DimensionMismatch {
            expected: dist.hyperplanes() as usize,
            actual: assignment.hyperplanes() as usize,
        });
    }
    let n = assignment.tokens();
    if n == 0 {
        return Err(Error::NoSelectableKeys);
    }
    let l = dist.num_tables();
    let factors: Vec<CornerFactors> = (0..l)
        .map(|t| CornerFactors::from_squashed(dist.squashed(t), dist.tau()))
        .collect();

    let chunks = chunked_partials(n, 512, |range| {
        let mut out = Vec::with_capacity(range.len());
        for j in range {
            let mut acc = 0.0f64;
            for (table, f) in factors.iter().enumerate() {
                acc += f.corner(assignment.id(j, table));
            }
            out.push(acc);
        }
        out
    });

    let mut scores = Vec::with_capacity(n);
    let mut mean_scores = Vec::with_capacity(n);
    for chunk in chunks {
        for acc in chunk {
            scores.push(acc as f32);
            mean_scores.push((acc / l as f64) as f32);
        }
    }
    let normalizer: f64 = mean_scores.iter().map(|w| *w as f64).sum();
    // Strictly positive for tau > 0: every corner probability is > 0.
    assert!(normalizer > 0.0, "soft score normalizer must be positive");
    let distribution = mean_scores
        .iter()
        .map(|w| *w as f64 / normalizer)
        .collect();
    Ok(SoftScoreSet {
        scores,
        mean_scores,
        normalizer,
        distribution,
    })
}

/// Hard collision scores: in how many tables does each key share the query's
/// bucket.
pub fn hard_score(query_buckets: &[u16], assignment: &BucketAssignment) -> Result<Vec<u32>> {
    if query_buckets.len() != assignment.num_tables() {
        return Err(Error::TableCountMismatch {
            left: query_buckets.len(),
            right: assignment.num_tables(),
        });
    }
    Ok((0..assignment.tokens())
        .map(|j| {
            assignment
                .row(j)
                .iter()
                .zip(query_buckets)
                .filter(|(a, b)| a == b)
                .count() as u32
        })
        .collect())
}

/// Value-norm-weighted selection scores; `None` marks a masked key that no
/// top-k may ever pick. The explicit flag avoids pushing a large negative
/// float through downstream `exp()`.
pub fn masked_value_scores(scores: &SoftScoreSet, cache: &KvCache) -> Result<Vec<Option<f32>>> {
    if scores.scores.len() != cache.tokens() {
        return Err(Error::DimensionMismatch {
            expected: cache.tokens(),
            actual: scores.scores.len(),
        });
    }
    Ok(scores
        .scores
        .iter()
        .enumerate()
        .map(|(j, w)| {
            if cache.is_valid(j) {
                Some(w * cache.value_norm(j))
            } else {
                None
            }
        })
        .collect())
}
