//! Sign-random-projection hash tables and hard bucket assignment.
//!
//! A table is `P` Gaussian hyperplanes; a vector's bucket id is the `P`-bit
//! sign pattern of its projections, bit `i` (LSB first) set when projection
//! row `i` is `>= 0`. The sign of an exact zero resolves to `+`, i.e. bit 1.
//! Two vectors collide in a table when their bucket ids are equal, which for
//! a single hyperplane happens with probability `1 - angle/pi`.

use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::linalg::dot_f32;
use crate::parallel::chunked_partials;
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub const SKTI_MAGIC: [u8; 4] = *b"SKTI";

/// Geometry and seeding of a set of hash tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LshParams {
    /// Hyperplanes per table (`P`); bucket ids are `P`-bit, so `1..=16`.
    pub hyperplanes: u32,
    /// Number of independent tables (`L`).
    pub num_tables: usize,
    /// Embedding dimension.
    pub dim: usize,
    /// Master seed; table `l` draws from derived stream `l`.
    pub seed: u64,
}

impl LshParams {
    pub fn new(hyperplanes: u32, num_tables: usize, dim: usize, seed: u64) -> Result<Self> {
        let params = Self {
            hyperplanes,
            num_tables,
            dim,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hyperplanes == 0 || self.hyperplanes > 16 {
            return Err(Error::param("hyperplanes", "must be in 1..=16"));
        }
        if self.num_tables == 0 {
            return Err(Error::param("num_tables", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        Ok(())
    }

    /// Buckets per table, `R = 2^P`. Derived, never stored.
    pub fn buckets(&self) -> usize {
        1usize << self.hyperplanes
    }
}

/// The sampled projection matrices of all tables.
#[derive(Debug, Clone)]
pub struct HashTableSet {
    params: LshParams,
    /// `num_tables` matrices of shape `hyperplanes x dim`, flattened.
    projections: Vec<f32>,
}

/// Samples the projection matrices for `params`.
///
/// Table `l` is filled row-major with standard-normal draws from a ChaCha8
/// generator seeded with `derive_seed(params.seed, l)`, so a given
/// `(P, L, d, seed)` always yields the same matrices and extending `L` leaves
/// existing tables untouched.
pub fn build_tables(params: &LshParams) -> Result<HashTableSet> {
    params.validate()?;
    let per_table = params.hyperplanes as usize * params.dim;
    let tables: Vec<Vec<f32>> = (0..params.num_tables)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream_rng(params.seed, l as u64);
            (0..per_table)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut projections = Vec::with_capacity(per_table * params.num_tables);
    for t in tables {
        projections.extend_from_slice(&t);
    }
    Ok(HashTableSet {
        params: *params,
        projections,
    })
}

impl HashTableSet {
    pub fn params(&self) -> &LshParams {
        &self.params
    }

    /// The `hyperplanes x dim` projection matrix of one table, row-major.
    pub fn projection(&self, table: usize) -> &[f32] {
        let per_table = self.params.hyperplanes as usize * self.params.dim;
        &self.projections[table * per_table..(table + 1) * per_table]
    }

    /// Hard bucket id of `v` in one table.
    pub fn bucket(&self, table: usize, v: &[f32]) -> u16 {
        bucket_id(
            self.projection(table),
            self.params.hyperplanes,
            self.params.dim,
            v,
        )
    }
}

/// Bucket id of `v` under a single `hyperplanes x dim` projection matrix.
#[inline]
pub(crate) fn bucket_id(projection: &[f32], hyperplanes: u32, dim: usize, v: &[f32]) -> u16 {
    let mut id = 0u16;
    for row in 0..hyperplanes as usize {
        let dot = dot_f32(&projection[row * dim..(row + 1) * dim], v);
        if dot >= 0.0 {
            id |= 1 << row;
        }
    }
    id
}

/// Per-key hard bucket ids across all tables, and the `SKTI` format.
///
/// `SKTI` layout: magic `SKTI`, then little-endian `u32 P`, `u32 L`, `u32 N`,
/// then `N x L` `u16` bucket ids row-major (key-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketAssignment {
    hyperplanes: u32,
    num_tables: usize,
    tokens: usize,
    /// `tokens x num_tables`, row-major.
    ids: Vec<u16>,
}

/// Hashes every key of `cache` into every table.
pub fn hash_keys(tables: &HashTableSet, cache: &KvCache) -> Result<BucketAssignment> {
    let params = tables.params();
    if cache.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            actual: cache.dim(),
        });
    }
    let n = cache.tokens();
    let l = params.num_tables;
    let chunks = chunked_partials(n, 256, |range| {
        let mut out = Vec::with_capacity(range.len() * l);
        for j in range {
            let key = cache.key(j);
            for table in 0..l {
                out.push(tables.bucket(table, key));
            }
        }
        out
    });
    let mut ids = Vec::with_capacity(n * l);
    for c in chunks {
        ids.extend_from_slice(&c);
    }
    Ok(BucketAssignment {
        hyperplanes: params.hyperplanes,
        num_tables: l,
        tokens: n,
        ids,
    })
}

/// Hashes a query into every table; same encoding rule as the keys.
pub fn hash_query(tables: &HashTableSet, query: &[f32]) -> Result<Vec<u16>> {
    let params = tables.params();
    if query.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            actual: query.len(),
        });
    }
    Ok((0..params.num_tables)
        .map(|table| tables.bucket(table, query))
        .collect())
}

impl BucketAssignment {
    pub fn from_parts(hyperplanes: u32, num_tables: usize, ids: Vec<u16>) -> Result<Self> {
        if hyperplanes == 0 || hyperplanes > 16 {
            return Err(Error::param("hyperplanes", "must be in 1..=16"));
        }
        if num_tables == 0 {
            return Err(Error::param("num_tables", "must be positive"));
        }
        if ids.len() % num_tables != 0 {
            return Err(Error::DimensionMismatch {
                expected: (ids.len() / num_tables + 1) * num_tables,
                actual: ids.len(),
            });
        }
        let limit = 1u32 << hyperplanes;
        if let Some(bad) = ids.iter().position(|id| u32::from(*id) >= limit) {
            return Err(Error::param(
                "ids",
                format!("bucket id {} at {} out of range", ids[bad], bad),
            ));
        }
        Ok(Self {
            hyperplanes,
            num_tables,
            tokens: ids.len() / num_tables,
            ids,
        })
    }

    pub fn hyperplanes(&self) -> u32 {
        self.hyperplanes
    }

    pub fn num_tables(&self) -> usize {
        self.num_tables
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Bucket ids of key `j`, one per table.
    pub fn row(&self, j: usize) -> &[u16] {
        &self.ids[j * self.num_tables..(j + 1) * self.num_tables]
    }

    pub fn id(&self, j: usize, table: usize) -> u16 {
        self.ids[j * self.num_tables + table]
    }

    /// Occupancy of every bucket of one table.
    pub fn bucket_occupancy(&self, table: usize) -> Vec<u32> {
        let mut counts = vec![0u32; 1 << self.hyperplanes];
        for j in 0..self.tokens {
            counts[self.id(j, table) as usize] += 1;
        }
        counts
    }

    /// Largest bucket occupancy across all tables (the realized `B`).
    pub fn max_bucket_occupancy(&self) -> usize {
        (0..self.num_tables)
            .map(|t| {
                self.bucket_occupancy(t)
                    .into_iter()
                    .max()
                    .unwrap_or(0) as usize
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_skti_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.ids.len());
        out.extend_from_slice(&SKTI_MAGIC);
        out.extend_from_slice(&self.hyperplanes.to_le_bytes());
        out.extend_from_slice(&(self.num_tables as u32).to_le_bytes());
        out.extend_from_slice(&(self.tokens as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn from_skti_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::malformed("SKTI", "truncated header"));
        }
        if bytes[0..4] != SKTI_MAGIC {
            return Err(Error::malformed("SKTI", "bad magic"));
        }
        let hyperplanes = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let num_tables = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let tokens = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if hyperplanes == 0 || hyperplanes > 16 {
            return Err(Error::malformed("SKTI", "hyperplane count out of range"));
        }
        if num_tables == 0 {
            return Err(Error::malformed("SKTI", "zero tables"));
        }
        let cells = tokens
            .checked_mul(num_tables)
            .ok_or_else(|| Error::malformed("SKTI", "token count * tables overflows"))?;
        let expected = cells
            .checked_mul(2)
            .and_then(|b| b.checked_add(16))
            .ok_or_else(|| Error::malformed("SKTI", "payload size overflows"))?;
        if bytes.len() != expected {
            return Err(Error::malformed(
                "SKTI",
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let limit = 1u32 << hyperplanes;
        let mut ids = Vec::with_capacity(cells);
        for chunk in bytes[16..].chunks_exact(2) {
            let id = u16::from_le_bytes(chunk.try_into().unwrap());
            if u32::from(id) >= limit {
                return Err(Error::malformed(
                    "SKTI",
                    format!("bucket id {id} out of range for {hyperplanes} hyperplanes"),
                ));
            }
            ids.push(id);
        }
        Ok(Self {
            hyperplanes,
            num_tables,
            tokens,
            ids,
        })
    }

    pub fn write_skti(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_skti_bytes())?)
    }

    pub fn read_skti(path: &std::path::Path) -> Result<Self> {
        Self::from_skti_bytes(&std::fs::read(path)?)
    }
}

/// A Monte-Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Estimates the probability that `q` and `k` share a bucket in a fresh
/// single table of `hyperplanes` planes, over `trials` independent tables.
///
/// This is the brute-force oracle for the angular kernel: each trial samples
/// its own Gaussian planes (derived stream per trial) and compares the two
/// sign patterns.
pub fn collision_probability_mc(
    q: &[f32],
    k: &[f32],
    hyperplanes: u32,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if q.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            actual: k.len(),
        });
    }
    if hyperplanes == 0 || hyperplanes > 16 {
        return Err(Error::param("hyperplanes", "must be in 1..=16"));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be positive"));
    }
    let dim = q.len();
    // Integer accumulation: order-free, deterministic at any thread count.
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64);
            let mut row = vec![0.0f32; dim];
            let mut same = true;
            for _ in 0..hyperplanes {
                for slot in row.iter_mut() {
                    *slot = StandardNormal.sample(&mut rng);
                }
                let bq = dot_f32(&row, q) >= 0.0;
                let bk = dot_f32(&row, k) >= 0.0;
                if bq != bk {
                    same = false;
                    // Keep draining the generator so each trial consumes the
                    // same number of draws regardless of early mismatch.
                }
            }
            u64::from(same)
        })
        .sum();
    let p_hat = hits as f64 / trials as f64;
    Ok(McEstimate {
        probability: p_hat,
        std_error: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
        trials,
    })
}
