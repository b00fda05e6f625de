//! Key/value cache and the `SKT1` interchange format.
//!
//! `SKT1` layout (all integers little-endian):
//!
//! ```text
//! magic "SKT1" | u32 n | u32 d | n*d f32 keys (row-major) | n*d f32 values
//! ```
//!
//! A mask, when present, travels as a sidecar file of exactly `n` bytes, one
//! `0`/`1` per token. Parsing is strict: wrong magic, `d == 0`, non-0/1 mask
//! bytes or any length mismatch are rejected, and a parsed cache re-serializes
//! to the identical bytes.

use crate::error::{Error, Result};
use crate::linalg::norm_f64;
use crate::rng::stream_rng;
use rand_distr::{Distribution, StandardNormal};

pub const SKT1_MAGIC: [u8; 4] = *b"SKT1";

/// Per-token keys and values with precomputed value norms and a validity mask.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    value_norms: Vec<f32>,
    mask: Vec<bool>,
    tokens: usize,
    dim: usize,
}

impl KvCache {
    /// Builds a cache from row-major `tokens x dim` key and value matrices.
    /// All tokens start unmasked.
    pub fn new(keys: Vec<f32>, values: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if keys.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: keys.len(),
                actual: values.len(),
            });
        }
        if keys.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: (keys.len() / dim + 1) * dim,
                actual: keys.len(),
            });
        }
        let tokens = keys.len() / dim;
        let value_norms = (0..tokens)
            .map(|j| norm_f64(&values[j * dim..(j + 1) * dim]) as f32)
            .collect();
        Ok(Self {
            keys,
            values,
            value_norms,
            mask: vec![true; tokens],
            tokens,
            dim,
        })
    }

    /// Standard-Gaussian keys and values, deterministic per seed.
    /// Keys come from derived stream 0 and values from stream 1.
    pub fn gaussian(tokens: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        let mut key_rng = stream_rng(seed, 0);
        let mut value_rng = stream_rng(seed, 1);
        let keys: Vec<f32> = (0..tokens * dim)
            .map(|_| StandardNormal.sample(&mut key_rng))
            .collect();
        let values: Vec<f32> = (0..tokens * dim)
            .map(|_| StandardNormal.sample(&mut value_rng))
            .collect();
        Self::new(keys, values, dim)
    }

    /// Replaces the validity mask; `mask.len()` must equal the token count.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.tokens {
            return Err(Error::DimensionMismatch {
                expected: self.tokens,
                actual: mask.len(),
            });
        }
        self.mask = mask;
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, j: usize) -> &[f32] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    pub fn value(&self, j: usize) -> &[f32] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// The full `tokens x dim` key matrix, row-major.
    pub fn keys_matrix(&self) -> &[f32] {
        &self.keys
    }

    /// The full `tokens x dim` value matrix, row-major.
    pub fn values_matrix(&self) -> &[f32] {
        &self.values
    }

    pub fn value_norm(&self, j: usize) -> f32 {
        self.value_norms[j]
    }

    pub fn value_norms(&self) -> &[f32] {
        &self.value_norms
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, j: usize) -> bool {
        self.mask[j]
    }

    /// Number of unmasked tokens.
    pub fn valid_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Serializes to `SKT1` bytes. The mask is not part of the format.
    pub fn to_skt1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.keys.len());
        out.extend_from_slice(&SKT1_MAGIC);
        out.extend_from_slice(&(self.tokens as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.keys {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parses `SKT1` bytes. The byte length must match the header exactly.
    pub fn from_skt1_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::malformed("SKT1", "truncated header"));
        }
        if bytes[0..4] != SKT1_MAGIC {
            return Err(Error::malformed("SKT1", "bad magic"));
        }
        let tokens = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::malformed("SKT1", "zero dimension"));
        }
        let cells = tokens
            .checked_mul(dim)
            .ok_or_else(|| Error::malformed("SKT1", "token count * dim overflows"))?;
        let expected = cells
            .checked_mul(8)
            .and_then(|b| b.checked_add(12))
            .ok_or_else(|| Error::malformed("SKT1", "payload size overflows"))?;
        if bytes.len() != expected {
            return Err(Error::malformed(
                "SKT1",
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let read_matrix = |offset: usize| -> Vec<f32> {
            bytes[offset..offset + 4 * cells]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let keys = read_matrix(12);
        let values = read_matrix(12 + 4 * cells);
        Self::new(keys, values, dim)
    }

    pub fn write_skt1(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_skt1_bytes())?)
    }

    pub fn read_skt1(path: &std::path::Path) -> Result<Self> {
        Self::from_skt1_bytes(&std::fs::read(path)?)
    }
}

/// Parses a mask sidecar: exactly `tokens` bytes, each 0 or 1.
pub fn mask_from_bytes(bytes: &[u8], tokens: usize) -> Result<Vec<bool>> {
    if bytes.len() != tokens {
        return Err(Error::malformed(
            "mask",
            format!("expected {tokens} bytes, got {}", bytes.len()),
        ));
    }
    bytes
        .iter()
        .enumerate()
        .map(|(i, b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::malformed(
                "mask",
                format!("byte {i} is {other}, expected 0 or 1"),
            )),
        })
        .collect()
}

/// Serializes a mask to its sidecar bytes.
pub fn mask_to_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|m| u8::from(*m)).collect()
}
