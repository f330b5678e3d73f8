//! Seeded bucket and sign hashes for virtual weight matrices.
//!
//! Every connection `(i, j)` of layer `ℓ` is keyed by the 12-byte
//! little-endian string `layer_index:u32 ‖ i:u32 ‖ j:u32` and hashed with
//! XXH64. The bucket stream uses seed `base_seed + 2ℓ`, the sign stream
//! uses `base_seed + 2ℓ + 1` (both wrapping). Buckets are reduced with a
//! plain modulo. This encoding is frozen: saved models depend on it.

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};

/// Hash parameters of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSpec {
    pub base_seed: u64,
    pub layer_index: u32,
    pub bucket_count: usize,
}

impl HashSpec {
    pub fn new(base_seed: u64, layer_index: u32, bucket_count: usize) -> Result<Self> {
        if bucket_count == 0 {
            return Err(Error::InvalidBucketCount);
        }
        Ok(Self {
            base_seed,
            layer_index,
            bucket_count,
        })
    }

    #[inline]
    pub fn bucket_seed(&self) -> u64 {
        self.base_seed
            .wrapping_add(2u64.wrapping_mul(u64::from(self.layer_index)))
    }

    #[inline]
    pub fn sign_seed(&self) -> u64 {
        self.bucket_seed().wrapping_add(1)
    }

    #[inline]
    fn key(&self, i: usize, j: usize) -> [u8; 12] {
        debug_assert!(i <= u32::MAX as usize && j <= u32::MAX as usize);
        let mut key = [0u8; 12];
        key[0..4].copy_from_slice(&self.layer_index.to_le_bytes());
        key[4..8].copy_from_slice(&(i as u32).to_le_bytes());
        key[8..12].copy_from_slice(&(j as u32).to_le_bytes());
        key
    }

    /// Bucket `h(i, j)` in `0..bucket_count`.
    #[inline]
    pub fn bucket(&self, i: usize, j: usize) -> usize {
        let h = xxh64(&self.key(i, j), self.bucket_seed());
        (h % self.bucket_count as u64) as usize
    }

    /// Sign `ξ(i, j)`: +1 when the top bit of the sign hash is clear.
    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        let h = xxh64(&self.key(i, j), self.sign_seed());
        if h >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Bucket index of connection `(i, j)`; `j = 0` is the bias column.
pub fn hash_index(spec: &HashSpec, i: usize, j: usize) -> Result<usize> {
    if spec.bucket_count == 0 {
        return Err(Error::InvalidBucketCount);
    }
    Ok(spec.bucket(i, j))
}

pub fn hash_sign(spec: &HashSpec, i: usize, j: usize) -> f64 {
    spec.sign(i, j)
}
