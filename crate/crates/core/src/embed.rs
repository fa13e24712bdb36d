//! Deterministic feature-hashing embedders.
//!
//! Learned encoders are out of scope for this runtime; every embedding used
//! by the agents is a signed feature hash, stable across runs and platforms.

use crate::linalg;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const BUCKETS_PER_FEATURE: usize = 2;

/// Signed feature hashing into `dim` buckets. Each feature touches two
/// buckets with magnitude `1/sqrt(2)` so a single feature has unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHasher {
    dim: usize,
}

impl FeatureHasher {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Add `weight * embed(feature)` into `acc`.
    pub fn accumulate(&self, acc: &mut [f64], feature: &str, weight: f64) {
        let mut h = fnv1a(feature.as_bytes());
        let mag = weight / (BUCKETS_PER_FEATURE as f64).sqrt();
        for _ in 0..BUCKETS_PER_FEATURE {
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign * mag;
            // splitmix step for the next bucket
            h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
            h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            h ^= h >> 31;
        }
    }

    pub fn feature(&self, feature: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.accumulate(&mut v, feature, 1.0);
        v
    }

    /// Unnormalised sum of feature embeddings.
    pub fn bag<'a>(&self, features: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for f in features {
            self.accumulate(&mut v, f, 1.0);
        }
        v
    }

    /// Unit-normalised bag-of-words embedding of free text.
    pub fn text(&self, text: &str) -> Vec<f64> {
        let lowered = text.to_lowercase();
        let words = lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty());
        linalg::normalize(&self.bag(words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_feature_has_unit_norm_or_collapses() {
        let h = FeatureHasher::new(16);
        for f in ["visible:apple", "holding:none", "open:cabinet", "x"] {
            let n = linalg::norm2(&h.feature(f));
            // both buckets may collide: norm is then 0 or sqrt(2)
            assert!((n - 1.0).abs() < 1e-12 || n < 1e-12 || (n - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn text_is_order_insensitive() {
        let h = FeatureHasher::new(16);
        assert_eq!(h.text("Harry Potter book"), h.text("book, harry potter"));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
