//! Tokenization and signed feature hashing.

use serde::{Deserialize, Serialize};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(bytes)
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Platform-independent signed hashing of tokens into `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHasher {
    pub seed: u64,
    pub dim: usize,
}

impl Default for TokenHasher {
    fn default() -> Self {
        Self { seed: 42, dim: 256 }
    }
}

impl TokenHasher {
    pub fn new(seed: u64, dim: usize) -> crate::Result<Self> {
        if dim < 2 {
            return Err(crate::Error::Config("hash dimension must be >= 2".into()));
        }
        Ok(Self { seed, dim })
    }

    /// Bucket and sign (+1 or -1) for one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = mix(fnv1a(self.seed, token.as_bytes()));
        let bucket = (h % self.dim as u64) as usize;
        let sign = if mix(h ^ SIGN_SALT) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        (bucket, sign)
    }

    /// L2-normalized signed count vector of `tokens`; zero if empty.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            let (bucket, sign) = self.slot(t.as_ref());
            v[bucket] += sign;
        }
        super::normalize(&mut v);
        v
    }

    pub fn hash_embed(&self, text: &str) -> Vec<f64> {
        self.embed_tokens(&tokenize(text))
    }
}
