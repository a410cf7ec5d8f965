//! Deterministic random streams.
//!
//! Every random decision in a run draws from a stream derived from one root
//! seed plus a module tag and a list of indices (client id, repetition, copy
//! number, ...). Derivation is a pure function, so the bits any consumer sees
//! do not depend on iteration order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type handed to every randomized operation.
pub type RngStream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Root of a tree of derived random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derives the 64-bit seed for `(tag, path)`.
    pub fn derive_seed(&self, tag: &str, path: &[u64]) -> u64 {
        let mut s = mix64(self.root.wrapping_add(GOLDEN) ^ fnv1a(tag));
        for (depth, &i) in path.iter().enumerate() {
            s = mix64(s ^ i.wrapping_add(GOLDEN.wrapping_mul(depth as u64 + 1)));
        }
        s
    }

    /// A generator for `(tag, path)`.
    pub fn stream(&self, tag: &str, path: &[u64]) -> RngStream {
        RngStream::seed_from_u64(self.derive_seed(tag, path))
    }

    /// A child tree rooted at `(tag, path)`.
    pub fn child(&self, tag: &str, path: &[u64]) -> SeedTree {
        SeedTree::new(self.derive_seed(tag, path))
    }

    /// A uniform in `[0, 1)` that is a pure function of `(tag, path)`.
    ///
    /// Used where coupling matters: two runs that ask for the same
    /// coordinates get the same uniform.
    pub fn uniform(&self, tag: &str, path: &[u64]) -> f64 {
        (mix64(self.derive_seed(tag, path)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
