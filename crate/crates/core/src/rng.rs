//! Named, counter-addressed random substreams.
//!
//! Every random decision in a run draws from a ChaCha8 stream whose key is
//! derived from `(seed, purpose, indices...)`. Streams never depend on the
//! order in which other streams were consumed, so parallel pipelines and
//! resumed runs see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    fn key(&self, purpose: &str, indices: &[u64]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update((purpose.len() as u64).to_le_bytes());
        h.update(purpose.as_bytes());
        for i in indices {
            h.update(i.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn stream(&self, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(purpose, indices))
    }

    /// Stream keyed by free-form text, e.g. a VLM call tag or a prompt digest.
    pub fn stream_for_label(&self, purpose: &str, label: &str, indices: &[u64]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.key(purpose, indices));
        h.update(label.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// A derived 64-bit value, e.g. a child seed.
    pub fn derive_u64(&self, purpose: &str, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.key(purpose, &[]));
        h.update(label.as_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }
}

/// Base T2I seed for a prompt: a function of the run seed and the prompt
/// digest only, kept below 2^31 so `base + k` fits services that take
/// signed 32-bit seeds.
pub fn t2i_base_seed(run_seed: u64, prompt_digest: &str) -> u64 {
    SeedTree::new(run_seed).derive_u64("t2i-seed", prompt_digest) & 0x3fff_ffff
}
