//! Deterministic RNG stream derivation.
//!
//! Every stochastic component draws from a ChaCha stream derived from the run
//! seed plus a structural label (step, question index, rollout index, sample
//! index, ...). Streams are independent of evaluation order, so rollouts can
//! be fanned out across workers without changing a single sampled token.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A deterministic RNG stream keyed by `(seed, labels...)`.
///
/// The key is hashed, so distinct label tuples give statistically independent
/// streams and the derivation is stable across platforms.
pub fn stream(seed: u64, labels: &[u64]) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"kdrl.stream/1");
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update(label.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Stable 64-bit label for string identifiers (question ids and the like).
pub fn label(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8-byte prefix"))
}
