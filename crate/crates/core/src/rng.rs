//! Counter-based seeded randomness.
//!
//! Every random quantity in a simulation is drawn from its own generator,
//! keyed by a stream tag, the scenario seed and a short list of indices
//! (iteration, client ids, ...). Any value can therefore be re-derived on
//! demand without storing it or replaying other draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Independent domains of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    ChannelPhase = 1,
    PrivatePhase = 2,
    Grouping = 3,
    MaskExpansion = 4,
    Dropout = 5,
    Dataset = 6,
    StochasticRounding = 7,
    AttackPayload = 8,
}

const DOMAIN: &[u8] = b"phyfed/v1";

/// Derives the 256-bit key for `(stream, seed, words)`.
pub fn derive_key(stream: Stream, seed: u64, words: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update([stream as u8]);
    hasher.update(seed.to_le_bytes());
    hasher.update((words.len() as u64).to_le_bytes());
    for w in words {
        hasher.update(w.to_le_bytes());
    }
    hasher.finalize().into()
}

/// A 64-bit seed derived from `(stream, seed, words)`, for handing to
/// functions that take a plain seed.
pub fn derive_seed(stream: Stream, seed: u64, words: &[u64]) -> u64 {
    let key = derive_key(stream, seed, words);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

/// A fresh generator for `(stream, seed, words)`.
pub fn keyed_rng(stream: Stream, seed: u64, words: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_key(stream, seed, words))
}
