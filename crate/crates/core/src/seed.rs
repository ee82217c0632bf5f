//! Deterministic named sub-streams derived from one master seed.
//!
//! Every random component (each transition matrix, each document, each
//! prompt, each Monte-Carlo sample) owns its own generator seeded by
//! hashing `(master_seed, tag, indices...)`. Artifacts therefore do not
//! depend on generation order or on how work is split across threads.
//!
//! The derivation is a fixed chain of SplitMix64 finalizer steps:
//! `state = finalize(finalize(master) + word)` folded over the words.
//! The scheme is part of the reproducibility contract; changing it changes
//! every generated artifact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all sampling. ChaCha has a stable, portable
/// stream, so artifacts are identical across platforms.
pub type SeedRng = ChaCha8Rng;

/// Stream tags, one per component family.
pub mod tags {
    pub const ENTITY_MATRIX: u64 = 1;
    pub const MEMORY_MATRIX: u64 = 2;
    pub const PROPERTY_MATRIX: u64 = 3;
    pub const START_DISTRIBUTION: u64 = 4;
    pub const TRAIN_DOCUMENT: u64 = 5;
    pub const VAL_DOCUMENT: u64 = 6;
    pub const PROMPT: u64 = 7;
    pub const KL_SAMPLE: u64 = 8;
    pub const TV_SAMPLE: u64 = 9;
    pub const TEST_INPUT: u64 = 10;
    pub const FRESH_MIXTURE: u64 = 11;
}

#[inline]
fn finalize(mut z: u64) -> u64 {
    // SplitMix64 finalizer.
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from the master seed and a word path
/// (tag followed by indices).
pub fn derive(master: u64, words: &[u64]) -> u64 {
    let mut state = finalize(master.wrapping_add(0x9E37_79B9_7F4A_7C15));
    for &w in words {
        state = finalize(state.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15));
    }
    state
}

/// A generator for the sub-stream at `words` under `master`.
pub fn stream(master: u64, words: &[u64]) -> SeedRng {
    SeedRng::seed_from_u64(derive(master, words))
}
