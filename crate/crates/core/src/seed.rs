//! Seed derivation.
//!
//! A single master seed fans out into named stage seeds:
//!
//! ```text
//! stage_seed(master, name) = splitmix64(master XOR fnv1a64(name))
//! ```
//!
//! Inside a stage every replicate `i` draws from its own ChaCha8 stream,
//! keyed by the stage seed and selecting stream `i`. Replicate draws therefore
//! do not depend on how replicates are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage names used by the pipeline.
pub mod stage {
    pub const PERMUTATION: &str = "permutation";
    pub const BOOTSTRAP: &str = "bootstrap";
    pub const SHUFFLE: &str = "shuffle";
    pub const SYNTH: &str = "synth";
    pub const FOLDS: &str = "folds";
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for a named pipeline stage.
pub fn stage_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

/// Independent generator for replicate `index` of a stage.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
