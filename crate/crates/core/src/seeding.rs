//! Deterministic RNG derivation.
//!
//! Every random draw in the crate flows through a ChaCha8 stream seeded by an
//! explicit user seed mixed with a purpose salt, so independent subsystems
//! (parameter init, feature maps, batch shuffling, synthetic data) never share
//! or collide streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64-style mixer; decorrelates nearby seeds and salts.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for `seed` under a purpose-specific `salt`.
pub fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, salt))
}

pub mod salt {
    pub const PARAM_INIT: u64 = 0x01;
    pub const FEATURE_MAP: u64 = 0x02;
    pub const BATCH_SHUFFLE: u64 = 0x03;
    pub const SYNTH_STRUCTURE: u64 = 0x10;
    pub const SYNTH_CLIP: u64 = 0x11;
    pub const PROBE_INPUTS: u64 = 0x20;
}
