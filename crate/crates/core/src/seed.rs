//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is seeded from one root seed plus a
//! path of counters (stage tag, record index, ...). Each path element is
//! folded in with one SplitMix64 step:
//!
//! ```text
//! state = splitmix64(state ^ splitmix64(element + GOLDEN * (position + 1)))
//! ```
//!
//! so `derive(root, &[a, b])` and `derive(root, &[b, a])` differ and no two
//! streams share a seed in practice.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stage tags used as the first path element.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const CLASSIFY: u64 = 3;
    pub const OBSERVE: u64 = 4;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter().enumerate().fold(splitmix64(root), |state, (i, &e)| {
        let salt = e.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1));
        splitmix64(state ^ splitmix64(salt))
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
