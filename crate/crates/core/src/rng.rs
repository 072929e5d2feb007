//! Seed derivation shared by every stochastic component.
//!
//! Sub-streams are addressed by a path of integers, e.g. `(seed, epoch, index)`,
//! so that two runs asking for the same path see the same numbers regardless of
//! what else was sampled before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of sub-stream coordinates.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng_for(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// Domain tags keep unrelated sub-streams apart.
pub mod stream {
    pub const SYNTH: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const EPISODE_TRAIN: u64 = 4;
    pub const EPISODE_VAL: u64 = 5;
    pub const EPISODE_TEST: u64 = 6;
    pub const AUGMENT: u64 = 7;
    pub const HEAD_INIT: u64 = 8;
    pub const FOREST: u64 = 9;
    pub const SELECTION: u64 = 10;
    pub const FOLDS: u64 = 11;
    pub const SPLIT: u64 = 12;
}
