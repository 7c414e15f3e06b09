//! Deterministic random streams.
//!
//! Every stochastic stage draws from a counter-based [`ChaCha8Rng`] whose
//! seed is derived from a master seed and a stream index. Ensemble run `i`
//! always gets `derive_seed(master_seed, i)`, so results do not depend on
//! how runs are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby integers.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and a stream index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Opens the seeded generator for one stream.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags separating the stages of a single SOM run.
pub(crate) mod tag {
    pub const INIT: u64 = 0x494e_4954;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const JOIN: u64 = 0x4a4f_494e;
}
