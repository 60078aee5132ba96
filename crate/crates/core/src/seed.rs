//! Counter-based seed derivation.
//!
//! Every random stream in the library is a `ChaCha8Rng` seeded from a value
//! derived from a master seed and a path of counters (generation, row,
//! episode, ...). Streams therefore never depend on evaluation order, which
//! keeps parallel and serial runs bitwise identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used for every simulation stream.
pub type SimRng = ChaCha8Rng;

/// Stream tags used when deriving sub-seeds.
pub mod tags {
    pub const INIT: u64 = 0x494e_4954;
    pub const EVAL: u64 = 0x4556_414c;
    pub const BREED: u64 = 0x4252_4545;
    pub const PERMUTE: u64 = 0x5045_524d;
    pub const PRUNE: u64 = 0x5052_554e;
    pub const FINETUNE: u64 = 0x4649_4e45;
    pub const EPISODE: u64 = 0x4550_4953;
    pub const TRAIN: u64 = 1;
    pub const EVALUATION: u64 = 2;
    pub const ENVIRONMENT: u64 = 3;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `master` and a path of counters.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// A fresh RNG for the stream identified by `master` and `path`.
pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
