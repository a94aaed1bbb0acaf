//! Keyed random streams.
//!
//! Every stochastic step draws from its own generator derived from the run
//! seed plus a key such as `(purpose, epoch, batch)`, so results do not
//! depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const AUGMENT: u64 = 3;
pub const NOISE: u64 = 4;
pub const DROPOUT: u64 = 5;
pub const KMEANS: u64 = 6;
pub const SAMPLE: u64 = 7;
pub const SUBSAMPLE: u64 = 8;
pub const SCORE: u64 = 9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, key))
}
