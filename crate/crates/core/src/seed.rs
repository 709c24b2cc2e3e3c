//! Seed derivation. Every randomized step gets its own generator derived
//! from the run seed plus a stream tag, so results do not depend on the
//! order in which independent steps execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of stream components.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

/// Stream tags, kept distinct so unrelated steps never share a generator.
pub mod stream {
    pub const PAIRING: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const AE_INIT: u64 = 5;
    pub const AE_SHUFFLE: u64 = 6;
    pub const CNN_INIT: u64 = 7;
    pub const CNN_SHUFFLE: u64 = 8;
    pub const PARTICIPATION: u64 = 9;
    pub const TEST_PARTITION: u64 = 10;
}
