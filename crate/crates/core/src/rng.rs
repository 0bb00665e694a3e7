//! Seed derivation. Every random stream in the simulator is keyed by a tuple
//! of integers so results never depend on execution order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels used as the first component of derived seeds.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const TRANSFORM: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const TRIAL: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tuple of keys.
pub fn derive(base: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ 0x5EED_F00D_CAFE_D00D);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shuffled(len: usize, seed: u64) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng(seed));
    idx
}
