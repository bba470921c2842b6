//! Seeded random streams. Every consumer derives its own substream from
//! `(seed, purpose, index)` so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes; distinct constants keep substreams independent.
pub mod stream {
    pub const SPECIMEN: u64 = 0x5bd1_e995;
    pub const INIT: u64 = 0x27d4_eb2f;
    pub const SHUFFLE: u64 = 0x1656_67b1;
    pub const AUGMENT: u64 = 0x9e37_79b9;
    pub const SPLIT: u64 = 0x85eb_ca6b;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, purpose: u64, index: u64) -> Rng {
    let key = splitmix(splitmix(seed ^ purpose.rotate_left(17)) ^ index);
    Rng::seed_from_u64(key)
}
