//! Seed derivation for order-independent random streams.
//!
//! Every random stream in the crate is keyed by a base seed plus a tuple of
//! integer tags (meeting index, window index, epoch, ...). Generating item
//! `i` never consumes randomness belonging to item `j`, so results do not
//! depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with tags into a single 64-bit key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Domain tags keep streams for different purposes apart.
pub mod tag {
    pub const MEETING: u64 = 1;
    pub const PROTOTYPE: u64 = 2;
    pub const WINDOW_NOISE: u64 = 3;
    pub const SOT: u64 = 4;
    pub const ASR: u64 = 5;
    pub const ROTATION: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const INIT: u64 = 8;
    pub const KMEANS: u64 = 9;
    pub const ORDER: u64 = 10;
    pub const DROPOUT: u64 = 11;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
