//! Seeded random streams.
//!
//! Every source of randomness in the crate is a ChaCha8 stream derived
//! from a user-visible seed and a stream name, so ablations can vary one
//! factor (data, init, shuffle, batching) while holding the others fixed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives the seed of a named substream from a run seed.
///
/// FNV-1a over the stream name, folded into the seed and finished with a
/// splitmix64 round so that nearby seeds do not produce nearby streams.
pub fn subseed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, name))
}
