//! Counter-based random streams.
//!
//! Every randomized operation takes a `(seed, stream)` pair. ChaCha keeps a
//! 64-bit stream id next to the key, so distinct streams are independent
//! and sampling is reproducible no matter how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a purpose tag and a counter into one stream id.
pub fn stream_id(tag: u32, counter: u32) -> u64 {
    (u64::from(tag) << 32) | u64::from(counter)
}

/// Derives a child seed so nested procedures get their own key space.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
