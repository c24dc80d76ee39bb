//! Counter-based random substreams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by
//! `(seed, stream id)`. Stream ids are derived from stable integers
//! (image index, glimpse counter, epoch, ...) so that any individual
//! draw can be reproduced without replaying the whole run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A seeded RNG on an isolated stream.
///
/// Streams for distinct `(a, b)` pairs never collide as long as
/// `a < 2^48` and `b < 2^16`, which covers every counter used here.
pub fn substream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((a << 16) | (b & 0xFFFF));
    rng
}

/// Derives an unrelated base seed for a named subsystem.
///
/// Mixing with splitmix64 keeps e.g. mask sampling and weight
/// initialization decorrelated even when the user supplies one seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
