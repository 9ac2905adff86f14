//! Deterministic random streams.
//!
//! Every random draw in the crate goes through a counter-based ChaCha stream
//! keyed by an explicit 64-bit seed, so instances and start vectors regenerate
//! bit-identically across runs and thread counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn stream(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named substream of `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    stream(seed ^ h)
}
