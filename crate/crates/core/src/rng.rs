//! Deterministic random-number streams.
//!
//! Every stochastic site in the crate draws from a [`ChaCha20Rng`] derived
//! from a master seed plus a list of integer tags (epoch, step, batch index,
//! replicate, ...). Streams for distinct tag lists are independent, and the
//! same `(seed, tags)` pair yields the same stream on every platform and
//! regardless of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purpose tags keep unrelated subsystems on unrelated streams even when
/// their numeric tags collide.
pub mod tags {
    pub const INIT: u64 = 0x01;
    pub const TRAIN_STEP: u64 = 0x02;
    pub const SHUFFLE: u64 = 0x03;
    pub const EVAL: u64 = 0x04;
    pub const SAMPLER: u64 = 0x05;
    pub const PREDICT: u64 = 0x06;
    pub const SYNTH: u64 = 0x07;
    pub const TRIALS: u64 = 0x08;
    pub const ABLATE: u64 = 0x09;
}

/// splitmix64 finalizer; good avalanche, cheap.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives an independent stream from `seed` and a tag path.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha20Rng {
    let mut state = mix(seed ^ 0x6d74_7070_7365_6564); // "mtppseed"
    for &t in path {
        state = mix(state ^ mix(t));
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_mut(8) {
        s = mix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}
