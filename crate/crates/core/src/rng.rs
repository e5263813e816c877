//! Seed derivation for independent, reproducible random streams.
//!
//! Every random draw in a run comes from a stream keyed by the run seed plus
//! a salt path (e.g. `[CHANNEL, kind, a, b]` for one radio link). Keyed
//! streams make paired experiments possible: removing a gNB from a scenario
//! does not shift the draws of the surviving links, UEs, or flows.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SALT_DEPLOYMENT: u64 = 0x01;
pub const SALT_CHANNEL: u64 = 0x02;
pub const SALT_TRAFFIC: u64 = 0x03;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed with a salt path into a single 64-bit stream key.
pub fn mix(seed: u64, salts: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &salt in salts {
        s = splitmix64(s ^ splitmix64(salt));
    }
    s
}

/// Deterministic RNG for the stream identified by `(seed, salts)`.
pub fn stream_rng(seed: u64, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, salts))
}
