//! Counter-based random streams derived from a single run seed.
//!
//! Every consumer draws from its own ChaCha8 stream identified by a domain tag
//! and up to two counters, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Values are part of the reproducibility contract.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const PPO_UPDATE: u64 = 3;
    pub const MCN_UPDATE: u64 = 4;
    pub const TEST: u64 = 5;
    pub const REGION: u64 = 6;
    pub const LEAN: u64 = 7;
}

const COUNTER_BITS: u32 = 28;

/// Stream `(domain, a, b)` of `seed`. `a` and `b` must be below 2^28.
pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    assert!(a < 1 << COUNTER_BITS && b < 1 << COUNTER_BITS, "stream counter out of range");
    assert!(domain < 256, "stream domain out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << (2 * COUNTER_BITS)) | (a << COUNTER_BITS) | b);
    rng
}
