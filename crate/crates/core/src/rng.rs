//! Named, counter-based RNG streams.
//!
//! Every random decision in a run draws from a stream derived from the
//! master seed, a stream name and a small tuple of counters (iteration,
//! problem index, attempt ...). Two runs that share a master seed therefore
//! see the same planning problems regardless of strategy, while the
//! strategy-specific streams stay independent.
//!
//! Derivation: `splitmix64` is folded over the master seed, the FNV-1a hash
//! of the stream name, and each counter in order. The result seeds a
//! `ChaCha8Rng`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const PROBLEMS: &str = "problems";
pub const PLANNER: &str = "planner";
pub const STRATEGY: &str = "strategy";
pub const SUBSAMPLE: &str = "subsample";
pub const EVAL: &str = "eval";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a 64-bit seed for `name` and `counters` under `master`.
pub fn derive_seed(master: u64, name: &str, counters: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ fnv1a(name));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c));
    }
    h
}

pub fn stream(master: u64, name: &str, counters: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name, counters))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
