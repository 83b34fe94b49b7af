//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer of randomness asks for its own stream by name, so adding or
//! reordering draws in one component never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream names used across the crate.
pub mod streams {
    pub const INIT: &str = "init";
    pub const MINOR_MASK: &str = "minor-mask";
    pub const DATA: &str = "data";
    pub const PROBES: &str = "probes";
    pub const SHUFFLE: &str = "shuffle";
    pub const HEADS: &str = "heads";
}

// FNV-1a, stable across platforms and releases (unlike std's hasher).
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Deterministic generator for `(seed, name)`.
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Sub-stream further keyed by an index, e.g. one stream per task.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}
