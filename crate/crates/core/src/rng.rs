//! Seed plumbing. Every stochastic routine takes a `u64` seed and builds its
//! own [`ChaCha8Rng`] from it, so outputs are a pure function of the inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one named purpose. Routines that share a user seed draw
/// from unrelated streams, so simulating and masking with the same seed does
/// not couple the mask to the events.
pub fn stream(seed: u64, purpose: &str) -> Rng {
    rng_from_seed(derive_seed(seed, purpose))
}

/// Per-trial stream seed.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed ^ trial
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for a named purpose (ground truth, data, mask, ...).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a(tag.as_bytes())))
}

/// FNV-1a; stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Uniform draw in the open interval (0, 1) from a hash, used where a value
/// must depend on labels rather than on draw order.
pub fn hash_uniform(seed: u64, parts: &[&str]) -> f64 {
    let mut h = mix64(seed);
    for p in parts {
        h = mix64(h ^ fnv1a(p.as_bytes()));
    }
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}
