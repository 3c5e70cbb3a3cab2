//! Deterministic RNG stream derivation.
//!
//! Every source of randomness in a run is a ChaCha stream derived from the
//! experiment seed, an index (node id, round, grid point, ...), and a string
//! label naming the purpose. Streams with different labels are independent,
//! so e.g. a protocol that draws peers does not perturb the batch order of
//! one that does not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1_0000_0001_b3);
    }
    h
}

/// Derive a sub-seed from `(seed, index, label)`, for operations that take a
/// plain seed rather than a stream.
pub fn derive_seed(seed: u64, index: u64, label: &str) -> u64 {
    let mut state = seed;
    splitmix64(&mut state);
    state ^= index.wrapping_mul(GOLDEN_GAMMA);
    splitmix64(&mut state);
    state ^= fnv1a(label.as_bytes());
    splitmix64(&mut state)
}

/// Derive an independent seeded stream from `(seed, index, label)`.
pub fn derive_rng(seed: u64, index: u64, label: &str) -> ChaCha8Rng {
    let mut state = seed;
    splitmix64(&mut state);
    state ^= index.wrapping_mul(GOLDEN_GAMMA);
    splitmix64(&mut state);
    state ^= fnv1a(label.as_bytes());

    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
