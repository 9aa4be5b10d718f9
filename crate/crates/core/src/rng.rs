//! Deterministic, domain-separated RNG streams.
//!
//! Every stochastic choice in the pipeline draws from a stream keyed by a
//! base seed plus a list of stream labels (epoch index, record index, ...).
//! Streams keyed by position instead of consumed sequentially make parallel
//! generation and mid-run resumption byte-exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Build a ChaCha8 RNG from a base seed and a list of stream labels.
///
/// The mapping is a fixed function of its inputs; it does not depend on any
/// hasher state, so streams are stable across runs and platforms.
pub fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    let _ = splitmix64(&mut state);
    for &label in labels {
        state ^= label.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        let _ = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit hash of a byte string, for content-keyed streams.
pub fn content_key(bytes: &[u8]) -> u64 {
    // FNV-1a, 64-bit.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: f64 = stream(7, &[1, 2]).random();
        let b: f64 = stream(7, &[1, 2]).random();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_separated() {
        let a: f64 = stream(7, &[1, 2]).random();
        let b: f64 = stream(7, &[2, 1]).random();
        let c: f64 = stream(8, &[1, 2]).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn content_key_is_stable() {
        assert_eq!(content_key(b""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(content_key(b"a"), content_key(b"a"));
        assert_ne!(content_key(b"a"), content_key(b"b"));
    }
}
