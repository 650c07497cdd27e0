//! Deterministic stream derivation.
//!
//! A single master seed fans out into independent, labelled substreams
//! (channel draws, receiver noise, per-client mini-batch order, Gibbs
//! proposals, data partitioning). Substreams are keyed by a label and up
//! to two indices, so results do not depend on the order in which
//! streams are consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive an independent ChaCha8 stream from `(master, label, a, b)`.
pub fn derive_stream(master: u64, label: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = master
        ^ fnv1a(label.as_bytes()).rotate_left(17)
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31)
        ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(47);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
