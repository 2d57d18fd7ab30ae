//! Stable seed derivation shared by every experiment.
//!
//! A derived seed is FNV-1a (64-bit) over the little-endian base seed, the
//! UTF-8 label and the little-endian index, passed through the SplitMix64
//! finalizer. Neither step depends on platform or hasher state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `(base, label, index)`.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(base.to_le_bytes(), FNV_OFFSET);
    let h = fnv1a(label.bytes(), h);
    let h = fnv1a(index.to_le_bytes(), h);
    splitmix64(h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
