//! Seed derivation.
//!
//! Every random stream in the toolkit is keyed by `(master seed, component
//! name, index)`. The component name picks the ChaCha key and the index picks
//! the stream, so a replicate, permutation or episode always draws the same
//! numbers no matter which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit sub-seed for `(component, index)`.
pub fn derive_seed(seed: u64, component: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(component.as_bytes())) ^ index)
}

/// Deterministic generator for `(seed, component, index)`.
pub fn derive_rng(seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(component.as_bytes())));
    rng.set_stream(index);
    rng
}
