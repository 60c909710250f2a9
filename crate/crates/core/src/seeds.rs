//! Deterministic seed derivation.
//!
//! Every stochastic component of the crate draws from a [`ChaCha8Rng`] seeded
//! through these helpers, so a run is reproducible from a single base seed on
//! any platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; good avalanche, used as the finalizer for derived seeds.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a list of byte strings.
///
/// The parts are folded in with FNV-1a (with a separator after each part so
/// `["ab","c"]` and `["a","bc"]` differ) and the result is finalized with one
/// SplitMix64 step.
pub fn derive_seed(base: u64, parts: &[&[u8]]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for &b in base.to_le_bytes().iter() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for part in parts {
        for &b in *part {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
        h = (h ^ 0xff).wrapping_mul(FNV_PRIME);
    }
    splitmix64(&mut h)
}

/// Standard RNG for the crate, constructed from a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
