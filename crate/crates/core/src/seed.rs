//! Reproducible seed derivation.
//!
//! Independent work items (channel realizations, heuristic iterations) each get
//! their own generator whose seed is a pure function of the master seed and the
//! item's index path. The mixing function is the SplitMix64 finalizer, applied
//! once to the master seed and once per path component:
//!
//! ```text
//! s0   = mix(master)
//! s_i  = mix(s_{i-1} ^ mix(index_i + GOLDEN))
//! ```
//!
//! so `derive_seed(m, &[f, i])` is stable across platforms and releases, and
//! parallel execution reproduces the sequential result exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix(master), |s, &i| mix(s ^ mix(i.wrapping_add(GOLDEN))))
}

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
