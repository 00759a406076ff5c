//! Deterministic seed derivation.
//!
//! Every random draw in the workspace descends from one master seed through
//! splitmix64 chains keyed by (component, index). Table-free, order-free:
//! path k's generator is the same no matter which paths were sampled before
//! it or on which worker thread it runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags for the independent consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Component {
    FbmPath = 1,
    MomentCheck = 2,
    SelfTest = 3,
}

const DIM_TAG: u64 = 0x71c9_4f5d_2f8a_3b17;

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `(component, index)` under `master`.
pub fn derive(master: u64, component: Component, index: u64) -> u64 {
    let mut s = master;
    let root = splitmix64(&mut s);
    let mut t = root ^ (component as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let branch = splitmix64(&mut t);
    let mut u = branch ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut u)
}

/// Second-level split, e.g. one stream per coordinate of a path.
pub fn derive_sub(parent: u64, sub_index: u64) -> u64 {
    let mut s = parent ^ DIM_TAG;
    let root = splitmix64(&mut s);
    let mut t = root ^ sub_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut t)
}

pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
