//! SplitMix64 generator and per-task stream derivation.
//!
//! All randomized procedures (bootstrap resampling, feature subsampling,
//! permutation sampling, surrogate perturbations, data shuffling) draw from
//! this generator so results depend only on the seed, not on thread
//! scheduling or the `rand` crate's default algorithms.
//!
//! Constants (Steele, Lea & Flood, "Fast splittable pseudorandom number
//! generators", 2014):
//!
//! - state increment (golden gamma): `0x9E37_79B9_7F4A_7C15`
//! - output mix: `z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB`, `z ^ (z >> 31)`
//!
//! Stream `i` of seed `s` starts from state `mix(s + (i + 1) * GAMMA)`.

use rand_core::{impls, RngCore, SeedableRng};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Independent stream `index` derived from `seed`.
    pub fn stream(seed: u64, index: u64) -> Self {
        let start = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        SplitMix64 {
            state: mix64(start),
        }
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        impls::fill_bytes_via_next(self, dest)
    }
}

impl SeedableRng for SplitMix64 {
    type Seed = [u8; 8];

    fn from_seed(seed: Self::Seed) -> Self {
        SplitMix64 {
            state: u64::from_le_bytes(seed),
        }
    }

    fn seed_from_u64(state: u64) -> Self {
        SplitMix64 { state }
    }
}
