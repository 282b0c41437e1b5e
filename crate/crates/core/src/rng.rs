//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is a
//! pure function of a small tuple of integers (master seed, trial index, cell
//! hash, purpose tag). Results therefore do not depend on execution order or
//! on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for [`derive_seed`]. Distinct tags give independent streams
/// from the same trial seed.
pub mod tag {
    pub const RESERVOIR: u64 = 0x5245_5345_5256_4f49;
    pub const INPUT_WEIGHTS: u64 = 0x494e_5055_5457_4549;
    pub const INPUTS: u64 = 0x494e_5055_5453_0000;
    pub const INIT: u64 = 0x494e_4954_0000_0000;
    pub const NOISE_A: u64 = 0x4e4f_4953_4541_0000;
    pub const NOISE_B: u64 = 0x4e4f_4953_4542_0000;
    pub const PERTURB: u64 = 0x5045_5254_5552_4200;
    pub const REDRAW: u64 = 0x5245_4452_4157_0000;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a single well-mixed 64-bit seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, tag: u64) -> StreamRng {
    stream(derive_seed(&[seed, tag]))
}
