//! Reproducible per-path random streams.
//!
//! Every stream is a pure function of `(seed, stream index)`: the 256-bit
//! generator state is assembled from SplitMix64 outputs of the seed and of the
//! index, so two distinct pairs never share a state and the order in which
//! streams are created or consumed is irrelevant.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type PathRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for stream `stream` under master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> PathRng {
    let mut a = seed;
    let mut b = stream ^ 0xD1B5_4A32_D192_ED03;
    let words = [
        splitmix64(&mut a),
        splitmix64(&mut a),
        splitmix64(&mut b),
        splitmix64(&mut b),
    ];
    let mut bytes = [0u8; 32];
    for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(bytes)
}

/// Child seed for a labelled sub-task (e.g. one dataset sample).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut s = seed ^ label.wrapping_mul(GOLDEN).rotate_left(17);
    splitmix64(&mut s)
}
