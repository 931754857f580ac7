//! Deterministic random-number plumbing.
//!
//! Every random decision in the pipeline descends from one master seed.
//! Independent consumers (stages, trees in a forest, CV shuffles) get
//! their own streams by mixing the master seed with a stable label via
//! [`derive_seed`], so adding a consumer never perturbs the draws of an
//! existing one. The generator everywhere is ChaCha8, whose output is
//! specified bit-for-bit and therefore identical across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::fnv1a64;

/// SplitMix64 output function: a fixed bijective scramble of a 64-bit
/// counter with good avalanche behaviour. Used to turn `(seed, label)`
/// pairs into well-separated stream seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a substream seed from a master seed and a textual label.
///
/// The label is hashed (FNV-1a 64), XORed into the master seed, and the
/// result is scrambled through [`splitmix64`]. Labels are part of the
/// reproducibility contract: the same `(master, label)` pair yields the
/// same substream in every build.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a64(label.as_bytes()))
}

/// Derives a substream seed from a master seed and an index, for families
/// of streams like per-tree RNGs.
pub fn derive_seed_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, label).wrapping_add(index))
}

/// Standard generator for a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
