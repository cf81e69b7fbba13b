//! Reproducible random streams.
//!
//! One root seed fans out into independent ChaCha8 streams keyed by
//! `(particle, window, lane)`. A particle's stream depends only on its key,
//! never on the thread that happens to draw from it, so parallel and
//! sequential runs produce identical trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a stream, so that distinct uses of the same particle/window
/// never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Events = 1,
    Initial = 2,
    Replicate = 3,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a tag (iteration index,
/// replicate index, …).
pub fn derive_seed(root: u64, tag: u64) -> u64 {
    mix64(root ^ mix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Stream for `(particle, window, lane)` under `root`.
pub fn stream(root: u64, particle: u64, window: u64, lane: Lane) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(mix64(mix64(particle) ^ mix64(window).rotate_left(17) ^ (lane as u64).rotate_left(53)));
    rng
}
