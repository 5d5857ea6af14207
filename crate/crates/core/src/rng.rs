//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream selected by a
//! master seed plus a tag (cycle index, subset indices, ...). Two runs that
//! touch the same tag see the same numbers regardless of scheduling or of
//! which other tags were visited.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tag into a single 64-bit stream id.
pub fn stream_id(tag: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64 ^ tag.len() as u64;
    for &t in tag {
        h = splitmix64(h ^ splitmix64(t));
    }
    h
}

/// Independent generator for `(master, tag)`.
pub fn substream(master: u64, tag: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(tag));
    rng
}

/// Domain separators for the different consumers of randomness.
pub mod tags {
    pub const OBSERVATION: u64 = 1;
    pub const SUBSET_POOL: u64 = 2;
    pub const AUDIT: u64 = 3;
    pub const SHELL: u64 = 4;
    pub const NULL_MOMENTS: u64 = 5;
}
