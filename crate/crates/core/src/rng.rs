//! Deterministic random streams keyed by (seed, tags).
//!
//! Every consumer derives its own stream from the experiment seed and a tag
//! path, so results never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `tags` under `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let id = tags.iter().fold(0x6a09_e667_f3bc_c909u64, |acc, &t| splitmix64(acc ^ splitmix64(t)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) mod tag {
    pub const IDENTITY: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const GALLERY: u64 = 3;
    pub const CLOSED_PROBES: u64 = 4;
    pub const OPEN_PROBES: u64 = 5;
    pub const PERMUTATION: u64 = 6;
}
