//! Counter-based random streams.
//!
//! Every Monte Carlo path draws from its own ChaCha8 stream keyed by
//! `(seed, index)`, so a bundle is a pure function of the seed and does not
//! depend on how paths are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type used for every simulated path.
pub type PathRng = ChaCha8Rng;

/// Returns the substream for path `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a base seed with a list of tags into a fresh 64-bit seed.
///
/// Used to give nested experiments (outer path, time slice, ...) their own
/// families of substreams without overlapping the parent family.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed ^ 0x6a09_e667_f3bc_c909);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
