//! Named random substreams derived from a single root seed.
//!
//! Every stochastic component (key generation, weight init, data order,
//! synthetic noise) draws from its own stream so that adding draws in one
//! place never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of a root seed and a stream name (FNV-1a over the name,
/// then splitmix). Independent of platform and std hasher randomization.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root) ^ h)
}

pub fn substream(root: u64, name: &str) -> Rng {
    Rng::seed_from_u64(stream_seed(root, name))
}
