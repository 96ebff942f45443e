//! Seeded random streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha stream whose seed is
//! derived from a global seed plus a small tuple of indices, so results do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purposes keep streams for different uses of the same indices apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Particles = 3,
    Inference = 4,
    Labels = 5,
    Split = 6,
    Attack = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA5A5_5A5A)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, indices))
}
