//! Counter-based random streams.
//!
//! Every random draw in the lab comes from a ChaCha stream whose key is a hash
//! of its coordinates (seed, purpose, iteration, problem, rollout index). A
//! trajectory's tokens therefore depend only on those coordinates, never on
//! scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    SuiteLayout = 0x5375_6974,
    Features = 0x4665_6174,
    Teacher = 0x5465_6163,
    Train = 0x5472_6169,
    Eval = 0x4576_616c,
    Batch = 0x4261_7463,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stream from a purpose tag and an ordered list of coordinates.
pub fn stream(purpose: Purpose, coords: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(purpose as u64);
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
