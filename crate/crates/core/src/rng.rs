//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream derived from the run seed
//! and a path of integers (round, client, purpose). Streams never depend on
//! scheduling, so parallel and serial execution draw identical values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for every random draw in the crate.
pub type Stream = ChaCha8Rng;

/// Purpose tags keep sibling streams apart.
pub mod tag {
    pub const INIT: u64 = 0x01;
    pub const SAMPLE_USERS: u64 = 0x02;
    pub const CLIENT: u64 = 0x03;
    pub const DATA: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const HOLDOUT: u64 = 0x06;
    pub const PROBE: u64 = 0x07;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from `seed` and a path of integers.
pub fn derive(seed: u64, path: &[u64]) -> Stream {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17) ^ acc;
        acc = splitmix64(&mut state);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Stable 64-bit FNV-1a hash, used to key per-client streams by client id.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
