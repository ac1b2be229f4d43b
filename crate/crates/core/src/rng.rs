//! Deterministic per-key random streams.
//!
//! Simulation draws for one vehicle come from a stream keyed on the run seed
//! and the vehicle id, so adding or removing other vehicles never shifts the
//! draws a given vehicle sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream(seed: u64, key: &str, salt: u64) -> ChaCha8Rng {
    let mixed = splitmix(seed ^ splitmix(fnv1a(key) ^ splitmix(salt)));
    ChaCha8Rng::seed_from_u64(mixed)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
