//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from one master seed so that
//! runs are reproducible end to end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` for the named subsystem.
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h = splitmix64(master);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// Derives a child seed for the `index`-th member of a family (episodes, frames).
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(master, label) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
