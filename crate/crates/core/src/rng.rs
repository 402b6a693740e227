//! Seed derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream whose seed is
//! derived from a parent seed through a fixed hash chain:
//!
//! ```text
//! child = splitmix64(splitmix64(parent ^ fnv1a64(label)) ^ fnv1a64(key))
//! ```
//!
//! `label` names the purpose (`"shift"`, `"mcdropout"`, ...) and `key` names the
//! unit of work (an item id, a pass index, a matrix cell). Because a child seed
//! depends only on its path from the master seed, work can be distributed over
//! any number of threads without changing the numbers drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for `(label, key)` under `parent`.
pub fn derive(parent: u64, label: &str, key: &[u8]) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a64(label.as_bytes())) ^ fnv1a64(key))
}

/// Derive a child seed keyed by an integer index.
pub fn derive_index(parent: u64, label: &str, index: u64) -> u64 {
    derive(parent, label, &index.to_le_bytes())
}

/// Derive a child seed keyed by a string (typically an item id).
pub fn derive_str(parent: u64, label: &str, key: &str) -> u64 {
    derive(parent, label, key.as_bytes())
}

pub fn stream(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
