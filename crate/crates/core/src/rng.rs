//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from the user seed plus a
//! label (a category name, a sequence id, a dropout rate), so results never
//! depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// A stream keyed by `seed` and an ordered list of labels.
pub fn derive(seed: u64, parts: &[&[u8]]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
