//! Named, hash-derived random streams.
//!
//! All randomness flows from one master seed. A stream is identified by the
//! master seed plus a path of string parts (for example
//! `["layout", participant, domain]`), hashed with SHA-256.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit seed from a master seed and a stream path.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        // length prefix keeps ["ab","c"] distinct from ["a","bc"]
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A generator for the named stream.
pub fn stream(master: u64, parts: &[&str]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Hex SHA-256 digest of arbitrary bytes (used for config digests).
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
