//! Content hashing shared by example identity, cache keys and run fingerprints.

use sha2::{Digest, Sha256};

/// Collapses runs of whitespace and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// SHA-256 over the given fields, each length-prefixed so that field
/// boundaries cannot be forged by concatenation.
pub fn hash_fields<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher.finalize().into()
}

pub fn hash_hex<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> String {
    hex::encode(hash_fields(fields))
}

/// First 8 bytes of a field hash, for seeding PRNGs.
pub fn hash_u64<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let digest = hash_fields(fields);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
