//! Cell seeds: the first eight bytes (little endian) of
//! `SHA-256("<master>|<axis>=<value>|...")`.

use sha2::{Digest, Sha256};

pub fn hash_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of the cell identified by `axes`, in the given order.
pub fn cell_seed(master: u64, axes: &[(&str, String)]) -> u64 {
    let mut key = master.to_string();
    for (name, value) in axes {
        key.push('|');
        key.push_str(name);
        key.push('=');
        key.push_str(value);
    }
    hash_seed(&key)
}

/// Independent stream derived from a cell seed.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    hash_seed(&format!("{seed}#{tag}"))
}
