//! Dataset files, checkpoints, flat config files, and the synthetic
//! benchmark generator.

pub mod checkpoint;
pub mod config_file;
pub mod formats;
pub mod synth;

/// FNV-1a over a byte string; used for config hashes and derived seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
