//! Keyed random streams.
//!
//! Every stochastic stage draws from a ChaCha8 stream whose 256-bit key is
//! the SHA-256 digest of the global seed followed by a list of labelled
//! parts (image id, corruption kind, step index, ...). ChaCha is a counter
//! mode generator, so two streams with different keys are independent and a
//! given key always yields the same sequence on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// One component of a stream key.
#[derive(Debug, Clone, Copy)]
pub enum KeyPart<'a> {
    Str(&'a str),
    U64(u64),
}

impl<'a> From<&'a str> for KeyPart<'a> {
    fn from(s: &'a str) -> Self {
        KeyPart::Str(s)
    }
}

impl<'a> From<&'a String> for KeyPart<'a> {
    fn from(s: &'a String) -> Self {
        KeyPart::Str(s.as_str())
    }
}

impl From<u64> for KeyPart<'_> {
    fn from(v: u64) -> Self {
        KeyPart::U64(v)
    }
}

impl From<usize> for KeyPart<'_> {
    fn from(v: usize) -> Self {
        KeyPart::U64(v as u64)
    }
}

impl From<u32> for KeyPart<'_> {
    fn from(v: u32) -> Self {
        KeyPart::U64(v as u64)
    }
}

/// 32-byte digest of `(seed, parts...)`; parts are length-prefixed so that
/// `("ab", "c")` and `("a", "bc")` never collide.
pub fn key_digest(seed: u64, parts: &[KeyPart<'_>]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"sfod-stream-v1");
    hasher.update(seed.to_le_bytes());
    for part in parts {
        match part {
            KeyPart::Str(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            KeyPart::U64(v) => {
                hasher.update([1u8]);
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

/// Independent stream keyed by `(seed, parts...)`.
pub fn stream(seed: u64, parts: &[KeyPart<'_>]) -> StreamRng {
    ChaCha8Rng::from_seed(key_digest(seed, parts))
}

/// Derive a 64-bit sub-seed, for components that take a plain `u64` seed.
pub fn derive_seed(seed: u64, parts: &[KeyPart<'_>]) -> u64 {
    let d = key_digest(seed, parts);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
