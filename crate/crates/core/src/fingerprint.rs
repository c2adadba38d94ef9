//! Content hashes for tables of floats.

use core::fmt;
use sha2::{Digest, Sha256};

/// A 64-bit content hash (leading bytes of SHA-256 over the hashed content).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Incremental hasher. Floats are hashed by bit pattern, so `0.0` and `-0.0`
/// differ and the hash is exact rather than tolerance-based.
#[derive(Clone, Default)]
pub struct FingerprintBuilder {
    hasher: Sha256,
}

impl FingerprintBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(mut self, tag: &str) -> Self {
        self.hasher.update((tag.len() as u64).to_le_bytes());
        self.hasher.update(tag.as_bytes());
        self
    }

    pub fn usize(mut self, x: usize) -> Self {
        self.hasher.update((x as u64).to_le_bytes());
        self
    }

    pub fn floats(mut self, xs: &[f64]) -> Self {
        self.hasher.update((xs.len() as u64).to_le_bytes());
        for x in xs {
            self.hasher.update(x.to_bits().to_le_bytes());
        }
        self
    }

    pub fn bools(mut self, xs: &[bool]) -> Self {
        self.hasher.update((xs.len() as u64).to_le_bytes());
        for &x in xs {
            self.hasher.update([x as u8]);
        }
        self
    }

    pub fn fingerprint(mut self, fp: Fingerprint) -> Self {
        self.hasher.update(fp.0.to_le_bytes());
        self
    }

    pub fn finish(self) -> Fingerprint {
        let digest = self.hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_le_bytes(bytes))
    }
}
