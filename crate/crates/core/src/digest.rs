//! 64-bit content digests (first eight bytes of SHA-256, big-endian).

use sha2::{Digest as _, Sha256};

pub fn digest64(bytes: &[u8]) -> u64 {
    let mut h = Digest64::new();
    h.update(bytes);
    h.finish()
}

#[derive(Clone, Default)]
pub struct Digest64(Sha256);

impl Digest64 {
    pub fn new() -> Self {
        Digest64(Sha256::new())
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finish(self) -> u64 {
        let out = self.0.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&out[..8]);
        u64::from_be_bytes(first)
    }
}

pub fn to_hex(d: u64) -> String {
    format!("{d:016x}")
}

pub fn from_hex(s: &str) -> Option<u64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}
