//! SHA-256 helpers used for provenance and freeze checks.

use sha2::{Digest, Sha256};

pub type Digest32 = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

pub fn sha256_f32(values: &[f32]) -> Digest32 {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

pub fn to_hex(d: &Digest32) -> String {
    hex::encode(d)
}
