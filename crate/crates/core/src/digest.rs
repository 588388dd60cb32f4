//! Canonical JSON hashing used for provenance and integrity digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Serialize through `serde_json::Value` (whose maps are key-sorted) so the
/// byte stream, and therefore the hash, is independent of field order.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Hex SHA-256 of the canonical JSON form.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
