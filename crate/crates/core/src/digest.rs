//! Content digests used as cache keys and file names.

use sha2::{Digest, Sha256};

/// 128-bit hex digest (first 16 bytes of SHA-256) of the exact UTF-8 text.
pub fn prompt_digest(text: &str) -> String {
    bytes_digest(text.as_bytes())
}

/// 128-bit hex digest of arbitrary bytes.
pub fn bytes_digest(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    hex::encode(&full[..16])
}
