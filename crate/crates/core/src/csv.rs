//! Text formatting shared by every CSV writer: 17 significant digits,
//! `.` decimal separator, LF line endings.

use sha2::{Digest, Sha256};

/// Formats `x` with 17 significant digits so that it round-trips exactly.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn sha256_prefix(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
