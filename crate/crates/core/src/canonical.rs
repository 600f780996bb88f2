//! Canonical JSON: object keys sorted, no insignificant whitespace, floats
//! in their shortest round-trippable form.

use serde::Serialize;

/// Serializes `value` canonically.
///
/// Going through [`serde_json::Value`] sorts object keys, since the value
/// map is ordered.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    to_canonical_string(value).map(String::into_bytes)
}
