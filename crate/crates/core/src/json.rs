use serde::Serialize;

use crate::error::Result;

/// JSON with object keys sorted at every level, so equal values always
/// serialize to identical bytes.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

pub fn to_canonical_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::to_value(value)?)?)
}
