//! Canonical JSON encoding used for every hashed or signed structure.
//!
//! Rules: object keys sorted by UTF-8 byte order, no insignificant
//! whitespace, integers in base 10, binary values as lowercase hex strings
//! (handled by the [`Digest`](super::Digest) family of newtypes), floats in
//! their shortest round-trip form. `null` and non-finite numbers are
//! rejected.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("unencodable value: {0}")]
    UnencodableValue(String),
}

/// Converts any serializable value into a JSON tree suitable for
/// [`canonical_bytes`].
pub fn to_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, CanonicalError> {
    serde_json::to_value(value).map_err(|e| CanonicalError::UnencodableValue(e.to_string()))
}

pub fn canonical_bytes(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(64);
    encode(value, &mut out)?;
    Ok(out)
}

pub fn canonical_bytes_of<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    canonical_bytes(&to_value(value)?)
}

fn encode(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => {
            return Err(CanonicalError::UnencodableValue("null".into()));
        }
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                if !f.is_finite() {
                    return Err(CanonicalError::UnencodableValue(format!("{f}")));
                }
            }
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                encode(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                encode(v, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's escaping is minimal and deterministic.
    serde_json::to_writer(&mut *out, s).expect("writing to a Vec cannot fail");
}

/// Serde helpers that refuse non-finite floats instead of letting
/// serde_json silently turn them into `null`.
pub(crate) mod finite {
    use serde::ser::{Error, SerializeMap};
    use serde::Serializer;
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if !v.is_finite() {
            return Err(S::Error::custom(format!("non-finite number {v}")));
        }
        s.serialize_f64(*v)
    }

    pub fn map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            if !v.is_finite() {
                return Err(S::Error::custom(format!("non-finite number {v} at {k}")));
            }
            out.serialize_entry(k, v)?;
        }
        out.end()
    }
}
