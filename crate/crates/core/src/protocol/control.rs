use serde::Serialize;
use serde_json::Value;

use super::{CodecError, Envelope, PROTOCOL_VERSION};

/// Canonical JSON for any serializable value: struct fields in declaration
/// order, maps are `BTreeMap`s, floats use shortest round-trip formatting.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    // Only non-string map keys can fail here, and every map in the model is keyed
    // by a string or a transparent integer id.
    serde_json::to_vec(value).expect("canonical encoding of model value")
}

pub fn encode_control(envelope: &Envelope) -> Result<Vec<u8>, CodecError> {
    envelope.payload.validate()?;
    Ok(to_canonical_bytes(envelope))
}

pub fn decode_control(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| malformed(bytes, &e))?;
    let version = value
        .get("protocol_version")
        .ok_or_else(|| CodecError::Malformed { offset: 0, message: "missing protocol_version".into() })?;
    match version.as_u64() {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(CodecError::Version { found: v }),
        None => {
            return Err(CodecError::Malformed { offset: 0, message: "protocol_version is not an integer".into() })
        }
    }
    let envelope: Envelope = serde_json::from_slice(bytes).map_err(|e| malformed(bytes, &e))?;
    envelope.payload.validate()?;
    Ok(envelope)
}

fn malformed(bytes: &[u8], err: &serde_json::Error) -> CodecError {
    CodecError::Malformed { offset: error_offset(bytes, err), message: err.to_string() }
}

/// Byte offset of a JSON parse error; truncated input reports its length.
pub(crate) fn error_offset(bytes: &[u8], err: &serde_json::Error) -> usize {
    if err.is_eof() {
        bytes.len()
    } else {
        byte_offset(bytes, err.line(), err.column())
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}
