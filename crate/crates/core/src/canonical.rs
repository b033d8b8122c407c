//! Canonical JSON: UTF-8, object keys sorted, no insignificant whitespace,
//! integers verbatim and every non-integer number printed with exactly six
//! decimal places.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub const FLOAT_DECIMALS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("value is not representable as JSON: {0}")]
    Encode(#[source] serde_json::Error),
    #[error("malformed canonical document: {0}")]
    Decode(#[source] serde_json::Error),
}

/// Serializes `value` into canonical bytes.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let tree = serde_json::to_value(value).map_err(CanonicalError::Encode)?;
    Ok(value_to_canonical(&tree).into_bytes())
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    let tree = serde_json::to_value(value).map_err(CanonicalError::Encode)?;
    Ok(value_to_canonical(&tree))
}

pub fn from_canonical_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    serde_json::from_slice(bytes).map_err(CanonicalError::Decode)
}

pub fn value_to_canonical(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

/// Formats a float the way canonical documents do.
pub fn format_float(x: f64) -> String {
    let s = format!("{:.*}", FLOAT_DECIMALS, x);
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    // serde_json's escaping is already deterministic
    out.push_str(&serde_json::to_string(s).expect("strings always encode"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_floats_fixed() {
        let v = json!({"b": 1, "a": [0.5, 2, -0.0000001, "x"], "c": {"z": true, "y": null}});
        assert_eq!(
            value_to_canonical(&v),
            r#"{"a":[0.500000,2,0.000000,"x"],"b":1,"c":{"y":null,"z":true}}"#
        );
    }

    #[test]
    fn float_round_trip_is_stable() {
        let v = json!({"s": 0.1234567});
        let once = value_to_canonical(&v);
        let back: Value = serde_json::from_str(&once).unwrap();
        assert_eq!(value_to_canonical(&back), once);
        assert_eq!(once, r#"{"s":0.123457}"#);
    }
}
