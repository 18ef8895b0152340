//! Deterministic JSON report emission.
//!
//! Reports print every float with 17 significant digits in scientific
//! notation and keep object keys sorted, so identical runs produce
//! byte-identical documents. A single `timestamp_unix_s` field is the
//! only run-dependent value.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::problem::CliError;

/// Converts any serializable report into a JSON value tree.
pub fn to_value<T: Serialize>(value: &T) -> Result<Value, CliError> {
    serde_json::to_value(value).map_err(|e| CliError::Parse(e.to_string()))
}

/// Stamps the wall-clock time onto a report object.
pub fn add_timestamp(value: &mut Value) {
    if let Value::Object(map) = value {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        map.insert("timestamp_unix_s".into(), json_f64(now));
    }
}

fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Serializes a value tree with 17-significant-digit floats and
/// two-space indentation. Keys come out sorted (the value tree is a
/// B-tree map), so the bytes are deterministic.
pub fn write_json<W: Write>(value: &Value, w: &mut W) -> std::io::Result<()> {
    write_indented(value, w, 0)?;
    writeln!(w)
}

pub fn to_json_string(value: &Value) -> String {
    let mut buf = Vec::new();
    write_json(value, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("JSON output is UTF-8")
}

fn write_indented<W: Write>(value: &Value, w: &mut W, depth: usize) -> std::io::Result<()> {
    match value {
        Value::Null => write!(w, "null"),
        Value::Bool(b) => write!(w, "{b}"),
        Value::Number(n) => {
            if n.is_f64() {
                // 1 + 16 digits in scientific notation.
                write!(w, "{:.16e}", n.as_f64().expect("checked"))
            } else {
                write!(w, "{n}")
            }
        }
        Value::String(s) => {
            let escaped = serde_json::to_string(s).expect("strings always serialize");
            write!(w, "{escaped}")
        }
        Value::Array(items) => {
            if items.is_empty() {
                return write!(w, "[]");
            }
            // Scalar-only arrays stay on one line.
            let flat = items
                .iter()
                .all(|v| !matches!(v, Value::Array(_) | Value::Object(_)));
            if flat {
                write!(w, "[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(w, ", ")?;
                    }
                    write_indented(item, w, depth + 1)?;
                }
                return write!(w, "]");
            }
            writeln!(w, "[")?;
            for (i, item) in items.iter().enumerate() {
                indent(w, depth + 1)?;
                write_indented(item, w, depth + 1)?;
                if i + 1 < items.len() {
                    writeln!(w, ",")?;
                } else {
                    writeln!(w)?;
                }
            }
            indent(w, depth)?;
            write!(w, "]")
        }
        Value::Object(map) => {
            if map.is_empty() {
                return write!(w, "{{}}");
            }
            writeln!(w, "{{")?;
            for (i, (key, item)) in map.iter().enumerate() {
                indent(w, depth + 1)?;
                let escaped = serde_json::to_string(key).expect("strings always serialize");
                write!(w, "{escaped}: ")?;
                write_indented(item, w, depth + 1)?;
                if i + 1 < map.len() {
                    writeln!(w, ",")?;
                } else {
                    writeln!(w)?;
                }
            }
            indent(w, depth)?;
            write!(w, "}}")
        }
    }
}

fn indent<W: Write>(w: &mut W, depth: usize) -> std::io::Result<()> {
    for _ in 0..depth {
        write!(w, "  ")?;
    }
    Ok(())
}
