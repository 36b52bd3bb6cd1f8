//! Versioned single-file model container.
//!
//! Layout: magic `CTGM`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header, then the raw little-endian payload of every
//! named array in header order. The header describes the model with each
//! non-empty numeric array replaced by `{"$array": index}`, so numbers are
//! stored bit-exactly and the file is self-describing.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTGM";
pub const FORMAT_VERSION: u32 = 1;
const ARRAY_KEY: &str = "$array";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    U64,
    I64,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: Dtype,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    arrays: Vec<ArrayEntry>,
    body: Value,
}

/// Arrays pulled out of a JSON tree, with their packed payload.
struct Extracted {
    arrays: Vec<ArrayEntry>,
    payload: Vec<u8>,
}

fn numeric_dtype(items: &[Value]) -> Option<Dtype> {
    if items.is_empty() {
        return None;
    }
    if items.iter().all(|v| v.as_u64().is_some()) {
        Some(Dtype::U64)
    } else if items.iter().all(|v| v.as_i64().is_some()) {
        Some(Dtype::I64)
    } else if items.iter().all(|v| matches!(v, Value::Number(n) if n.is_f64())) {
        Some(Dtype::F64)
    } else {
        None
    }
}

fn extract(value: Value, path: &str, out: &mut Extracted) -> Value {
    match value {
        Value::Array(items) => match numeric_dtype(&items) {
            Some(dtype) => {
                for v in &items {
                    match dtype {
                        Dtype::U64 => out.payload.extend(v.as_u64().unwrap().to_le_bytes()),
                        Dtype::I64 => out.payload.extend(v.as_i64().unwrap().to_le_bytes()),
                        Dtype::F64 => out.payload.extend(v.as_f64().unwrap().to_le_bytes()),
                    }
                }
                out.arrays.push(ArrayEntry {
                    name: path.to_string(),
                    dtype,
                    len: items.len(),
                });
                let mut m = Map::new();
                m.insert(ARRAY_KEY.into(), Value::from(out.arrays.len() - 1));
                Value::Object(m)
            }
            None => Value::Array(
                items
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| extract(v, &format!("{path}.{i}"), out))
                    .collect(),
            ),
        },
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    let v = extract(v, &p, out);
                    (k, v)
                })
                .collect(),
        ),
        other => other,
    }
}

fn restore(value: Value, arrays: &[Vec<Value>]) -> Result<Value> {
    match value {
        Value::Object(map) => {
            if map.len() == 1 {
                if let Some(idx) = map.get(ARRAY_KEY) {
                    let i = idx
                        .as_u64()
                        .filter(|&i| (i as usize) < arrays.len())
                        .ok_or_else(|| Error::Format(format!("bad array reference {idx}")))?;
                    return Ok(Value::Array(arrays[i as usize].clone()));
                }
            }
            let mut out = Map::new();
            for (k, v) in map {
                out.insert(k, restore(v, arrays)?);
            }
            Ok(Value::Object(out))
        }
        Value::Array(items) => Ok(Value::Array(
            items.into_iter().map(|v| restore(v, arrays)).collect::<Result<_>>()?,
        )),
        other => Ok(other),
    }
}

/// Serializes `body` into container bytes tagged with `kind`.
pub fn to_bytes<T: Serialize>(kind: &str, body: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(body).map_err(|e| Error::Format(e.to_string()))?;
    let mut ex = Extracted {
        arrays: Vec::new(),
        payload: Vec::new(),
    };
    let body = extract(value, "", &mut ex);
    let header = Header {
        kind: kind.to_string(),
        arrays: ex.arrays,
        body,
    };
    let text = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + text.len() + ex.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((text.len() as u64).to_le_bytes());
    out.extend(text);
    out.extend(ex.payload);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("file is truncated".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

/// Parses container bytes, checking the magic, version and `kind`.
pub fn from_bytes<T: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<T> {
    let mut at = 0;
    if take(bytes, &mut at, 4)? != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Format("header too large".into()))?;
    let header: Header =
        serde_json::from_slice(take(bytes, &mut at, len)?).map_err(|e| Error::Format(e.to_string()))?;
    if header.kind != kind {
        return Err(Error::Format(format!("container holds \"{}\", expected \"{kind}\"", header.kind)));
    }
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let raw = take(bytes, &mut at, entry.len.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        let items = raw
            .chunks_exact(8)
            .map(|c| {
                let b: [u8; 8] = c.try_into().unwrap();
                match entry.dtype {
                    Dtype::U64 => Ok(Value::from(u64::from_le_bytes(b))),
                    Dtype::I64 => Ok(Value::from(i64::from_le_bytes(b))),
                    Dtype::F64 => Number::from_f64(f64::from_le_bytes(b))
                        .map(Value::Number)
                        .ok_or_else(|| Error::Format(format!("non-finite value in {}", entry.name))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        arrays.push(items);
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after the last array".into()));
    }
    let body = restore(header.body, &arrays)?;
    serde_json::from_value(body).map_err(|e| Error::Format(e.to_string()))
}

/// Names, types and lengths of the arrays stored in a container.
pub fn array_table(bytes: &[u8]) -> Result<Vec<ArrayEntry>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut at = 16;
    let header: Header =
        serde_json::from_slice(take(bytes, &mut at, len)?).map_err(|e| Error::Format(e.to_string()))?;
    Ok(header.arrays)
}

pub fn write_file<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let bytes = to_bytes(kind, body)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(kind, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Sample {
        name: String,
        weights: Vec<f64>,
        codes: Vec<u32>,
        offsets: Vec<i64>,
        nested: Vec<Vec<f64>>,
        empty: Vec<f64>,
        scalar: f64,
    }

    fn sample() -> Sample {
        Sample {
            name: "s".into(),
            weights: vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0],
            codes: vec![0, 4, 9],
            offsets: vec![-3, 5],
            nested: vec![vec![1.5, 2.0], vec![]],
            empty: vec![],
            scalar: 0.2,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        let bytes = to_bytes("sample", &s).unwrap();
        let back: Sample = from_bytes("sample", &bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes("sample", &back).unwrap(), bytes);
        let names: Vec<String> = array_table(&bytes).unwrap().into_iter().map(|a| a.name).collect();
        // Keys are visited in sorted order.
        assert_eq!(names, ["codes", "nested.0", "offsets", "weights"]);
    }

    #[test]
    fn rejects_bad_files() {
        let mut bytes = to_bytes("sample", &sample()).unwrap();
        assert!(from_bytes::<Sample>("model", &bytes).is_err());
        let truncated = &bytes[..bytes.len() - 3];
        assert!(from_bytes::<Sample>("sample", truncated).is_err());
        bytes[4] = 99;
        let err = from_bytes::<Sample>("sample", &bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported container version 99"), "{err}");
        assert!(from_bytes::<Sample>("sample", b"PK\x03\x04rest").is_err());
    }

    proptest! {
        #[test]
        fn floats_survive_bit_for_bit(v in proptest::collection::vec(-1e300f64..1e300, 1..40)) {
            let s = Sample { weights: v.clone(), ..sample() };
            let back: Sample = from_bytes("sample", &to_bytes("sample", &s).unwrap()).unwrap();
            for (a, b) in back.weights.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
