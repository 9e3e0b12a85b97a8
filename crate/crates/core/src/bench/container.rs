//! `MDB1` dataset files.
//!
//! Layout: the 4-byte magic `MDB1`, a little-endian `u64` header length, the
//! UTF-8 JSON header, zero padding to a 64-byte boundary, then the arrays.
//! Array offsets in the header are relative to the start of that data
//! section and each array starts on a 64-byte boundary. Arrays are raw
//! little-endian `f64`: `u` and `u_t_clean` with shape `[d, N_t, N_1, ...]`,
//! then one coordinate vector per axis named after the axis.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::systems::{Dataset, DatasetMeta, GroundTruth, SystemKind};
use crate::tensorgrid::{Axis, Field};

use super::BenchError;

pub const MAGIC: &[u8; 4] = b"MDB1";
pub const FORMAT_VERSION: u64 = 1;
const ALIGN: usize = 64;

const KNOWN_FIELDS: &[&str] = &[
    "format_version",
    "system",
    "kind",
    "d",
    "D",
    "axes",
    "snr_db",
    "seeds",
    "ground_truth",
    "metadata",
    "arrays",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AxisEntry {
    name: String,
    start: f64,
    step: f64,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Seeds {
    dataset: u64,
    noise: Option<u64>,
}

/// A dataset plus any header fields this version does not interpret.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dataset: Dataset,
    pub extra: Map<String, Value>,
}

impl From<Dataset> for Container {
    fn from(dataset: Dataset) -> Self {
        Container { dataset, extra: Map::new() }
    }
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn header_error(msg: impl Into<String>) -> BenchError {
    BenchError::Container(msg.into())
}

/// Serializes a container to bytes.
pub fn encode(container: &Container) -> Result<Vec<u8>, BenchError> {
    let ds = &container.dataset;
    let field = &ds.field;
    let mut axes = vec![&field.time];
    axes.extend(field.space.iter());

    let mut payloads: Vec<(String, Vec<usize>, Vec<f64>)> = vec![
        ("u".into(), field.values.shape().to_vec(), field.values.iter().copied().collect()),
        (
            "u_t_clean".into(),
            ds.clean_derivative.shape().to_vec(),
            ds.clean_derivative.iter().copied().collect(),
        ),
    ];
    for a in &axes {
        payloads.push((a.name.clone(), vec![a.count], a.coordinates()));
    }
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (name, shape, data) in &payloads {
        let length = data.len() * 8;
        entries.push(ArrayEntry {
            name: name.clone(),
            dtype: "f64".into(),
            shape: shape.clone(),
            offset: offset as u64,
            length: length as u64,
        });
        offset = align(offset + length);
    }

    let mut header = container.extra.clone();
    for k in KNOWN_FIELDS {
        header.remove(*k);
    }
    let put = |h: &mut Map<String, Value>, k: &str, v: Value| {
        h.insert(k.to_string(), v);
    };
    put(&mut header, "format_version", Value::from(FORMAT_VERSION));
    put(&mut header, "system", Value::from(ds.meta.system.clone()));
    put(&mut header, "kind", serde_json::to_value(&ds.meta.kind)?);
    put(&mut header, "d", Value::from(field.n_states()));
    put(&mut header, "D", Value::from(field.n_space()));
    let axis_entries: Vec<AxisEntry> = axes
        .iter()
        .map(|a| AxisEntry { name: a.name.clone(), start: a.start, step: a.step, count: a.count })
        .collect();
    put(&mut header, "axes", serde_json::to_value(&axis_entries)?);
    put(&mut header, "snr_db", serde_json::to_value(&ds.meta.snr_db)?);
    put(
        &mut header,
        "seeds",
        serde_json::to_value(&Seeds { dataset: ds.meta.dataset_seed, noise: ds.meta.noise_seed })?,
    );
    put(&mut header, "ground_truth", serde_json::to_value(&ds.meta.ground_truth)?);
    put(&mut header, "metadata", Value::Object(ds.meta.metadata.clone()));
    put(&mut header, "arrays", serde_json::to_value(&entries)?);

    let header_bytes = serde_json::to_vec(&Value::Object(header))?;
    let data_start = align(4 + 8 + header_bytes.len());
    let mut out = Vec::with_capacity(data_start + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.resize(data_start, 0);
    for ((_, _, data), entry) in payloads.iter().zip(&entries) {
        out.resize(data_start + entry.offset as usize, 0);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.resize(data_start + offset, 0);
    Ok(out)
}

/// Parses container bytes.
pub fn decode(bytes: &[u8]) -> Result<Container, BenchError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(header_error("bad magic: not an MDB1 file"));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| header_error("truncated header"))?;
    let header: Value = serde_json::from_slice(&bytes[12..header_end])?;
    let Value::Object(mut header) = header else {
        return Err(header_error("header is not a JSON object"));
    };
    let version = header
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| header_error("missing format_version"))?;
    if version != FORMAT_VERSION {
        return Err(BenchError::Version { found: version, supported: FORMAT_VERSION });
    }
    let take = |h: &mut Map<String, Value>, k: &str| h.remove(k).ok_or_else(|| header_error(format!("missing header field `{k}`")));
    let system: String = serde_json::from_value(take(&mut header, "system")?)?;
    let kind: SystemKind = serde_json::from_value(take(&mut header, "kind")?)?;
    let d: usize = serde_json::from_value(take(&mut header, "d")?)?;
    let dims: usize = serde_json::from_value(take(&mut header, "D")?)?;
    let axes: Vec<AxisEntry> = serde_json::from_value(take(&mut header, "axes")?)?;
    let snr_db: Option<f64> = serde_json::from_value(take(&mut header, "snr_db")?)?;
    let seeds: Seeds = serde_json::from_value(take(&mut header, "seeds")?)?;
    let ground_truth: Vec<GroundTruth> = serde_json::from_value(take(&mut header, "ground_truth")?)?;
    let metadata = match take(&mut header, "metadata")? {
        Value::Object(m) => m,
        _ => return Err(header_error("metadata must be an object")),
    };
    let mut entries: Vec<ArrayEntry> = serde_json::from_value(take(&mut header, "arrays")?)?;
    header.remove("format_version");

    if axes.len() != dims + 1 {
        return Err(header_error(format!("expected {} axes, found {}", dims + 1, axes.len())));
    }
    let data_start = align(header_end);
    let mut sorted: Vec<&ArrayEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.offset);
    for w in sorted.windows(2) {
        if w[0].offset + w[0].length > w[1].offset {
            return Err(header_error(format!("arrays `{}` and `{}` overlap", w[0].name, w[1].name)));
        }
    }
    for e in &entries {
        if e.dtype != "f64" {
            return Err(header_error(format!("array `{}` has unsupported type `{}`", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        if (n * 8) as u64 != e.length {
            return Err(header_error(format!("array `{}` length does not match its shape", e.name)));
        }
        let end = data_start as u64 + e.offset + e.length;
        if end > bytes.len() as u64 {
            return Err(BenchError::Truncated(e.name.clone()));
        }
    }
    let read = |name: &str| -> Result<(Vec<usize>, Vec<f64>), BenchError> {
        let e = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| header_error(format!("missing array `{name}`")))?;
        let start = data_start + e.offset as usize;
        let raw = &bytes[start..start + e.length as usize];
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((e.shape.clone(), values))
    };

    let axis_objs: Vec<Axis> = axes
        .iter()
        .map(|a| Axis::new(a.name.clone(), a.start, a.step, a.count))
        .collect::<Result<_, _>>()?;
    for a in &axis_objs {
        let (_, coords) = read(&a.name)?;
        if coords.len() != a.count {
            return Err(header_error(format!("coordinate array `{}` has the wrong length", a.name)));
        }
    }
    let mut expected = vec![d];
    expected.extend(axes.iter().map(|a| a.count));
    let to_array = |name: &str| -> Result<ArrayD<f64>, BenchError> {
        let (shape, values) = read(name)?;
        if shape != expected {
            return Err(header_error(format!("array `{name}` has shape {shape:?}, axes imply {expected:?}")));
        }
        Ok(ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape checked"))
    };
    let values = to_array("u")?;
    let clean_derivative = to_array("u_t_clean")?;
    let mut axis_iter = axis_objs.into_iter();
    let time = axis_iter.next().expect("at least the time axis");
    let field = Field::new(time, axis_iter.collect(), values)?;
    entries.clear();
    Ok(Container {
        dataset: Dataset {
            meta: DatasetMeta {
                system,
                kind,
                snr_db,
                dataset_seed: seeds.dataset,
                noise_seed: seeds.noise,
                ground_truth,
                metadata,
            },
            field,
            clean_derivative,
        },
        extra: header,
    })
}

pub fn write_container(container: &Container, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let bytes = encode(container)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_container(&Container::from(dataset.clone()), path)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container, BenchError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate, lookup, GenerateOptions};

    fn sample() -> Dataset {
        let spec = lookup("burgers").unwrap().with_grid_scale(0.25).unwrap();
        generate(&spec, &GenerateOptions::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = sample();
        let bytes = encode(&Container::from(ds.clone())).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.dataset, ds);
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(&bytes[..4], b"MDB1");
    }

    #[test]
    fn arrays_are_aligned() {
        let bytes = encode(&Container::from(sample())).unwrap();
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        let start = align(12 + header_len);
        for e in header["arrays"].as_array().unwrap() {
            assert_eq!((start + e["offset"].as_u64().unwrap() as usize) % 64, 0);
        }
    }

    #[test]
    fn unknown_fields_survive() {
        let mut c = Container::from(sample());
        c.extra.insert("comment".into(), Value::from("kept"));
        let back = decode(&encode(&c).unwrap()).unwrap();
        assert_eq!(back.extra.get("comment"), Some(&Value::from("kept")));
        assert_eq!(encode(&back).unwrap(), encode(&c).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = encode(&Container::from(sample())).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("magic"));

        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let cut = align(12 + header_len) + 100;
        let err = decode(&bytes[..cut]).unwrap_err();
        assert_eq!(err.to_string(), "truncated array `u`");

        let text = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();
        let future = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        let mut f = Vec::new();
        f.extend_from_slice(MAGIC);
        f.extend_from_slice(&(future.len() as u64).to_le_bytes());
        f.extend_from_slice(future.as_bytes());
        assert!(matches!(decode(&f), Err(BenchError::Version { found: 2, .. })));

        let mut header: Value = serde_json::from_str(&text).unwrap();
        header["arrays"][1]["offset"] = Value::from(8);
        let overlapped = serde_json::to_vec(&header).unwrap();
        let mut f = Vec::new();
        f.extend_from_slice(MAGIC);
        f.extend_from_slice(&(overlapped.len() as u64).to_le_bytes());
        f.extend_from_slice(&overlapped);
        f.resize(bytes.len() * 2, 0);
        assert!(decode(&f).unwrap_err().to_string().contains("overlap"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.mdb");
        let ds = sample();
        write_dataset(&ds, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = read_container(&path).unwrap();
        write_container(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }
}
