//! Checkpoints: a JSON manifest plus raw little-endian tensor files.
//!
//! The model is serialized to JSON; every numeric array of at least
//! [`MIN_SIDECAR_LEN`] elements is moved into `<name>.bin` and replaced by
//! `{"$tensor": "<name>"}`, where `<name>` is the dotted JSON path of the
//! array. Integer arrays are stored as `i8` when every element fits and as
//! `i64` otherwise; real arrays as IEEE-754 `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};

use super::{ModelConfig, Stage, StageModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "spikeshift-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Shorter arrays stay inline in the manifest.
pub const MIN_SIDECAR_LEN: usize = 16;
const MANIFEST: &str = "manifest.json";
const TENSOR_KEY: &str = "$tensor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    I8,
    I64,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::I8 => 1,
            Dtype::I64 | Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    dtype: Dtype,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    stage: Stage,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    model: Value,
}

fn encode(items: &[Value]) -> Option<(Dtype, Vec<u8>)> {
    if items.iter().all(|v| v.is_i64()) {
        let ints: Vec<i64> = items.iter().filter_map(Value::as_i64).collect();
        if ints.iter().all(|&v| i8::try_from(v).is_ok()) {
            return Some((Dtype::I8, ints.iter().map(|&v| v as i8 as u8).collect()));
        }
        return Some((
            Dtype::I64,
            ints.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ));
    }
    if items.iter().all(Value::is_number) {
        let reals: Vec<f64> = items.iter().filter_map(Value::as_f64).collect();
        return Some((
            Dtype::F64,
            reals.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ));
    }
    None
}

fn extract(value: &mut Value, path: &str, out: &mut Vec<(TensorEntry, Vec<u8>)>) {
    match value {
        Value::Array(items) if items.len() >= MIN_SIDECAR_LEN => {
            if let Some((dtype, bytes)) = encode(items) {
                let entry = TensorEntry {
                    name: path.to_string(),
                    file: format!("{path}.bin"),
                    dtype,
                    len: items.len(),
                };
                *value = json!({ TENSOR_KEY: path });
                out.push((entry, bytes));
            } else {
                for (i, v) in items.iter_mut().enumerate() {
                    extract(v, &format!("{path}.{i}"), out);
                }
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                extract(v, &format!("{path}.{i}"), out);
            }
        }
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                extract(v, &format!("{path}.{k}"), out);
            }
        }
        _ => {}
    }
}

/// Writes `manifest.json` and the tensor files into `dir`, creating it.
pub fn save_checkpoint(model: &StageModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut value = serde_json::to_value(model.params())?;
    let mut tensors = Vec::new();
    extract(&mut value, "model", &mut tensors);
    for (entry, bytes) in &tensors {
        fs::write(dir.join(&entry.file), bytes)?;
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        stage: model.stage(),
        config: model.config().clone(),
        tensors: tensors.into_iter().map(|(e, _)| e).collect(),
        model: value,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn decode(entry: &TensorEntry, bytes: &[u8]) -> Result<Value> {
    if bytes.len() != entry.len * entry.dtype.size() {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes for {} {:?} elements",
            entry.file,
            bytes.len(),
            entry.len,
            entry.dtype
        )));
    }
    let items: Vec<Value> = match entry.dtype {
        Dtype::I8 => bytes.iter().map(|&b| Value::from(b as i8)).collect(),
        Dtype::I64 => bytes
            .chunks_exact(8)
            .map(|c| Value::from(i64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| {
                let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                Number::from_f64(v)
                    .map(Value::Number)
                    .ok_or_else(|| Error::Checkpoint(format!("{}: non-finite value", entry.file)))
            })
            .collect::<Result<_>>()?,
    };
    Ok(Value::Array(items))
}

fn tensor_ref(map: &Map<String, Value>) -> Option<&str> {
    if map.len() == 1 {
        map.get(TENSOR_KEY).and_then(Value::as_str)
    } else {
        None
    }
}

fn restore(value: &mut Value, tensors: &mut BTreeMap<String, Value>) -> Result<()> {
    match value {
        Value::Object(map) => {
            if let Some(name) = tensor_ref(map) {
                let data = tensors.remove(name).ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {name:?} is missing or reused"))
                })?;
                *value = data;
                return Ok(());
            }
            for v in map.values_mut() {
                restore(v, tensors)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                restore(v, tensors)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`] and re-validates it.
pub fn load_checkpoint(dir: &Path) -> Result<StageModel> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut tensors = BTreeMap::new();
    for entry in &manifest.tensors {
        if entry.file.contains(['/', '\\']) || entry.file.starts_with("..") {
            return Err(Error::Checkpoint(format!(
                "tensor file {:?} escapes the checkpoint",
                entry.file
            )));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        tensors.insert(entry.name.clone(), decode(entry, &bytes)?);
    }
    let mut value = manifest.model;
    restore(&mut value, &mut tensors)?;
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!(
            "tensor {name:?} is never referenced"
        )));
    }
    let params = serde_json::from_value(value)?;
    let model = StageModel::new(manifest.stage, params)?;
    if model.config() != &manifest.config {
        return Err(Error::Checkpoint(
            "manifest config disagrees with the model".into(),
        ));
    }
    Ok(model)
}
