//! Parameter checkpoints: one line of JSON header followed by little-endian
//! `f64` data for every tensor in header order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const FORMAT: &str = "panodream-params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset from the start of the data section.
    pub offset: usize,
    /// Element count.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub format: String,
    pub dtype: String,
    /// Free-form model description (architecture config, training step).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor4)>,
}

pub fn write_checkpoint(
    mut w: impl Write,
    store: &ParamStore,
    meta: &serde_json::Value,
) -> std::io::Result<()> {
    let mut offset = 0;
    let tensors = store
        .params()
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape(),
                offset,
                len: p.value.len(),
            };
            offset += 8 * p.value.len();
            e
        })
        .collect();
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        format: FORMAT.to_string(),
        dtype: "f64".to_string(),
        meta: meta.clone(),
        tensors,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in store.params() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), store, meta).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::Checkpoint(format!("reading header: {e}")))?;
    let header: CheckpointHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION || header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.schema_version
        )));
    }
    if header.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)
        .map_err(|e| Error::Checkpoint(format!("reading tensor data: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let end = e.offset + 8 * e.len;
        if end > data.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Checkpoint(format!("tensor `{}` is truncated or malformed", e.name)));
        }
        let values = data[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor4::from_vec(e.shape, values)
            .map_err(|err| Error::Checkpoint(format!("tensor `{}`: {err}", e.name)))?;
        tensors.push((e.name, t));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(f)
}

impl Checkpoint {
    /// Copies every tensor into the parameter of the same name. The store
    /// must hold exactly the checkpoint's parameter set with matching shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter `{name}`")))?;
            store
                .set_value(id, t.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
