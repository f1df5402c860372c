//! Binary tensor container shared by model checkpoints and embedding exports.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! describing entries and metadata, then every entry's values as
//! little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CVSSLTA1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub layer_index: Option<usize>,
    pub kind: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub meta: BTreeMap<String, Value>,
    pub entries: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer_index: Option<usize>,
    kind: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: BTreeMap<String, Value>,
    entries: Vec<EntryHeader>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryHeader {
                    name: e.name.clone(),
                    layer_index: e.layer_index,
                    kind: e.kind.clone(),
                    shape: e.tensor.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let io = |e| Error::io("<tensor archive>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for e in &self.entries {
            let mut buf = Vec::with_capacity(e.tensor.data().len() * 8);
            for v in e.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<tensor archive>", e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a tensor archive".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(io)?;
        let header: Header = serde_json::from_slice(&header)?;

        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            let n: usize = h.shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(io)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push(TensorEntry {
                name: h.name,
                layer_index: h.layer_index,
                kind: h.kind,
                tensor: Tensor::new(h.shape, data)?,
            });
        }
        Ok(TensorArchive {
            meta: header.meta,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}
