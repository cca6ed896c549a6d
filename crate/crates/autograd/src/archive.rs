//! Flat little-endian float64 archive plus a JSON manifest.
//!
//! `PATH` holds the concatenated tensor data; `PATH.json` lists each tensor's
//! name, shape, dtype and element offset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, ParamSet, Result, Tensor};

pub const DTYPE: &str = "float64";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<ArchiveEntry>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_archive(path: &Path, params: &ParamSet, meta: serde_json::Map<String, serde_json::Value>) -> Result<()> {
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.zip_entries() {
        entries.push(ArchiveEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: DTYPE.to_string(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: "evslab-weights".into(),
        version: 1,
        tensors: entries,
        meta,
    };
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<(ParamSet, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Archive(format!("{} bytes is not a whole number of float64", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        if e.dtype != DTYPE {
            return Err(Error::Archive(format!("tensor `{}` has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Archive(format!("tensor `{}` runs past the end of the data", e.name)))?;
        params.push(e.name.clone(), Tensor::new(&e.shape, data.to_vec())?);
    }
    Ok((params, manifest))
}
