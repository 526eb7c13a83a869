//! Checkpoint storage: a JSON manifest plus one blob of little-endian `f32` values
//! laid out in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Mat, ParamStore};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub arrays: Vec<ArrayEntry>,
    pub training_step: u64,
    pub config_hash: String,
}

/// `base` with `.json` and `.bin` extensions. A path already ending in either
/// extension is accepted as `base`.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

pub fn save_arrays(base: &Path, store: &ParamStore, training_step: u64, config_hash: &str) -> Result<Manifest> {
    let (json_path, bin_path) = checkpoint_paths(base);
    let mut blob = Vec::with_capacity(store.num_scalars() * 4);
    let mut arrays = Vec::with_capacity(store.len());
    for (name, m) in store.iter() {
        let offset = blob.len() as u64;
        for &x in &m.data {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: vec![m.rows, m.cols],
            dtype: "f32".into(),
            byte_offset: offset,
            byte_len: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        arrays,
        training_step,
        config_hash: config_hash.to_string(),
    };
    if let Some(dir) = json_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&bin_path, &blob)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    Ok(manifest)
}

pub fn load_arrays(base: &Path) -> Result<(ParamStore, Manifest)> {
    let (json_path, bin_path) = checkpoint_paths(base);
    if !json_path.exists() || !bin_path.exists() {
        return Err(Error::MissingArtifact(format!(
            "checkpoint {} / {} not found",
            json_path.display(),
            bin_path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::config(format!(
            "unsupported checkpoint format_version {}",
            manifest.format_version
        )));
    }
    let blob = fs::read(&bin_path)?;
    let mut store = ParamStore::new();
    for entry in &manifest.arrays {
        if entry.dtype != "f32" {
            return Err(Error::config(format!("unsupported dtype `{}`", entry.dtype)));
        }
        let (rows, cols) = match entry.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            other => {
                return Err(Error::config(format!(
                    "array `{}` has unsupported shape {other:?}",
                    entry.name
                )))
            }
        };
        let start = entry.byte_offset as usize;
        let end = start + entry.byte_len as usize;
        if end > blob.len() || entry.byte_len as usize != rows * cols * 4 {
            return Err(Error::config(format!("array `{}` exceeds blob bounds", entry.name)));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(entry.name.clone(), Mat::from_vec(rows, cols, data))?;
    }
    Ok((store, manifest))
}
