//! Checkpoints: a flat little-endian binary of parameter buffers next to a
//! JSON manifest (`<path>.json`) listing names, shapes, precision and step.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary blob.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub precision: String,
    pub step: u64,
    pub params: Vec<ManifestEntry>,
    /// Free-form metadata (the model configuration, for instance).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save<T: Scalar>(path: &Path, params: &ParamStore<T>, step: u64, extra: serde_json::Value) -> Result<()> {
    let mut blob = Vec::with_capacity(params.total_values() * T::BYTES);
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset: blob.len(),
        });
        t.data.iter().for_each(|v| v.write_le(&mut blob));
    }
    let manifest = Manifest {
        precision: T::PRECISION.to_string(),
        step,
        params: entries,
        extra,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, blob)?;
    std::fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(manifest_path(path))?)?)
}

/// Loads buffers into `params`, which must already hold identically named
/// and shaped parameters. Precision conversion happens on load.
pub fn load_into<T: Scalar>(path: &Path, params: &mut ParamStore<T>) -> Result<Manifest> {
    let manifest = read_manifest(path)?;
    let blob = std::fs::read(path)?;
    let width = match manifest.precision.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown precision `{other}`"))),
    };
    if manifest.params.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            manifest.params.len(),
            params.len()
        )));
    }
    for (i, entry) in manifest.params.iter().enumerate() {
        let id = super::params::ParamId(i);
        if params.name(id) != entry.name || params.get(id).shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "parameter {i}: checkpoint has `{}` {:?}, model expects `{}` {:?}",
                entry.name,
                entry.shape,
                params.name(id),
                params.get(id).shape
            )));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * width;
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("blob truncated at `{}`", entry.name)))?;
        let data: Vec<T> = bytes
            .chunks(width)
            .map(|c| {
                let v = if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) };
                T::lit(v)
            })
            .collect();
        *params.get_mut(id) = Tensor::new(entry.shape.clone(), data)?;
    }
    Ok(manifest)
}
