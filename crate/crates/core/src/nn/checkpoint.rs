//! Parameter checkpoints: a JSON manifest `{name → shape}` plus a flat
//! little-endian `f64` blob holding every tensor, concatenated in manifest
//! (lexicographic name) order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("parameter blob has {got} bytes, manifest needs {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

pub fn save_checkpoint(dir: &Path, params: &ParamStore) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut ordered: BTreeMap<&str, &Tensor> = BTreeMap::new();
    for (_, name, t) in params.iter() {
        ordered.insert(name, t);
    }
    let manifest: BTreeMap<&str, &[usize]> = ordered.iter().map(|(k, t)| (*k, t.shape())).collect();
    let mut blob = Vec::with_capacity(params.scalar_count() * 8);
    for t in ordered.values() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(PARAMS_FILE), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ParamStore, CheckpointError> {
    let manifest: BTreeMap<String, Vec<usize>> = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let expected: usize = manifest.values().map(|s| s.iter().product::<usize>() * 8).sum();
    if blob.len() != expected {
        return Err(CheckpointError::SizeMismatch { expected, got: blob.len() });
    }
    let mut store = ParamStore::new();
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (name, shape) in manifest {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        store.add(name, Tensor::new(shape, data).expect("length checked against manifest"));
    }
    Ok(store)
}
