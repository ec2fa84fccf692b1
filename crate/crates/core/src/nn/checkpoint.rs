//! Weight checkpoints: a `manifest.json` mapping array names to
//! dtype/shape/byte range, plus one flat `weights.bin` of little-endian
//! float32 values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{OmniError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;

pub fn save_tensors(dir: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in tensors {
        let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let offset = blob.len() as u64;
        for v in &values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        manifest.insert(
            name.clone(),
            ManifestEntry {
                dtype: "float32".into(),
                shape: t.dims().to_vec(),
                offset,
                length: (values.len() * 4) as u64,
            },
        );
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(WEIGHTS_FILE), blob)?;
    Ok(())
}

pub fn load_tensors(dir: &Path) -> Result<BTreeMap<String, Tensor>> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let blob = fs::read(dir.join(WEIGHTS_FILE))?;
    let mut out = BTreeMap::new();
    for (name, e) in manifest {
        if e.dtype != "float32" {
            return Err(OmniError::InvalidArgument(format!(
                "{name}: unsupported dtype {}",
                e.dtype
            )));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + e.length as usize;
        if e.length as usize != n * 4 || end > blob.len() {
            return Err(OmniError::Shape(format!("{name}: byte range inconsistent with shape")));
        }
        let values: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name, Tensor::from_vec(values, e.shape, &Device::Cpu)?);
    }
    Ok(out)
}

pub fn save_store(store: &ParamStore, dir: &Path) -> Result<()> {
    save_tensors(dir, &store.snapshot()?)
}

/// Loads every checkpoint array into the matching parameter of `store`.
/// Every parameter of the store must be present in the checkpoint.
pub fn load_into_store(store: &ParamStore, dir: &Path) -> Result<()> {
    let tensors = load_tensors(dir)?;
    for name in store.names() {
        let t = tensors
            .get(&name)
            .ok_or_else(|| OmniError::Missing(format!("checkpoint array `{name}`")))?;
        store.assign(&name, t)?;
    }
    Ok(())
}
