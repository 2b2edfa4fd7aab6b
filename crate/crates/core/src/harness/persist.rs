//! Model files: a JSON manifest plus an adjacent little-endian f64 payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tensor_checksum, ModelMeta, ModelParameters};
use crate::tensor::Tensor;
use crate::topology::ArchitectureSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub fingerprint: String,
    pub meta: ModelMeta,
    /// File name of the payload, relative to the manifest.
    pub payload: String,
    pub tensors: Vec<TensorEntry>,
}

/// Payload path for a manifest path: same stem, `.bin` extension.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path stem>.bin` (payload, tensors in
/// manifest order).
pub fn save_model(m: &ModelParameters, path: &Path) -> Result<()> {
    let bin = payload_path(path);
    if bin == path {
        return Err(Error::config("manifest path must not end in .bin"));
    }
    let mut payload = Vec::with_capacity(m.num_values() * 8);
    let mut tensors = Vec::with_capacity(m.tensors.len());
    for (name, t) in &m.tensors {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            checksum: tensor_checksum(t),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        fingerprint: m.fingerprint.clone(),
        meta: m.meta.clone(),
        payload: bin
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config("payload path has no file name"))?
            .to_string(),
        tensors,
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin, payload)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // Check the version before the rest of the schema.
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::data("manifest lacks format_version"))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    Ok(serde_json::from_value(value)?)
}

/// Loads and verifies every tensor checksum.
pub fn load_model(path: &Path) -> Result<ModelParameters> {
    let manifest = read_manifest(path)?;
    let bin = path.with_file_name(&manifest.payload);
    let bytes = fs::read(&bin)?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "payload {} has {} bytes, manifest describes {expected}",
            bin.display(),
            bytes.len()
        )));
    }
    let mut m = ModelParameters::new(Default::default(), manifest.fingerprint);
    m.meta = manifest.meta;
    let mut off = 0;
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let data = bytes[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        off += n * 8;
        let t = Tensor::new(e.shape, data)?;
        let found = tensor_checksum(&t);
        if found != e.checksum {
            return Err(Error::Checksum {
                tensor: e.name,
                expected: e.checksum,
                found,
            });
        }
        if m.tensors.insert(e.name.clone(), t).is_some() {
            return Err(Error::data(format!("tensor `{}` listed twice", e.name)));
        }
    }
    Ok(m)
}

/// [`load_model`], additionally requiring the file to belong to `spec`.
pub fn load_model_for(spec: &ArchitectureSpec, path: &Path) -> Result<ModelParameters> {
    let m = load_model(path)?;
    let expected = spec.fingerprint();
    if m.fingerprint != expected {
        return Err(Error::Fingerprint {
            expected,
            found: m.fingerprint,
        });
    }
    Ok(m)
}
