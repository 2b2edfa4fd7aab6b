//! Named parameter sets: the unit that is saved, adapted and averaged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Adapted,
    Averaged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub provenance: Provenance,
    pub seed: Option<u64>,
    /// Schedule the parameters were produced with, if any.
    pub schedule: Option<serde_json::Value>,
    /// Checksums of the models this one was derived from.
    #[serde(default)]
    pub parents: Vec<String>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            provenance: Provenance::Seed,
            seed: None,
            schedule: None,
            parents: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub tensors: BTreeMap<String, Tensor>,
    /// Fingerprint of the architecture the tensors belong to.
    pub fingerprint: String,
    pub meta: ModelMeta,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 (truncated to 128 bits, hex) of a tensor's little-endian payload.
pub fn tensor_checksum(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize()[..16])
}

impl ModelParameters {
    pub fn new(tensors: BTreeMap<String, Tensor>, fingerprint: impl Into<String>) -> Self {
        ModelParameters {
            tensors,
            fingerprint: fingerprint.into(),
            meta: ModelMeta::default(),
        }
    }

    /// Checksum over names, shapes and values; changes if any bit changes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.fingerprint.as_bytes());
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize()[..16])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Two models can be averaged iff fingerprints agree and they carry the
    /// same names with the same shapes.
    pub fn check_compatible(&self, other: &ModelParameters) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::Compatibility(format!(
                "fingerprints differ: {} vs {}",
                self.fingerprint, other.fingerprint
            )));
        }
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Compatibility(format!(
                "tensor counts differ: {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                None => return Err(Error::Compatibility(format!("tensor `{name}` missing"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::Compatibility(format!(
                        "tensor `{name}` shapes differ: {:?} vs {:?}",
                        t.shape(),
                        o.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Bitwise equality of every tensor.
    pub fn bitwise_eq(&self, other: &ModelParameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().all(|(n, t)| {
                other.tensors.get(n).is_some_and(|o| {
                    o.shape() == t.shape() && o.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                })
            })
    }
}
