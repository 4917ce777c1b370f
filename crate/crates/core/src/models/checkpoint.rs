//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, a JSON header
//! (format version, spec, training metadata, weight names and shapes),
//! then every weight as little-endian `f32` in header order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TTASRCKP";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub iterations: u64,
    pub seed: u64,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub loss_trace: Vec<f64>,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetworkSpec,
    metadata: TrainingMetadata,
    weights: Vec<WeightInfo>,
}

/// A network's architecture, weights and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub metadata: TrainingMetadata,
    pub weights: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar, M: Network<T>>(net: &M, metadata: TrainingMetadata) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            metadata,
            weights: net.params().cast(),
        }
    }

    /// Rebuilds a network, checking kind and every weight shape.
    pub fn to_network<T: Scalar, M: Network<T>>(&self) -> Result<M> {
        if self.spec.kind != M::KIND {
            return Err(Error::Kind {
                expected: M::KIND.to_string(),
                found: self.spec.kind.to_string(),
            });
        }
        M::from_parts(self.spec.clone(), self.weights.cast())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: self.spec.clone(),
            metadata: self.metadata.clone(),
            weights: self
                .weights
                .iter()
                .map(|p| WeightInfo {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.weights.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.weights.iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses checkpoint bytes; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
        // check the version before trusting the rest of the header
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("header lacks format_version"))?;
        if version != CHECKPOINT_FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(raw).map_err(|e| corrupt(&format!("invalid header: {e}")))?;
        let expected: usize = header
            .weights
            .iter()
            .map(|w| w.shape.iter().product::<usize>())
            .sum();
        let blob = &bytes[hend..];
        if blob.len() != 4 * expected {
            return Err(corrupt(&format!(
                "weight data is {} bytes, header declares {}",
                blob.len(),
                4 * expected
            )));
        }
        let mut weights = ParamStore::new();
        let mut off = 0;
        for w in header.weights {
            let n: usize = w.shape.iter().product();
            let data = blob[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            off += 4 * n;
            weights.push(w.name, w.shape, data);
        }
        Ok(Checkpoint {
            spec: header.spec,
            metadata: header.metadata,
            weights,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound {
                what: "checkpoint",
                path: PathBuf::from(path),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    Checkpoint::from_bytes(&bytes, path)
}
