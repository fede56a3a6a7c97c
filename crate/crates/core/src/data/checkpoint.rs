//! Checkpoint files: one JSON header line followed by a raw little-endian
//! `f64` payload. The header carries shapes, offsets and a SHA-256 of the
//! payload so truncation and corruption are detected on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Standardization;
use crate::error::{HainError, Result};
use crate::model::{HainConfig, HainParams, TENSOR_NAMES};
use crate::numerics::Matrix;
use crate::prototypes::PrototypeSet;
use crate::training::{SelectionState, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "hain-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: HainParams,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub standardization: Option<Standardization>,
    /// Training-set feature means in model input space, used to fill in
    /// absent or masked features.
    pub baseline: Option<Vec<f64>>,
    pub prototypes: Option<PrototypeSet>,
    pub selection: Option<SelectionState>,
    pub train_config: Option<TrainConfig>,
    /// Free-form provenance such as the command that produced the file.
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: HainParams, feature_names: Vec<String>, class_names: Vec<String>) -> Self {
        Checkpoint {
            params,
            feature_names,
            class_names,
            standardization: None,
            baseline: None,
            prototypes: None,
            selection: None,
            train_config: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &HainConfig {
        self.params.config()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Block {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrototypeHeader {
    count: usize,
    dim: usize,
    sigma: f64,
    theta: f64,
    labels: Option<Vec<Option<usize>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionHeader {
    threshold: f64,
    next_threshold: f64,
    selected: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    payload_bytes: usize,
    sha256: String,
    model: HainConfig,
    /// Half-open feature ranges of the local groups.
    groups: Vec<(usize, usize)>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    train_config: Option<TrainConfig>,
    prototypes: Option<PrototypeHeader>,
    selection: Option<SelectionHeader>,
    /// Offsets and lengths count `f64` values, not bytes.
    blocks: Vec<Block>,
    metadata: BTreeMap<String, String>,
}

#[derive(Default)]
struct Payload {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl Payload {
    fn push(&mut self, name: impl Into<String>, data: &[f64]) {
        self.blocks.push(Block {
            name: name.into(),
            offset: self.values.len(),
            len: data.len(),
        });
        self.values.extend_from_slice(data);
    }

    fn bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(c)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Serializes a checkpoint to its file bytes.
pub fn encode(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Payload::default();
    for (name, t) in TENSOR_NAMES.iter().zip(c.params.tensors()) {
        payload.push(*name, t.data());
    }
    if let Some(s) = &c.standardization {
        payload.push("standardization.mean", &s.mean);
        payload.push("standardization.std", &s.std);
    }
    if let Some(b) = &c.baseline {
        payload.push("baseline", b);
    }
    let prototypes = c.prototypes.as_ref().map(|p| {
        payload.push("prototypes", &p.prototypes.concat());
        PrototypeHeader {
            count: p.prototypes.len(),
            dim: p.prototypes.first().map_or(0, Vec::len),
            sigma: p.sigma,
            theta: p.theta,
            labels: p.labels.clone(),
        }
    });
    let selection = c.selection.as_ref().map(|s| {
        payload.push("selection.alpha_snapshot", &s.alpha_snapshot);
        payload.push("selection.alpha_mean", &s.alpha_mean);
        SelectionHeader {
            threshold: s.threshold,
            next_threshold: s.next_threshold,
            selected: s.selected.clone(),
        }
    });
    let bytes = payload.bytes();
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        payload_bytes: bytes.len(),
        sha256: digest(&bytes),
        model: c.config().clone(),
        groups: c.config().groups().into_iter().map(|r| (r.start, r.end)).collect(),
        feature_names: c.feature_names.clone(),
        class_names: c.class_names.clone(),
        train_config: c.train_config.clone(),
        prototypes,
        selection,
        blocks: payload.blocks,
        metadata: c.metadata.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&bytes);
    Ok(out)
}

/// Parses file bytes, checking format, version, length and checksum.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| HainError::Integrity("header line is not terminated".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| HainError::Integrity(format!("unreadable header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(HainError::Format(format!(
            "not a checkpoint: format {:?}",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(HainError::Incompatible(format!(
            "checkpoint version {} but this build reads version {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != header.payload_bytes {
        return Err(HainError::Integrity(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if digest(payload) != header.sha256 {
        return Err(HainError::Integrity("payload checksum mismatch".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks are 8 bytes")))
        .collect();
    let block = |name: &str| -> Result<&[f64]> {
        let b = header
            .blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| HainError::Format(format!("missing block {name}")))?;
        values
            .get(b.offset..b.offset + b.len)
            .ok_or_else(|| HainError::Format(format!("block {name} overruns the payload")))
    };

    let shapes = crate::model::tensor_shapes(&header.model);
    let tensors = TENSOR_NAMES
        .iter()
        .zip(shapes)
        .map(|(name, (r, c))| Matrix::from_vec(r, c, block(name)?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let params = HainParams::from_tensors(header.model, tensors)?;

    let standardization = if header.blocks.iter().any(|b| b.name == "standardization.mean") {
        Some(Standardization {
            mean: block("standardization.mean")?.to_vec(),
            std: block("standardization.std")?.to_vec(),
        })
    } else {
        None
    };
    let baseline = if header.blocks.iter().any(|b| b.name == "baseline") {
        Some(block("baseline")?.to_vec())
    } else {
        None
    };
    let prototypes = match header.prototypes {
        Some(p) => {
            let flat = block("prototypes")?;
            if flat.len() != p.count * p.dim || p.dim == 0 {
                return Err(HainError::Format("prototype block has the wrong size".into()));
            }
            let mut set = PrototypeSet::new(flat.chunks(p.dim).map(<[f64]>::to_vec).collect(), p.sigma, p.theta)?;
            set.labels = p.labels;
            Some(set)
        }
        None => None,
    };
    let selection = match header.selection {
        Some(s) => Some(SelectionState {
            threshold: s.threshold,
            alpha_snapshot: block("selection.alpha_snapshot")?.to_vec(),
            alpha_mean: block("selection.alpha_mean")?.to_vec(),
            selected: s.selected,
            next_threshold: s.next_threshold,
        }),
        None => None,
    };
    Ok(Checkpoint {
        params,
        feature_names: header.feature_names,
        class_names: header.class_names,
        standardization,
        baseline,
        prototypes,
        selection,
        train_config: header.train_config,
        metadata: header.metadata,
    })
}
