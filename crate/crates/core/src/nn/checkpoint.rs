//! Binary checkpoint files.
//!
//! Layout: the 4-byte magic `MTCK`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then every tensor of [`MaskNetParams::tensors`] in
//! canonical order as little-endian `f32` values:
//!
//! ```text
//! blstm.fwd.w_ih  blstm.fwd.w_hh  blstm.fwd.bias
//! blstm.bwd.w_ih  blstm.bwd.w_hh  blstm.bwd.bias
//! speech.ff1.w  speech.ff1.b  speech.ff2.w  speech.ff2.b
//! noise.ff1.w   noise.ff1.b   noise.ff2.w   noise.ff2.b    (absent for speech-only nets)
//! ```
//!
//! Matrices are row-major. Loading then saving reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{HeadSet, MaskNetParams, NetDims, OutputActivation};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MTCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dims: NetDims,
    pub heads: HeadSet,
    pub activation: OutputActivation,
    pub epoch: usize,
    pub config_digest: String,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parameters together with their training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MaskNetParams,
    pub epoch: usize,
    pub config_digest: String,
}

impl Checkpoint {
    /// Wraps `params` after rounding them to the stored precision, so the
    /// in-memory network is exactly the one a reload produces.
    pub fn new(params: &MaskNetParams, epoch: usize, config_digest: impl Into<String>) -> Self {
        let mut params = params.clone();
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Checkpoint {
            params,
            epoch,
            config_digest: config_digest.into(),
        }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            dims: self.params.dims,
            heads: self.params.heads(),
            activation: self.params.activation,
            epoch: self.epoch,
            config_digest: self.config_digest.clone(),
            tensors: self
                .params
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| TensorInfo { name, shape })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::InvalidInput("not a checkpoint file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::InvalidInput("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut params = MaskNetParams::zeros(header.dims, header.heads, header.activation);
        let expected: Vec<TensorInfo> = params
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| TensorInfo { name, shape })
            .collect();
        if expected != header.tensors {
            return Err(Error::Shape("checkpoint tensor list does not match its dimensions".into()));
        }
        let data = &bytes[8 + hlen..];
        if data.len() != 4 * params.num_params() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} bytes of parameters, expected {}",
                data.len(),
                4 * params.num_params()
            )));
        }
        let mut chunks = data.chunks_exact(4);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                let c = chunks.next().expect("length checked");
                *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(Checkpoint {
            params,
            epoch: header.epoch,
            config_digest: header.config_digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
