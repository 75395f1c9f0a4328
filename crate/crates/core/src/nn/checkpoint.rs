//! Predictor checkpoint.
//!
//! Layout (little endian): magic `SNET`, `u32` version, `u64` header length,
//! the JSON header (network spec, parameter directory, input channel names and
//! normalization), then every parameter as `f32` in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use super::params::{ParamEntry, Parameters};
use crate::error::{Error, Result};
use crate::volume::io::write_atomic;
use crate::volume::Volume;

pub const NET_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SNET";

/// Per-channel scaling by the standard deviation over all training voxels; zero stays zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub scale: Vec<f32>,
}

impl ChannelNorm {
    pub fn identity(c: usize) -> Self {
        ChannelNorm { scale: vec![1.0; c] }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// `cases[k][c]` is channel `c` of case `k`.
    pub fn fit(cases: &[&[Volume]]) -> Result<Self> {
        let Some(first) = cases.first() else {
            return Err(Error::Data("channel normalization needs at least one case".into()));
        };
        let mut norm = ChannelNorm::identity(first.len());
        for (ch, scale) in norm.scale.iter_mut().enumerate() {
            let (mut n, mut s, mut ss) = (0u64, 0.0f64, 0.0f64);
            for case in cases {
                let v = case.get(ch).ok_or_else(|| Error::Shape("channel count differs between cases".into()))?;
                for &x in v.data() {
                    n += 1;
                    s += x as f64;
                    ss += x as f64 * x as f64;
                }
            }
            let mean = s / n.max(1) as f64;
            let sd = (ss / n.max(1) as f64 - mean * mean).max(0.0).sqrt();
            if sd > 1e-12 {
                *scale = sd as f32;
            }
        }
        Ok(norm)
    }

    pub fn apply(&self, channels: &mut [Volume]) -> Result<()> {
        if channels.len() != self.scale.len() {
            return Err(Error::Shape(format!(
                "normalization has {} channels, input has {}",
                self.scale.len(),
                channels.len()
            )));
        }
        for (v, &s) in channels.iter_mut().zip(&self.scale) {
            v.data_mut().iter_mut().for_each(|x| *x /= s);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub entries: Vec<ParamEntry>,
    pub channels: Vec<String>,
    pub norm: ChannelNorm,
}

#[derive(Debug, Clone)]
pub struct PredictorCheckpoint {
    pub header: CheckpointHeader,
    pub params: Parameters<f32>,
}

pub fn save_predictor(
    path: &Path,
    spec: &NetworkSpec,
    params: &Parameters<f32>,
    channels: &[String],
    norm: &ChannelNorm,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: NET_FORMAT_VERSION,
        spec: spec.clone(),
        entries: params.entries.clone(),
        channels: channels.to_vec(),
        norm: norm.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&NET_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &params.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Loads a checkpoint and rebuilds the network it describes.
pub fn load_predictor(path: &Path) -> Result<(Network, PredictorCheckpoint)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a predictor checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != NET_FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    let (network, template) = Network::build::<f32>(&header.spec, 0)?;
    if template.entries != header.entries {
        return Err(bad("parameter directory does not match the network spec".into()));
    }
    let data: Vec<f32> = bytes[16 + hlen..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if data.len() != template.len() || (bytes.len() - 16 - hlen) % 4 != 0 {
        return Err(bad(format!("expected {} parameters, found {}", template.len(), data.len())));
    }
    if header.channels.len() != header.spec.in_channels || header.norm.len() != header.spec.in_channels {
        return Err(bad("channel metadata does not match the network input".into()));
    }
    let params = Parameters { entries: template.entries, data };
    Ok((network, PredictorCheckpoint { header, params }))
}
