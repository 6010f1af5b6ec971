//! `model.bin`: magic, format version, a JSON header describing every tensor
//! and the training state, then all parameters as little-endian `f64`.

use std::io::{Read, Write};

use munidex_core::forecaster::{
    EpochRecord, FeatureScaler, ModelConfig, TargetNormalizer, TemporalSplit, TensorInfo, TrainedModel, Transformer,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MUNIDEXM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: ModelConfig,
    pub input_width: usize,
    pub columns: Vec<String>,
    pub features: Vec<String>,
    pub scaler: FeatureScaler,
    pub normalizer: TargetNormalizer,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
    /// Split the model was trained under.
    pub split: Option<TemporalSplit>,
    pub tensors: Vec<TensorInfo>,
    pub n_params: usize,
}

/// A trained model together with the split it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub trained: TrainedModel,
    pub split: Option<TemporalSplit>,
}

pub fn write_model<W: Write>(file: &ModelFile, mut w: W) -> Result<()> {
    let t = &file.trained;
    let header = ModelHeader {
        config: t.model.config.clone(),
        input_width: t.model.input_width,
        columns: t.columns.clone(),
        features: t.features.clone(),
        scaler: t.scaler.clone(),
        normalizer: t.normalizer.clone(),
        history: t.history.clone(),
        seed: t.seed,
        split: file.split,
        tensors: t.model.tensors(),
        n_params: t.model.n_params(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<model>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut body = Vec::with_capacity(8 * t.model.params.len());
    for p in &t.model.params {
        body.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&body).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
    let bad = |m: &str| Error::ModelFile(m.into());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[20..body_start])?;
    let body = &bytes[body_start..];
    if body.len() != 8 * header.n_params {
        return Err(Error::ModelFile(format!(
            "expected {} parameters, found {} bytes",
            header.n_params,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = Transformer::from_parts(header.config, header.input_width, params)?;
    if model.tensors() != header.tensors {
        return Err(bad("tensor table does not match the configuration"));
    }
    if header.columns.len() != header.input_width || header.scaler.mean.len() != header.input_width {
        return Err(bad("column table does not match the input width"));
    }
    Ok(ModelFile {
        trained: TrainedModel {
            model,
            scaler: header.scaler,
            normalizer: header.normalizer,
            columns: header.columns,
            features: header.features,
            history: header.history,
            seed: header.seed,
        },
        split: header.split,
    })
}
