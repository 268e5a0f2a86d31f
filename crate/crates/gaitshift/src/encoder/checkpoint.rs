//! Checkpoints are JSON documents: format version, hyper-shape, and every
//! named tensor with its dimensions and flat values. Floats are written in
//! shortest round-trip form, so save followed by load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{EncoderParams, HyperShape};
use crate::error::{GaitError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyper_shape: HyperShape,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &EncoderParams) -> Self {
        let parameters = params
            .layout()
            .slots
            .iter()
            .map(|slot| NamedTensor {
                name: slot.name.clone(),
                dims: slot.dims.clone(),
                values: params.values()[slot.offset..slot.offset + slot.len].to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            hyper_shape: *params.shape(),
            parameters,
        }
    }

    pub fn into_params(self) -> Result<EncoderParams> {
        let bad = |reason: String| GaitError::Format {
            what: "checkpoint".into(),
            reason,
        };
        if self.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let mut params = EncoderParams::zeros(self.hyper_shape)?;
        let expected = params.layout().slots.len();
        if self.parameters.len() != expected {
            return Err(bad(format!(
                "{} tensors present, hyper-shape needs {expected}",
                self.parameters.len()
            )));
        }
        for tensor in self.parameters {
            let slot = params
                .layout()
                .slot(&tensor.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", tensor.name)))?;
            if slot.dims != tensor.dims || slot.len != tensor.values.len() {
                return Err(bad(format!(
                    "tensor {} has dims {:?} and {} values, expected {:?}",
                    tensor.name,
                    tensor.dims,
                    tensor.values.len(),
                    slot.dims
                )));
            }
            params
                .tensor_mut(&tensor.name)
                .expect("slot exists")
                .copy_from_slice(&tensor.values);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GaitError::Format {
            what: "checkpoint".into(),
            reason: e.to_string(),
        })
    }
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut text = Checkpoint::from_params(params).to_json();
    text.push('\n');
    fs::write(path, text).map_err(|e| GaitError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
    Checkpoint::from_json(&text)?.into_params()
}
