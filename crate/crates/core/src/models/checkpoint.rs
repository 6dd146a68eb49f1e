//! Checkpoint serialization: a JSON header (model kind, config, epoch, seed,
//! per-tensor offsets) followed by one little-endian f64 blob. Round trips
//! are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::models::dnn::{build_dnn_with_input_dim, DnnConfig, DnnModel};
use crate::models::vae::{build_vae_with_input_dim, ClassifierHead, VaeConfig, VaeModel};
use crate::nn::layers::ActKind;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub model: String,
    pub config: serde_json::Value,
    pub input_dim: usize,
    pub epoch: usize,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadConfig {
    d_z: usize,
    activation: ActKind,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blob: Vec<f64>,
}

fn assemble(
    model_kind: &str,
    config: serde_json::Value,
    input_dim: usize,
    epoch: usize,
    seed: u64,
    named_state: Vec<(String, usize, usize, Vec<f64>)>,
) -> Checkpoint {
    let mut tensors = Vec::with_capacity(named_state.len());
    let mut blob = Vec::new();
    for (name, rows, cols, values) in named_state {
        tensors.push(TensorEntry {
            name,
            rows,
            cols,
            offset: blob.len(),
        });
        blob.extend(values);
    }
    Checkpoint {
        header: CheckpointHeader {
            schema_version: 1,
            model: model_kind.to_string(),
            config,
            input_dim,
            epoch,
            seed,
            tensors,
        },
        blob,
    }
}

impl Checkpoint {
    pub fn from_dnn(model: &DnnModel, epoch: usize) -> Result<Checkpoint> {
        Ok(assemble(
            "dnn",
            serde_json::to_value(&model.config)?,
            model.input_dim,
            epoch,
            model.seed,
            model.named_state(),
        ))
    }

    pub fn from_vae(model: &VaeModel, epoch: usize) -> Result<Checkpoint> {
        Ok(assemble(
            "vae",
            serde_json::to_value(&model.config)?,
            model.input_dim,
            epoch,
            model.seed,
            model.named_state(),
        ))
    }

    pub fn from_head(head: &ClassifierHead, activation: ActKind, epoch: usize, seed: u64) -> Result<Checkpoint> {
        Ok(assemble(
            "head",
            serde_json::to_value(HeadConfig {
                d_z: head.d_z(),
                activation,
            })?,
            head.d_z(),
            epoch,
            seed,
            head.named_state(),
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::to_bytes(&self.header, &self.blob)
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Checkpoint> {
        let (header, blob): (CheckpointHeader, Vec<f64>) = container::from_bytes(bytes, what)?;
        Ok(Checkpoint { header, blob })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.header, &self.blob)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let (header, blob): (CheckpointHeader, Vec<f64>) = container::read_file(path)?;
        Ok(Checkpoint { header, blob })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    fn tensor_values(&self, entry: &TensorEntry) -> Result<&[f64]> {
        let len = entry.rows * entry.cols;
        self.blob
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::invalid(format!("tensor `{}` overruns the blob", entry.name)))
    }

    pub fn into_dnn(&self) -> Result<DnnModel> {
        if self.header.model != "dnn" {
            return Err(Error::invalid(format!(
                "expected a dnn checkpoint, got `{}`",
                self.header.model
            )));
        }
        let config: DnnConfig = serde_json::from_value(self.header.config.clone())?;
        let mut model = build_dnn_with_input_dim(&config, self.header.input_dim, self.header.seed)?;
        for entry in &self.header.tensors {
            model.write_state(&entry.name, self.tensor_values(entry)?)?;
        }
        Ok(model)
    }

    pub fn into_vae(&self) -> Result<VaeModel> {
        if self.header.model != "vae" {
            return Err(Error::invalid(format!(
                "expected a vae checkpoint, got `{}`",
                self.header.model
            )));
        }
        let config: VaeConfig = serde_json::from_value(self.header.config.clone())?;
        let mut model = build_vae_with_input_dim(&config, self.header.input_dim, self.header.seed)?;
        for entry in &self.header.tensors {
            model.write_state(&entry.name, self.tensor_values(entry)?)?;
        }
        Ok(model)
    }

    pub fn into_head(&self) -> Result<ClassifierHead> {
        if self.header.model != "head" {
            return Err(Error::invalid(format!(
                "expected a head checkpoint, got `{}`",
                self.header.model
            )));
        }
        let config: HeadConfig = serde_json::from_value(self.header.config.clone())?;
        let mut head = ClassifierHead::new(config.d_z, config.activation, self.header.seed);
        for entry in &self.header.tensors {
            head.write_state(&entry.name, self.tensor_values(entry)?)?;
        }
        Ok(head)
    }
}
