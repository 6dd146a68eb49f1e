//! Named model presets for the synthetic benchmark. The five configurations
//! mirror the best-found reference models: two residual DNNs, two
//! single-system VAEs and the combined-system VAE.

use crate::error::{Error, Result};
use crate::models::dnn::{DnnConfig, LossKind};
use crate::models::vae::VaeConfig;
use crate::nn::layers::ActKind;
use crate::nn::optim::{OptimizerConfig, OptimizerKind};
use crate::nn::schedule::ScheduleKind;

pub const PRESET_NAMES: [&str; 5] = [
    "dnn-sys1",
    "dnn-sys2",
    "vae-sgl-sys1",
    "vae-sgl-sys2",
    "vae-cmb",
];

#[derive(Debug, Clone, PartialEq)]
pub enum PresetConfig {
    Dnn(DnnConfig),
    Vae(VaeConfig),
}

pub fn preset(name: &str) -> Result<PresetConfig> {
    match name {
        "dnn-sys1" => Ok(PresetConfig::Dnn(DnnConfig {
            widths: vec![256, 64, 64, 64, 64],
            activation: ActKind::Silu,
            dropout: 0.233,
            loss: LossKind::CeLs { alpha: 0.085 },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::SgdNesterov,
                lr: 3.36e-3,
                weight_decay: 1.54e-6,
                momentum: 0.803,
            },
            schedule: ScheduleKind::Plateau { patience: 10 },
            batch_size: 32,
        })),
        "dnn-sys2" => Ok(PresetConfig::Dnn(DnnConfig {
            widths: vec![704, 368, 92],
            activation: ActKind::Silu,
            dropout: 0.267,
            loss: LossKind::CeLs { alpha: 0.082 },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::AdamW,
                lr: 3.84e-4,
                weight_decay: 3.99e-6,
                momentum: 0.0,
            },
            schedule: ScheduleKind::Plateau { patience: 10 },
            batch_size: 128,
        })),
        "vae-sgl-sys1" => Ok(PresetConfig::Vae(VaeConfig {
            widths: vec![704, 640],
            d_z: 32,
            activation: ActKind::Gelu,
            batch_norm: true,
            dropout: 0.445,
            beta: 0.100,
            lambda_rcst: 3.886,
            lambda_clf: 3.248,
            beta_warmup_epochs: 43,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::AdamW,
                lr: 2.96e-4,
                weight_decay: 3.27e-6,
                momentum: 0.0,
            },
            schedule: ScheduleKind::Plateau { patience: 10 },
            batch_size: 256,
        })),
        "vae-sgl-sys2" => Ok(PresetConfig::Vae(VaeConfig {
            widths: vec![384, 320, 320, 192],
            d_z: 32,
            activation: ActKind::Silu,
            batch_norm: true,
            dropout: 0.167,
            beta: 0.294,
            lambda_rcst: 2.530,
            lambda_clf: 1.414,
            beta_warmup_epochs: 23,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1.62e-3,
                weight_decay: 9.10e-5,
                momentum: 0.0,
            },
            schedule: ScheduleKind::Plateau { patience: 10 },
            batch_size: 256,
        })),
        "vae-cmb" => Ok(PresetConfig::Vae(VaeConfig {
            widths: vec![128, 768, 768],
            d_z: 32,
            activation: ActKind::Relu,
            batch_norm: true,
            dropout: 0.114,
            beta: 0.279,
            lambda_rcst: 1.161,
            lambda_clf: 2.372,
            beta_warmup_epochs: 34,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1.87e-3,
                weight_decay: 1.42e-4,
                momentum: 0.0,
            },
            schedule: ScheduleKind::Cosine,
            batch_size: 64,
        })),
        other => Err(Error::invalid(format!(
            "unknown preset `{other}`; available: {PRESET_NAMES:?}"
        ))),
    }
}
