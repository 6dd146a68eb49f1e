//! Model assembly and training: the residual DNN baseline, single- and
//! combined-system VAEs, phase-2 head training, checkpoints and presets.

pub mod checkpoint;
pub mod dnn;
pub mod presets;
pub mod train;
pub mod vae;

pub use checkpoint::Checkpoint;
pub use dnn::{build_dnn, DnnConfig, DnnModel, LossKind, INPUT_DIM, N_CLASSES};
pub use presets::{preset, PresetConfig, PRESET_NAMES};
pub use train::{
    encode_latent_mu, eval_dnn_accuracy, eval_vae_accuracy, predict_dnn, predict_vae_head,
    train_dnn, train_head, train_vae, DataView, HeadTrainConfig, TrainBudget, TrainControl,
    TrainReport, ValMetric,
};
pub use vae::{beta_warmup, build_vae, vae_loss, ClassifierHead, VaeConfig, VaeModel};

use crate::nn::gradcheck::{max_rel_error, numeric_gradient, CheckResult, FD_STEP};
use crate::nn::layers::Mode;
use crate::nn::tensor::Tensor;
use crate::util::derive_seed;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A trained network of either family, as stored in checkpoints.
pub enum ModelGraph {
    Dnn(DnnModel),
    Vae(VaeModel),
}

/// End-to-end finite-difference check of the residual DNN graph: every
/// parameter of a small net against central differences of the CE loss.
pub fn gradcheck_dnn_graph(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let model_seed = derive_seed(seed, inst as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model_seed, 1));
        let config = DnnConfig {
            widths: vec![6, 6, 4],
            activation: crate::nn::layers::ActKind::ALL[inst % 5],
            dropout: 0.0,
            loss: LossKind::CeLs { alpha: 0.05 },
            optimizer: crate::nn::optim::OptimizerConfig {
                kind: crate::nn::optim::OptimizerKind::Adam,
                lr: 1e-3,
                weight_decay: 0.0,
                momentum: 0.0,
            },
            schedule: crate::nn::schedule::ScheduleKind::Cosine,
            batch_size: 4,
        };
        let input_dim = 5;
        let batch = 6;
        let x = Tensor::from_vec(
            batch,
            input_dim,
            (0..batch * input_dim)
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
        )
        .unwrap();
        let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..3) as u8).collect();

        let loss_at = |theta: &[f64]| -> f64 {
            let mut model = dnn::build_dnn_with_input_dim(&config, input_dim, model_seed).unwrap();
            let mut offset = 0;
            for p in model.params_mut() {
                let len = p.len();
                p.data_mut().copy_from_slice(&theta[offset..offset + len]);
                offset += len;
            }
            let logits = model.forward(&x, Mode::Train).unwrap();
            crate::nn::loss::softmax_ce_ls(&logits, &y, 0.05).unwrap().value
        };

        let mut model = dnn::build_dnn_with_input_dim(&config, input_dim, model_seed).unwrap();
        let mut point = Vec::new();
        for p in model.params_mut() {
            point.extend_from_slice(p.data());
        }
        model.zero_grads();
        let logits = model.forward(&x, Mode::Train).unwrap();
        let loss = crate::nn::loss::softmax_ce_ls(&logits, &y, 0.05).unwrap();
        model.backward(&loss.grad);
        let mut analytic = Vec::new();
        for p in model.params_mut() {
            analytic.extend_from_slice(p.grad());
        }

        let mut f = loss_at;
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "dnn graph (ce+ls)".to_string(),
        max_rel_err: worst,
        tolerance: 1e-4,
        instances,
    }
}

/// End-to-end finite-difference check of the full VAE graph with frozen
/// reparameterization noise and the three-term joint loss.
pub fn gradcheck_vae_graph(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let model_seed = derive_seed(seed, 100 + inst as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model_seed, 2));
        let mut config = vae_tiny_cfg();
        config.activation = crate::nn::layers::ActKind::ALL[inst % 5];
        let input_dim = 6;
        let batch = 5;
        let x = Tensor::from_vec(
            batch,
            input_dim,
            (0..batch * input_dim)
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
        )
        .unwrap();
        let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..3) as u8).collect();
        let eps = Tensor::from_vec(
            batch,
            config.d_z,
            (0..batch * config.d_z)
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
        )
        .unwrap();
        let (beta, lam_r, lam_c) = (0.7, 1.3, 0.9);

        let loss_at = |theta: &[f64]| -> f64 {
            let mut model = vae::build_vae_with_input_dim(&config, input_dim, model_seed).unwrap();
            let mut offset = 0;
            for p in model.params_mut() {
                let len = p.len();
                p.data_mut().copy_from_slice(&theta[offset..offset + len]);
                offset += len;
            }
            let fwd = model.forward_with_eps(&x, Mode::Train, &eps).unwrap();
            vae_loss(&x, &fwd, &y, beta, lam_r, lam_c).unwrap().0.total
        };

        let mut model = vae::build_vae_with_input_dim(&config, input_dim, model_seed).unwrap();
        let mut point = Vec::new();
        for p in model.params_mut() {
            point.extend_from_slice(p.data());
        }
        model.zero_grads();
        let fwd = model.forward_with_eps(&x, Mode::Train, &eps).unwrap();
        let (_, grads) = vae_loss(&x, &fwd, &y, beta, lam_r, lam_c).unwrap();
        model.backward(&grads);
        let mut analytic = Vec::new();
        for p in model.params_mut() {
            analytic.extend_from_slice(p.grad());
        }

        let mut f = loss_at;
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "vae graph (kl+mse+ce)".to_string(),
        max_rel_err: worst,
        tolerance: 1e-4,
        instances,
    }
}

fn vae_tiny_cfg() -> VaeConfig {
    VaeConfig {
        widths: vec![7],
        d_z: 4,
        activation: crate::nn::layers::ActKind::Silu,
        batch_norm: true,
        dropout: 0.0,
        beta: 0.7,
        lambda_rcst: 1.3,
        lambda_clf: 0.9,
        beta_warmup_epochs: 0,
        optimizer: crate::nn::optim::OptimizerConfig {
            kind: crate::nn::optim::OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 0.0,
            momentum: 0.0,
        },
        schedule: crate::nn::schedule::ScheduleKind::Cosine,
        batch_size: 5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dnn_graph_gradients_match_finite_differences() {
        let result = gradcheck_dnn_graph(5, 31);
        assert!(
            result.passed(),
            "{}: {} >= {}",
            result.name,
            result.max_rel_err,
            result.tolerance
        );
    }

    #[test]
    fn vae_graph_gradients_match_finite_differences() {
        let result = gradcheck_vae_graph(5, 37);
        assert!(
            result.passed(),
            "{}: {} >= {}",
            result.name,
            result.max_rel_err,
            result.tolerance
        );
    }
}
