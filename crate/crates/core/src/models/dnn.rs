//! Residual fully-connected classifier.
//!
//! Blocks apply Dense -> BN -> activation -> Dropout with a skip connection:
//! identity when the width is unchanged, a bias-free learned projection when
//! it changes. A linear head maps the final hidden state to 3 class logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{ActKind, Activation, BatchNorm, Dense, Dropout, Mode};
use crate::nn::optim::OptimizerConfig;
use crate::nn::schedule::ScheduleKind;
use crate::nn::tensor::{add, Tensor};
use crate::util::derive_seed;

pub const INPUT_DIM: usize = 512;
pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "loss")]
pub enum LossKind {
    CeLs { alpha: f64 },
    Focal { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnConfig {
    /// Output width of each residual block, in order.
    pub widths: Vec<usize>,
    pub activation: ActKind,
    pub dropout: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleKind,
    pub batch_size: usize,
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|w| *w == 0) {
            return Err(Error::invalid("widths must be non-empty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        match self.loss {
            LossKind::CeLs { alpha } => {
                if !(0.0..=0.15).contains(&alpha) {
                    return Err(Error::invalid(format!("alpha {alpha} out of [0, 0.15]")));
                }
            }
            LossKind::Focal { gamma } => {
                if !(0.0..=5.0).contains(&gamma) {
                    return Err(Error::invalid(format!("gamma {gamma} out of [0, 5]")));
                }
            }
        }
        Ok(())
    }
}

enum Skip {
    Identity,
    Projection(Dense),
}

struct ResBlock {
    dense: Dense,
    bn: BatchNorm,
    act: Activation,
    dropout: Dropout,
    skip: Skip,
}

impl ResBlock {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let main = self.dropout.forward(
            &self.act.forward(&self.bn.forward(&self.dense.forward(x), mode)?),
            mode,
        );
        let skip = match &mut self.skip {
            Skip::Identity => x.clone(),
            Skip::Projection(proj) => proj.forward(x),
        };
        Ok(add(&main, &skip))
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d_main = self.dense.backward(&self.bn.backward(
            &self.act.backward(&self.dropout.backward(dy)),
        ));
        let d_skip = match &mut self.skip {
            Skip::Identity => dy.clone(),
            Skip::Projection(proj) => proj.backward(dy),
        };
        add(&d_main, &d_skip)
    }
}

pub struct DnnModel {
    pub config: DnnConfig,
    pub seed: u64,
    pub input_dim: usize,
    blocks: Vec<ResBlock>,
    head: Dense,
}

/// Build the residual DNN on the standard 512-D input.
pub fn build_dnn(config: &DnnConfig, seed: u64) -> Result<DnnModel> {
    build_dnn_with_input_dim(config, INPUT_DIM, seed)
}

/// Build with an explicit input width (small widths keep the end-to-end
/// finite-difference checks cheap).
pub fn build_dnn_with_input_dim(
    config: &DnnConfig,
    input_dim: usize,
    seed: u64,
) -> Result<DnnModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xD));
    let mut blocks = Vec::with_capacity(config.widths.len());
    let mut d_in = input_dim;
    for (i, &d_out) in config.widths.iter().enumerate() {
        let dense = Dense::new(d_in, d_out, &mut rng);
        let skip = if d_in == d_out {
            Skip::Identity
        } else {
            Skip::Projection(Dense::new_no_bias(d_in, d_out, &mut rng))
        };
        blocks.push(ResBlock {
            dense,
            bn: BatchNorm::new(d_out),
            act: Activation::new(config.activation),
            dropout: Dropout::new(config.dropout, derive_seed(seed, 100 + i as u64))?,
            skip,
        });
        d_in = d_out;
    }
    let head = Dense::new(d_in, N_CLASSES, &mut rng);
    Ok(DnnModel {
        config: config.clone(),
        seed,
        input_dim,
        blocks,
        head,
    })
}

impl DnnModel {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        Ok(self.head.forward(&h))
    }

    pub fn backward(&mut self, dlogits: &Tensor) {
        let mut dh = self.head.backward(dlogits);
        for block in self.blocks.iter_mut().rev() {
            dh = block.backward(&dh);
        }
    }

    /// Parameter count in the reporting convention of the reference
    /// configurations: dense weights and biases, BN affine parameters and
    /// the head. Skip projections are tallied by [`DnnModel::projection_params`].
    pub fn reported_params(&self) -> usize {
        let mut count = self.head.param_count();
        for block in &self.blocks {
            count += block.dense.param_count() + block.bn.param_count();
        }
        count
    }

    pub fn projection_params(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match &b.skip {
                Skip::Identity => 0,
                Skip::Projection(p) => p.param_count(),
            })
            .sum()
    }

    pub fn total_params(&self) -> usize {
        self.reported_params() + self.projection_params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params = Vec::new();
        for block in &mut self.blocks {
            params.push(&mut block.dense.w);
            if let Some(b) = &mut block.dense.b {
                params.push(b);
            }
            params.push(&mut block.bn.gamma);
            params.push(&mut block.bn.beta);
            if let Skip::Projection(proj) = &mut block.skip {
                params.push(&mut proj.w);
            }
        }
        params.push(&mut self.head.w);
        if let Some(b) = &mut self.head.b {
            params.push(b);
        }
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All state in a fixed order: learnable parameters plus BN running
    /// statistics. Used for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named_state()
            .into_iter()
            .map(|(_, _, _, values)| values)
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        let names: Vec<String> = self
            .named_state()
            .into_iter()
            .map(|(name, _, _, _)| name)
            .collect();
        assert_eq!(names.len(), snapshot.len(), "snapshot layout mismatch");
        for (name, values) in names.iter().zip(snapshot) {
            self.write_state(name, values).expect("snapshot layout mismatch");
        }
    }

    /// (name, rows, cols, values) for every state tensor, in a fixed order.
    pub fn named_state(&self) -> Vec<(String, usize, usize, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((
                format!("block{i}.dense.w"),
                block.dense.w.rows(),
                block.dense.w.cols(),
                block.dense.w.data().to_vec(),
            ));
            let b = block.dense.b.as_ref().unwrap();
            out.push((format!("block{i}.dense.b"), 1, b.cols(), b.data().to_vec()));
            out.push((
                format!("block{i}.bn.gamma"),
                1,
                block.bn.gamma.cols(),
                block.bn.gamma.data().to_vec(),
            ));
            out.push((
                format!("block{i}.bn.beta"),
                1,
                block.bn.beta.cols(),
                block.bn.beta.data().to_vec(),
            ));
            out.push((
                format!("block{i}.bn.running_mean"),
                1,
                block.bn.running_mean.len(),
                block.bn.running_mean.clone(),
            ));
            out.push((
                format!("block{i}.bn.running_var"),
                1,
                block.bn.running_var.len(),
                block.bn.running_var.clone(),
            ));
            if let Skip::Projection(proj) = &block.skip {
                out.push((
                    format!("block{i}.skip.w"),
                    proj.w.rows(),
                    proj.w.cols(),
                    proj.w.data().to_vec(),
                ));
            }
        }
        out.push((
            "head.w".to_string(),
            self.head.w.rows(),
            self.head.w.cols(),
            self.head.w.data().to_vec(),
        ));
        let b = self.head.b.as_ref().unwrap();
        out.push(("head.b".to_string(), 1, b.cols(), b.data().to_vec()));
        out
    }

    /// Overwrite one state tensor by name.
    pub fn write_state(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let fail = || Error::invalid(format!("unknown state tensor `{name}`"));
        let mut parts = name.split('.');
        let first = parts.next().ok_or_else(fail)?;
        if first == "head" {
            let field = parts.next().ok_or_else(fail)?;
            let t = match field {
                "w" => &mut self.head.w,
                "b" => self.head.b.as_mut().unwrap(),
                _ => return Err(fail()),
            };
            copy_into(t, values, name)
        } else if let Some(idx) = first.strip_prefix("block") {
            let i: usize = idx.parse().map_err(|_| fail())?;
            let block = self.blocks.get_mut(i).ok_or_else(fail)?;
            match (parts.next().ok_or_else(fail)?, parts.next()) {
                ("dense", Some("w")) => copy_into(&mut block.dense.w, values, name),
                ("dense", Some("b")) => {
                    copy_into(block.dense.b.as_mut().unwrap(), values, name)
                }
                ("bn", Some("gamma")) => copy_into(&mut block.bn.gamma, values, name),
                ("bn", Some("beta")) => copy_into(&mut block.bn.beta, values, name),
                ("bn", Some("running_mean")) => {
                    copy_into_vec(&mut block.bn.running_mean, values, name)
                }
                ("bn", Some("running_var")) => {
                    copy_into_vec(&mut block.bn.running_var, values, name)
                }
                ("skip", Some("w")) => match &mut block.skip {
                    Skip::Projection(proj) => copy_into(&mut proj.w, values, name),
                    Skip::Identity => Err(fail()),
                },
                _ => Err(fail()),
            }
        } else {
            Err(fail())
        }
    }
}

pub(crate) fn copy_into(t: &mut Tensor, values: &[f64], name: &str) -> Result<()> {
    if t.len() != values.len() {
        return Err(Error::shape(
            format!("{} values for `{name}`", t.len()),
            format!("{}", values.len()),
        ));
    }
    t.data_mut().copy_from_slice(values);
    Ok(())
}

pub(crate) fn copy_into_vec(v: &mut Vec<f64>, values: &[f64], name: &str) -> Result<()> {
    if v.len() != values.len() {
        return Err(Error::shape(
            format!("{} values for `{name}`", v.len()),
            format!("{}", values.len()),
        ));
    }
    v.copy_from_slice(values);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::optim::OptimizerKind;

    fn config(widths: Vec<usize>) -> DnnConfig {
        DnnConfig {
            widths,
            activation: ActKind::Silu,
            dropout: 0.2,
            loss: LossKind::CeLs { alpha: 0.085 },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::SgdNesterov,
                lr: 3.36e-3,
                weight_decay: 1.54e-6,
                momentum: 0.803,
            },
            schedule: ScheduleKind::Plateau { patience: 10 },
            batch_size: 32,
        }
    }

    #[test]
    fn reference_architectures_have_expected_reported_params() {
        let sys1 = build_dnn(&config(vec![256, 64, 64, 64, 64]), 0).unwrap();
        assert_eq!(sys1.reported_params(), 161_475);
        let sys2 = build_dnn(&config(vec![704, 368, 92]), 0).unwrap();
        assert_eq!(sys2.reported_params(), 657_147);
        // Projections exist where the width changes and carry extra weights.
        assert_eq!(sys1.projection_params(), 512 * 256 + 256 * 64);
        assert_eq!(sys2.projection_params(), 512 * 704 + 704 * 368 + 368 * 92);
    }

    #[test]
    fn equal_width_block_uses_parameter_free_identity_skip() {
        let model = build_dnn_with_input_dim(&config(vec![8, 8]), 8, 1).unwrap();
        assert_eq!(model.projection_params(), 0);
    }

    #[test]
    fn residual_block_passes_input_through_when_main_path_is_zeroed() {
        let mut model = build_dnn_with_input_dim(&config(vec![6]), 6, 2).unwrap();
        // Zero the dense weights/bias and the BN affine scale: main path
        // emits exactly zero, so the block output is the identity skip.
        let zeros_w = vec![0.0; 36];
        model.write_state("block0.dense.w", &zeros_w).unwrap();
        model.write_state("block0.dense.b", &vec![0.0; 6]).unwrap();
        model.write_state("block0.bn.gamma", &vec![0.0; 6]).unwrap();
        let x = Tensor::from_vec(2, 6, (0..12).map(|v| v as f64).collect()).unwrap();
        let mut h = x.clone();
        h = model.blocks[0].forward(&h, Mode::Eval).unwrap();
        assert_eq!(h.data(), x.data());
    }

    #[test]
    fn forward_shapes_and_eval_determinism() {
        let mut model = build_dnn_with_input_dim(&config(vec![16, 8]), 12, 3).unwrap();
        let x = Tensor::filled(5, 12, 0.3);
        let a = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.shape(), (5, 3));
        let b = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut model = build_dnn_with_input_dim(&config(vec![8, 4]), 6, 4).unwrap();
        let snap = model.snapshot();
        // Perturb everything, restore, compare.
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v += 1.0;
            }
        }
        model.restore(&snap);
        assert_eq!(model.snapshot(), snap);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(build_dnn(&config(vec![]), 0).is_err());
        let mut bad = config(vec![8]);
        bad.dropout = 1.0;
        assert!(build_dnn(&bad, 0).is_err());
        let mut bad = config(vec![8]);
        bad.loss = LossKind::CeLs { alpha: 0.3 };
        assert!(build_dnn(&bad, 0).is_err());
    }
}
