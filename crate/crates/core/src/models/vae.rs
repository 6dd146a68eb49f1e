//! VAE with a classification head: probabilistic encoder, mirror-image
//! decoder and a latent-space classifier, trained jointly on a weighted sum
//! of KL, reconstruction MSE and unweighted cross-entropy.
//!
//! Training samples z through the reparameterization trick; evaluation is
//! deterministic and runs the decoder and head on the latent mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{ActKind, Activation, BatchNorm, Dense, Dropout, Mode};
use crate::nn::loss::{self, KlOutput, LossOutput};
use crate::nn::optim::OptimizerConfig;
use crate::nn::schedule::ScheduleKind;
use crate::nn::tensor::{add, Tensor};
use crate::util::derive_seed;

pub use crate::models::dnn::{INPUT_DIM, N_CLASSES};

/// Log-variance clamp bounds applied to the encoder output.
pub const LOGVAR_MIN: f64 = -80.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub widths: Vec<usize>,
    pub d_z: usize,
    pub activation: ActKind,
    pub batch_norm: bool,
    pub dropout: f64,
    pub beta: f64,
    pub lambda_rcst: f64,
    pub lambda_clf: f64,
    pub beta_warmup_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleKind,
    pub batch_size: usize,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|w| *w == 0) {
            return Err(Error::invalid("encoder widths must be non-empty and positive"));
        }
        if self.d_z == 0 {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda_rcst", self.lambda_rcst),
            ("lambda_clf", self.lambda_clf),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Cosine ramp of the KL weight: 0 -> beta over `warmup` epochs, constant
/// afterwards. Zero warm-up disables the ramp entirely.
pub fn beta_warmup(beta: f64, warmup_epochs: usize, epoch: usize) -> f64 {
    if warmup_epochs == 0 {
        return beta;
    }
    let progress = (epoch.min(warmup_epochs)) as f64 / warmup_epochs as f64;
    beta * 0.5 * (1.0 - (std::f64::consts::PI * progress).cos())
}

/// Dense -> optional BN -> activation -> Dropout.
pub struct FcBlock {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
    pub act: Activation,
    pub dropout: Dropout,
}

impl FcBlock {
    fn new(
        d_in: usize,
        d_out: usize,
        act: ActKind,
        batch_norm: bool,
        dropout_p: f64,
        rng: &mut ChaCha8Rng,
        dropout_seed: u64,
    ) -> Result<Self> {
        Ok(FcBlock {
            dense: Dense::new(d_in, d_out, rng),
            bn: batch_norm.then(|| BatchNorm::new(d_out)),
            act: Activation::new(act),
            dropout: Dropout::new(dropout_p, dropout_seed)?,
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = self.dense.forward(x);
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, mode)?;
        }
        Ok(self.dropout.forward(&self.act.forward(&h), mode))
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut d = self.act.backward(&self.dropout.backward(dy));
        if let Some(bn) = &mut self.bn {
            d = bn.backward(&d);
        }
        self.dense.backward(&d)
    }

    fn param_count(&self) -> usize {
        self.dense.param_count() + self.bn.as_ref().map_or(0, BatchNorm::param_count)
    }
}

/// Latent classifier: Dense(d_z -> 2 d_z) -> activation -> Dense(-> 3).
pub struct ClassifierHead {
    pub hidden: Dense,
    pub act: Activation,
    pub out: Dense,
}

impl ClassifierHead {
    pub fn new(d_z: usize, activation: ActKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xEAD));
        ClassifierHead {
            hidden: Dense::new(d_z, 2 * d_z, &mut rng),
            act: Activation::new(activation),
            out: Dense::new(2 * d_z, N_CLASSES, &mut rng),
        }
    }

    pub fn d_z(&self) -> usize {
        self.hidden.d_in()
    }

    pub fn forward(&mut self, z: &Tensor) -> Tensor {
        self.out.forward(&self.act.forward(&self.hidden.forward(z)))
    }

    pub fn backward(&mut self, dlogits: &Tensor) -> Tensor {
        self.hidden.backward(&self.act.backward(&self.out.backward(dlogits)))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params = vec![&mut self.hidden.w];
        if let Some(b) = &mut self.hidden.b {
            params.push(b);
        }
        params.push(&mut self.out.w);
        if let Some(b) = &mut self.out.b {
            params.push(b);
        }
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }

    pub fn named_state(&self) -> Vec<(String, usize, usize, Vec<f64>)> {
        let mut out = Vec::new();
        push_dense(&mut out, "hidden", &self.hidden);
        push_dense(&mut out, "out", &self.out);
        out
    }

    pub fn write_state(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let fail = || Error::invalid(format!("unknown head tensor `{name}`"));
        match name {
            "hidden.w" => super::dnn::copy_into(&mut self.hidden.w, values, name),
            "hidden.b" => super::dnn::copy_into(self.hidden.b.as_mut().unwrap(), values, name),
            "out.w" => super::dnn::copy_into(&mut self.out.w, values, name),
            "out.b" => super::dnn::copy_into(self.out.b.as_mut().unwrap(), values, name),
            _ => Err(fail()),
        }
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named_state().into_iter().map(|(_, _, _, v)| v).collect()
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
}

fn push_dense(out: &mut Vec<(String, usize, usize, Vec<f64>)>, prefix: &str, dense: &Dense) {
    out.push((
        format!("{prefix}.w"),
        dense.w.rows(),
        dense.w.cols(),
        dense.w.data().to_vec(),
    ));
    if let Some(b) = &dense.b {
        out.push((format!("{prefix}.b"), 1, b.cols(), b.data().to_vec()));
    }
}

fn push_block(
    out: &mut Vec<(String, usize, usize, Vec<f64>)>,
    prefix: &str,
    block: &FcBlock,
) {
    push_dense(out, &format!("{prefix}.dense"), &block.dense);
    if let Some(bn) = &block.bn {
        out.push((
            format!("{prefix}.bn.gamma"),
            1,
            bn.gamma.cols(),
            bn.gamma.data().to_vec(),
        ));
        out.push((
            format!("{prefix}.bn.beta"),
            1,
            bn.beta.cols(),
            bn.beta.data().to_vec(),
        ));
        out.push((
            format!("{prefix}.bn.running_mean"),
            1,
            bn.running_mean.len(),
            bn.running_mean.clone(),
        ));
        out.push((
            format!("{prefix}.bn.running_var"),
            1,
            bn.running_var.len(),
            bn.running_var.clone(),
        ));
    }
}

pub struct VaeModel {
    pub config: VaeConfig,
    pub seed: u64,
    pub input_dim: usize,
    enc: Vec<FcBlock>,
    mu_head: Dense,
    logvar_head: Dense,
    dec: Vec<FcBlock>,
    dec_out: Dense,
    pub head: ClassifierHead,
    cached_half_eps_sigma: Option<Tensor>,
    cached_clamp_mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct VaeForward {
    pub recon: Tensor,
    pub mu: Tensor,
    pub logvar: Tensor,
    pub z: Tensor,
    pub logits: Tensor,
}

pub fn build_vae(config: &VaeConfig, seed: u64) -> Result<VaeModel> {
    build_vae_with_input_dim(config, INPUT_DIM, seed)
}

pub fn build_vae_with_input_dim(
    config: &VaeConfig,
    input_dim: usize,
    seed: u64,
) -> Result<VaeModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xE));
    let mut enc = Vec::with_capacity(config.widths.len());
    let mut d_in = input_dim;
    for (i, &w) in config.widths.iter().enumerate() {
        enc.push(FcBlock::new(
            d_in,
            w,
            config.activation,
            config.batch_norm,
            config.dropout,
            &mut rng,
            derive_seed(seed, 200 + i as u64),
        )?);
        d_in = w;
    }
    let mu_head = Dense::new(d_in, config.d_z, &mut rng);
    let logvar_head = Dense::new(d_in, config.d_z, &mut rng);

    // Decoder mirrors the encoder widths back to the input dimension.
    let mut dec = Vec::new();
    let mut d = config.d_z;
    for (i, &w) in config.widths.iter().rev().enumerate() {
        dec.push(FcBlock::new(
            d,
            w,
            config.activation,
            config.batch_norm,
            config.dropout,
            &mut rng,
            derive_seed(seed, 300 + i as u64),
        )?);
        d = w;
    }
    let dec_out = Dense::new(d, input_dim, &mut rng);
    let head = ClassifierHead::new(config.d_z, config.activation, seed);

    Ok(VaeModel {
        config: config.clone(),
        seed,
        input_dim,
        enc,
        mu_head,
        logvar_head,
        dec,
        dec_out,
        head,
        cached_half_eps_sigma: None,
        cached_clamp_mask: None,
    })
}

impl VaeModel {
    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    /// Encoder pass up to (mu, logvar), with the logvar clamp applied.
    fn encode(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        for block in &mut self.enc {
            h = block.forward(&h, mode)?;
        }
        let mu = self.mu_head.forward(&h);
        let mut logvar = self.logvar_head.forward(&h);
        let mut mask = vec![1.0; logvar.len()];
        for (v, m) in logvar.data_mut().iter_mut().zip(&mut mask) {
            if *v < LOGVAR_MIN {
                *v = LOGVAR_MIN;
                *m = 0.0;
            } else if *v > LOGVAR_MAX {
                *v = LOGVAR_MAX;
                *m = 0.0;
            }
        }
        self.cached_clamp_mask = Some(mask);
        Ok((mu, logvar))
    }

    fn decode(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = z.clone();
        for block in &mut self.dec {
            h = block.forward(&h, mode)?;
        }
        Ok(self.dec_out.forward(&h))
    }

    /// Full forward pass. In train mode z is sampled with the given rng; in
    /// eval mode z = mu and no randomness is consumed.
    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<VaeForward> {
        let (mu, logvar) = self.encode(x, mode)?;
        let (z, eps) = match mode {
            Mode::Train => {
                let rng = rng.ok_or_else(|| Error::invalid("train-mode forward needs an rng"))?;
                loss::reparameterize(&mu, &logvar, rng)
            }
            Mode::Eval => (mu.clone(), Tensor::zeros(mu.rows(), mu.cols())),
        };
        self.finish_forward(x, mode, mu, logvar, z, eps)
    }

    /// Forward with caller-frozen reparameterization noise (gradient checks).
    pub fn forward_with_eps(&mut self, x: &Tensor, mode: Mode, eps: &Tensor) -> Result<VaeForward> {
        let (mu, logvar) = self.encode(x, mode)?;
        let z = loss::reparameterize_with_eps(&mu, &logvar, eps);
        self.finish_forward(x, mode, mu, logvar, z, eps.clone())
    }

    fn finish_forward(
        &mut self,
        _x: &Tensor,
        mode: Mode,
        mu: Tensor,
        logvar: Tensor,
        z: Tensor,
        eps: Tensor,
    ) -> Result<VaeForward> {
        let mut half_eps_sigma = Tensor::zeros(mu.rows(), mu.cols());
        for i in 0..half_eps_sigma.len() {
            half_eps_sigma.data_mut()[i] = 0.5 * eps.data()[i] * (0.5 * logvar.data()[i]).exp();
        }
        self.cached_half_eps_sigma = Some(half_eps_sigma);
        let recon = self.decode(&z, mode)?;
        let logits = self.head.forward(&z);
        Ok(VaeForward {
            recon,
            mu,
            logvar,
            z,
            logits,
        })
    }

    /// Backward from loss gradients. Gradients flow to the decoder through
    /// the reconstruction term, to the head through the classification term,
    /// and to the encoder through all three.
    pub fn backward(&mut self, grads: &VaeGrads) {
        let mut dz = self.dec.iter_mut().rev().fold(
            self.dec_out.backward(&grads.d_recon),
            |d, block| block.backward(&d),
        );
        dz = add(&dz, &self.head.backward(&grads.d_logits));

        let dmu = add(&dz, &grads.d_mu);
        let half_eps_sigma = self
            .cached_half_eps_sigma
            .as_ref()
            .expect("backward before forward");
        let mut dlv = grads.d_logvar.clone();
        for i in 0..dlv.len() {
            dlv.data_mut()[i] += dz.data()[i] * half_eps_sigma.data()[i];
        }
        let mask = self.cached_clamp_mask.as_ref().expect("backward before forward");
        for (v, m) in dlv.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }

        let mut dh = self.mu_head.backward(&dmu);
        dh = add(&dh, &self.logvar_head.backward(&dlv));
        for block in self.enc.iter_mut().rev() {
            dh = block.backward(&dh);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut params = Vec::new();
        for block in &mut self.enc {
            collect_block_params(block, &mut params);
        }
        params.push(&mut self.mu_head.w);
        params.push(self.mu_head.b.as_mut().unwrap());
        params.push(&mut self.logvar_head.w);
        params.push(self.logvar_head.b.as_mut().unwrap());
        for block in &mut self.dec {
            collect_block_params(block, &mut params);
        }
        params.push(&mut self.dec_out.w);
        params.push(self.dec_out.b.as_mut().unwrap());
        params.extend(self.head.params_mut());
        params
    }

    /// Encoder + head-to-latent parameters only (frozen in phase 2).
    pub fn encoder_param_count(&self) -> usize {
        self.enc.iter().map(FcBlock::param_count).sum::<usize>()
            + self.mu_head.param_count()
            + self.logvar_head.param_count()
    }

    pub fn total_params(&self) -> usize {
        self.encoder_param_count()
            + self.dec.iter().map(FcBlock::param_count).sum::<usize>()
            + self.dec_out.param_count()
            + self.head.param_count()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn named_state(&self) -> Vec<(String, usize, usize, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, block) in self.enc.iter().enumerate() {
            push_block(&mut out, &format!("enc{i}"), block);
        }
        push_dense(&mut out, "mu", &self.mu_head);
        push_dense(&mut out, "logvar", &self.logvar_head);
        for (i, block) in self.dec.iter().enumerate() {
            push_block(&mut out, &format!("dec{i}"), block);
        }
        push_dense(&mut out, "dec_out", &self.dec_out);
        for (name, r, c, v) in self.head.named_state() {
            out.push((format!("head.{name}"), r, c, v));
        }
        out
    }

    pub fn write_state(&mut self, name: &str, values: &[f64]) -> Result<()> {
        use super::dnn::{copy_into, copy_into_vec};
        let fail = || Error::invalid(format!("unknown state tensor `{name}`"));

        if let Some(rest) = name.strip_prefix("head.") {
            return self.head.write_state(rest, values);
        }
        if let Some(rest) = name.strip_prefix("mu.") {
            return match rest {
                "w" => copy_into(&mut self.mu_head.w, values, name),
                "b" => copy_into(self.mu_head.b.as_mut().unwrap(), values, name),
                _ => Err(fail()),
            };
        }
        if let Some(rest) = name.strip_prefix("logvar.") {
            return match rest {
                "w" => copy_into(&mut self.logvar_head.w, values, name),
                "b" => copy_into(self.logvar_head.b.as_mut().unwrap(), values, name),
                _ => Err(fail()),
            };
        }
        if let Some(rest) = name.strip_prefix("dec_out.") {
            return match rest {
                "w" => copy_into(&mut self.dec_out.w, values, name),
                "b" => copy_into(self.dec_out.b.as_mut().unwrap(), values, name),
                _ => Err(fail()),
            };
        }
        let (blocks, rest) = if let Some(r) = name.strip_prefix("enc") {
            (&mut self.enc, r)
        } else if let Some(r) = name.strip_prefix("dec") {
            (&mut self.dec, r)
        } else {
            return Err(fail());
        };
        let dot = rest.find('.').ok_or_else(fail)?;
        let idx: usize = rest[..dot].parse().map_err(|_| fail())?;
        let field = &rest[dot + 1..];
        let block = blocks.get_mut(idx).ok_or_else(fail)?;
        match field {
            "dense.w" => copy_into(&mut block.dense.w, values, name),
            "dense.b" => copy_into(block.dense.b.as_mut().unwrap(), values, name),
            "bn.gamma" => copy_into(&mut block.bn.as_mut().ok_or_else(fail)?.gamma, values, name),
            "bn.beta" => copy_into(&mut block.bn.as_mut().ok_or_else(fail)?.beta, values, name),
            "bn.running_mean" => copy_into_vec(
                &mut block.bn.as_mut().ok_or_else(fail)?.running_mean,
                values,
                name,
            ),
            "bn.running_var" => copy_into_vec(
                &mut block.bn.as_mut().ok_or_else(fail)?.running_var,
                values,
                name,
            ),
            _ => Err(fail()),
        }
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.named_state().into_iter().map(|(_, _, _, v)| v).collect()
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

    /// Little-endian byte blob of the encoder parameters (everything the
    /// phase-2 freeze contract covers), for hashing.
    pub fn encoder_blob(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for (name, _, _, values) in self.named_state() {
            let frozen = name.starts_with("enc")
                || name.starts_with("mu.")
                || name.starts_with("logvar.");
            if frozen {
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        bytes
    }

    /// Eval-mode latent means for a feature matrix.
    pub fn latent_mu(&mut self, x: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.encode(x, Mode::Eval)?;
        Ok(mu)
    }
}

fn collect_block_params<'a>(block: &'a mut FcBlock, params: &mut Vec<&'a mut Tensor>) {
    params.push(&mut block.dense.w);
    if let Some(b) = &mut block.dense.b {
        params.push(b);
    }
    if let Some(bn) = &mut block.bn {
        params.push(&mut bn.gamma);
        params.push(&mut bn.beta);
    }
}

/// Gradients of the joint objective with respect to each forward output.
pub struct VaeGrads {
    pub d_recon: Tensor,
    pub d_logits: Tensor,
    pub d_mu: Tensor,
    pub d_logvar: Tensor,
}

/// Per-term values of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossParts {
    pub total: f64,
    pub kl: f64,
    pub rcst: f64,
    pub clf: f64,
}

/// Weighted joint loss: beta_eff * KL + lambda_rcst * MSE + lambda_clf * CE
/// (plain CE, no label smoothing), with gradients for the backward pass.
pub fn vae_loss(
    x: &Tensor,
    fwd: &VaeForward,
    targets: &[u8],
    beta_eff: f64,
    lambda_rcst: f64,
    lambda_clf: f64,
) -> Result<(VaeLossParts, VaeGrads)> {
    let kl: KlOutput = loss::gaussian_kl(&fwd.mu, &fwd.logvar)?;
    let rcst: LossOutput = loss::mse(x, &fwd.recon)?;
    let clf: LossOutput = loss::softmax_ce_ls(&fwd.logits, targets, 0.0)?;
    let total = beta_eff * kl.value + lambda_rcst * rcst.value + lambda_clf * clf.value;

    let scale = |t: &Tensor, s: f64| {
        let mut out = t.clone();
        for v in out.data_mut() {
            *v *= s;
        }
        out
    };
    Ok((
        VaeLossParts {
            total,
            kl: kl.value,
            rcst: rcst.value,
            clf: clf.value,
        },
        VaeGrads {
            d_recon: scale(&rcst.grad, lambda_rcst),
            d_logits: scale(&clf.grad, lambda_clf),
            d_mu: scale(&kl.grad_mu, beta_eff),
            d_logvar: scale(&kl.grad_logvar, beta_eff),
        },
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::optim::OptimizerKind;
    use rand::Rng;

    pub(crate) fn tiny_config() -> VaeConfig {
        VaeConfig {
            widths: vec![8],
            d_z: 4,
            activation: ActKind::Silu,
            batch_norm: true,
            dropout: 0.0,
            beta: 0.7,
            lambda_rcst: 1.3,
            lambda_clf: 0.9,
            beta_warmup_epochs: 0,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1e-3,
                weight_decay: 0.0,
                momentum: 0.0,
            },
            schedule: ScheduleKind::Cosine,
            batch_size: 4,
        }
    }

    #[test]
    fn beta_warmup_schedule() {
        assert_eq!(beta_warmup(0.3, 0, 0), 0.3);
        assert_eq!(beta_warmup(0.3, 0, 100), 0.3);
        assert!(beta_warmup(0.3, 40, 0).abs() < 1e-15);
        assert!((beta_warmup(0.3, 40, 20) - 0.15).abs() < 1e-12);
        assert!((beta_warmup(0.3, 40, 40) - 0.3).abs() < 1e-15);
        assert!((beta_warmup(0.3, 40, 90) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn decoder_mirrors_encoder_widths() {
        let mut cfg = tiny_config();
        cfg.widths = vec![6, 12, 10];
        let model = build_vae_with_input_dim(&cfg, 16, 1).unwrap();
        assert_eq!(model.dec[0].dense.d_in(), 4);
        assert_eq!(model.dec[0].dense.d_out(), 10);
        assert_eq!(model.dec[1].dense.d_out(), 12);
        assert_eq!(model.dec[2].dense.d_out(), 6);
        assert_eq!(model.dec_out.d_out(), 16);
    }

    #[test]
    fn reference_combined_architecture_dimensions() {
        let mut cfg = tiny_config();
        cfg.widths = vec![128, 768, 768];
        cfg.d_z = 32;
        let model = build_vae(&cfg, 0).unwrap();
        assert_eq!(model.input_dim, 512);
        assert_eq!(model.enc[0].dense.d_out(), 128);
        assert_eq!(model.enc[1].dense.d_out(), 768);
        assert_eq!(model.enc[2].dense.d_out(), 768);
        assert_eq!(model.mu_head.d_out(), 32);
        assert_eq!(model.logvar_head.d_out(), 32);
        // Mirror decoder back to 512.
        assert_eq!(model.dec[0].dense.d_in(), 32);
        assert_eq!(model.dec[0].dense.d_out(), 768);
        assert_eq!(model.dec[2].dense.d_out(), 128);
        assert_eq!(model.dec_out.d_out(), 512);
    }

    #[test]
    fn eval_forward_is_deterministic_and_uses_mu() {
        let mut model = build_vae_with_input_dim(&tiny_config(), 10, 3).unwrap();
        let x = Tensor::filled(5, 10, 0.2);
        let a = model.forward(&x, Mode::Eval, None).unwrap();
        let b = model.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
        assert_eq!(a.z.data(), a.mu.data());
    }

    #[test]
    fn loss_term_isolation_and_additivity() {
        let mut model = build_vae_with_input_dim(&tiny_config(), 10, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let x = Tensor::from_vec(4, 10, data).unwrap();
        let y = [0u8, 1, 2, 1];
        let fwd = model.forward(&x, Mode::Train, Some(&mut rng)).unwrap();

        // beta=0, lambda_rcst=0, lambda_clf=1 equals the head CE alone.
        let (parts, _) = vae_loss(&x, &fwd, &y, 0.0, 0.0, 1.0).unwrap();
        let ce = crate::nn::loss::softmax_ce_ls(&fwd.logits, &y, 0.0).unwrap();
        assert!((parts.total - ce.value).abs() < 1e-15);

        // Additivity of the three weighted terms.
        let (parts, _) = vae_loss(&x, &fwd, &y, 0.7, 1.3, 0.9).unwrap();
        let expected = 0.7 * parts.kl + 1.3 * parts.rcst + 0.9 * parts.clf;
        assert!((parts.total - expected).abs() < 1e-12);
    }

    #[test]
    fn snapshot_restore_and_encoder_blob_stability() {
        let mut model = build_vae_with_input_dim(&tiny_config(), 10, 5).unwrap();
        let blob_before = model.encoder_blob();
        let snap = model.snapshot();
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v += 0.5;
            }
        }
        assert_ne!(model.encoder_blob(), blob_before);
        model.restore(&snap);
        assert_eq!(model.encoder_blob(), blob_before);
    }

    #[test]
    fn head_only_updates_leave_encoder_blob_unchanged() {
        let mut model = build_vae_with_input_dim(&tiny_config(), 10, 6).unwrap();
        let blob_before = model.encoder_blob();
        for p in model.head.params_mut() {
            for v in p.data_mut() {
                *v += 1.0;
            }
        }
        assert_eq!(model.encoder_blob(), blob_before);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut bad = tiny_config();
        bad.d_z = 0;
        assert!(build_vae(&bad, 0).is_err());
        let mut bad = tiny_config();
        bad.beta = -1.0;
        assert!(build_vae(&bad, 0).is_err());
        let mut bad = tiny_config();
        bad.widths.clear();
        assert!(build_vae(&bad, 0).is_err());
    }
}
