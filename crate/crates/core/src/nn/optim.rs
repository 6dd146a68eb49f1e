//! Optimizers: SGD with Nesterov momentum, Adam, AdamW and RMSprop.
//!
//! Weight decay is split into two phases so the decoupling stays visible:
//! [`Optimizer::apply_l2_decay`] adds `lambda * w` to the gradients (a no-op
//! for AdamW), and [`Optimizer::step`] applies the pure update rule, with
//! AdamW decaying weights directly. Training loops call both in order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdNesterov,
    Adam,
    AdamW,
    RmsProp,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdNesterov => "sgd_nesterov",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sgd_nesterov" => Ok(OptimizerKind::SgdNesterov),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }

    pub fn uses_momentum(self) -> bool {
        matches!(self, OptimizerKind::SgdNesterov | OptimizerKind::RmsProp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Momentum for SGD-Nesterov and RMSprop; ignored by Adam and AdamW.
    pub momentum: f64,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    rms_alpha: f64,
    t: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig) -> Result<Self> {
        if !(config.lr.is_finite() && config.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", config.lr)));
        }
        if !(config.weight_decay.is_finite() && config.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if config.kind.uses_momentum() && !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0,1), got {}",
                config.momentum
            )));
        }
        Ok(Optimizer {
            kind: config.kind,
            lr: config.lr,
            weight_decay: config.weight_decay,
            momentum: config.momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rms_alpha: 0.99,
            t: 0,
            slots: Vec::new(),
        })
    }

    /// L2 weight decay as a gradient addition, for the non-decoupled kinds.
    pub fn apply_l2_decay(&self, params: &mut [&mut Tensor]) {
        if self.kind == OptimizerKind::AdamW || self.weight_decay == 0.0 {
            return;
        }
        for p in params.iter_mut() {
            let (data, grad) = p.data_and_grad_mut();
            for (g, w) in grad.iter_mut().zip(data.iter()) {
                *g += self.weight_decay * *w;
            }
        }
    }

    fn ensure_slots(&mut self, params: &[&mut Tensor]) {
        if self.slots.len() != params.len() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
    }

    /// One update step at effective learning rate `lr * lr_multiplier`.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr_multiplier: f64) {
        self.ensure_slots(params);
        self.t += 1;
        let lr = self.lr * lr_multiplier;
        match self.kind {
            OptimizerKind::SgdNesterov => {
                for (p, slot) in params.iter_mut().zip(&mut self.slots) {
                    let (data, grad) = p.data_and_grad_mut();
                    for i in 0..grad.len() {
                        slot.m[i] = self.momentum * slot.m[i] + grad[i];
                        let update = grad[i] + self.momentum * slot.m[i];
                        data[i] -= lr * update;
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                let decoupled = self.kind == OptimizerKind::AdamW;
                for (p, slot) in params.iter_mut().zip(&mut self.slots) {
                    let shrink = 1.0 - lr * self.weight_decay;
                    let (data, grad) = p.data_and_grad_mut();
                    if decoupled && self.weight_decay > 0.0 {
                        for w in data.iter_mut() {
                            *w *= shrink;
                        }
                    }
                    for i in 0..grad.len() {
                        let g = grad[i];
                        slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                        slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
            OptimizerKind::RmsProp => {
                for (p, slot) in params.iter_mut().zip(&mut self.slots) {
                    let (data, grad) = p.data_and_grad_mut();
                    for i in 0..grad.len() {
                        let g = grad[i];
                        slot.v[i] = self.rms_alpha * slot.v[i] + (1.0 - self.rms_alpha) * g * g;
                        let scaled = g / (slot.v[i].sqrt() + self.eps);
                        if self.momentum > 0.0 {
                            slot.m[i] = self.momentum * slot.m[i] + scaled;
                            data[i] -= lr * slot.m[i];
                        } else {
                            data[i] -= lr * scaled;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: OptimizerKind, lr: f64, wd: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind,
            lr,
            weight_decay: wd,
            momentum,
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        for kind in [
            OptimizerKind::SgdNesterov,
            OptimizerKind::Adam,
            OptimizerKind::RmsProp,
        ] {
            let mut opt = Optimizer::new(&config(kind, 0.1, 0.0, 0.9)).unwrap();
            let mut w = Tensor::filled(2, 3, 1.5).with_grad();
            let before = w.data().to_vec();
            opt.step(&mut [&mut w], 1.0);
            assert_eq!(w.data(), &before[..], "{kind:?}");
        }
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // f(w) = 0.5 ||w||^2, gradient w.
        let mut opt = Optimizer::new(&config(OptimizerKind::Adam, 0.1, 0.0, 0.0)).unwrap();
        let mut w = Tensor::filled(1, 4, 1.0).with_grad();
        for _ in 0..200 {
            w.zero_grad();
            let data = w.data().to_vec();
            w.grad_mut().copy_from_slice(&data);
            opt.step(&mut [&mut w], 1.0);
        }
        let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn sgd_nesterov_converges_on_quadratic_bowl() {
        let mut opt = Optimizer::new(&config(OptimizerKind::SgdNesterov, 0.05, 0.0, 0.9)).unwrap();
        let mut w = Tensor::filled(1, 4, 1.0).with_grad();
        for _ in 0..300 {
            w.zero_grad();
            let data = w.data().to_vec();
            w.grad_mut().copy_from_slice(&data);
            opt.step(&mut [&mut w], 1.0);
        }
        let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn adamw_decouples_weight_decay_from_gradient() {
        // Zero gradients, equal decay: AdamW shrinks weights by (1 - lr*wd)
        // per step, Adam leaves them untouched.
        let lr = 0.1;
        let wd = 0.1;
        let mut adamw = Optimizer::new(&config(OptimizerKind::AdamW, lr, wd, 0.0)).unwrap();
        let mut adam = Optimizer::new(&config(OptimizerKind::Adam, lr, wd, 0.0)).unwrap();
        let mut w_adamw = Tensor::filled(1, 2, 2.0).with_grad();
        let mut w_adam = Tensor::filled(1, 2, 2.0).with_grad();
        for step in 1..=3 {
            adamw.step(&mut [&mut w_adamw], 1.0);
            adam.step(&mut [&mut w_adam], 1.0);
            let expected = 2.0 * (1.0 - lr * wd).powi(step);
            for v in w_adamw.data() {
                assert!((v - expected).abs() < 1e-12);
            }
            for v in w_adam.data() {
                assert_eq!(*v, 2.0);
            }
        }
    }

    #[test]
    fn l2_decay_phase_adds_scaled_weights_to_grads() {
        let opt = Optimizer::new(&config(OptimizerKind::SgdNesterov, 0.1, 0.01, 0.9)).unwrap();
        let mut w = Tensor::filled(1, 3, 4.0).with_grad();
        opt.apply_l2_decay(&mut [&mut w]);
        for g in w.grad() {
            assert!((g - 0.04).abs() < 1e-15);
        }
        // AdamW skips the gradient-side decay entirely.
        let opt = Optimizer::new(&config(OptimizerKind::AdamW, 0.1, 0.01, 0.0)).unwrap();
        let mut w = Tensor::filled(1, 3, 4.0).with_grad();
        opt.apply_l2_decay(&mut [&mut w]);
        assert!(w.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Optimizer::new(&config(OptimizerKind::Adam, 0.0, 0.0, 0.0)).is_err());
        assert!(Optimizer::new(&config(OptimizerKind::Adam, -1.0, 0.0, 0.0)).is_err());
        assert!(Optimizer::new(&config(OptimizerKind::SgdNesterov, 0.1, 0.0, 1.5)).is_err());
    }
}
