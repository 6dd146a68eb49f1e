//! Dense, batch-norm, dropout and activation layers with reverse-mode
//! gradients. Each layer caches what its backward pass needs during forward;
//! backward accumulates parameter gradients and returns the input gradient.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{add, matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activation kinds. GELU uses the tanh approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    Gelu,
    Elu,
    Silu,
    LeakyRelu,
}

impl ActKind {
    pub const ALL: [ActKind; 5] = [
        ActKind::Relu,
        ActKind::Gelu,
        ActKind::Elu,
        ActKind::Silu,
        ActKind::LeakyRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActKind::Relu => "relu",
            ActKind::Gelu => "gelu",
            ActKind::Elu => "elu",
            ActKind::Silu => "silu",
            ActKind::LeakyRelu => "leaky_relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(ActKind::Relu),
            "gelu" => Ok(ActKind::Gelu),
            "elu" => Ok(ActKind::Elu),
            "silu" => Ok(ActKind::Silu),
            "leaky_relu" => Ok(ActKind::LeakyRelu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActKind::Relu => x.max(0.0),
            ActKind::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            ActKind::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            ActKind::Silu => x * sigmoid(x),
            ActKind::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActKind::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            ActKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            ActKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActKind::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;
const LEAKY_SLOPE: f64 = 0.01;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer: y = x W^T + b, with W: d_out x d_in.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor,
    pub b: Option<Tensor>,
    cached_x: Option<Tensor>,
}

impl Dense {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: Tensor::glorot_uniform(d_out, d_in, d_in, d_out, rng).with_grad(),
            b: Some(Tensor::zeros(1, d_out).with_grad()),
            cached_x: None,
        }
    }

    /// Bias-free variant, used by skip projections.
    pub fn new_no_bias(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: Tensor::glorot_uniform(d_out, d_in, d_in, d_out, rng).with_grad(),
            b: None,
            cached_x: None,
        }
    }

    /// Assemble a layer from explicit tensors (weights: d_out x d_in).
    pub fn from_parts(w: Tensor, b: Option<Tensor>) -> Self {
        Dense {
            w,
            b,
            cached_x: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.as_ref().map_or(0, Tensor::len)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.cols(), self.d_in());
        let mut y = matmul_nt(x, &self.w);
        if let Some(b) = &self.b {
            let bias = b.row(0);
            for r in 0..y.rows() {
                for (slot, v) in y.row_mut(r).iter_mut().zip(bias) {
                    *slot += v;
                }
            }
        }
        self.cached_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cached_x.as_ref().expect("backward before forward");
        let dw = matmul_tn(dy, x);
        self.w.accumulate_grad(&dw);
        if let Some(b) = &mut self.b {
            b.ensure_grad();
            let db = b.grad_mut();
            for r in 0..dy.rows() {
                for (slot, v) in db.iter_mut().zip(dy.row(r)) {
                    *slot += v;
                }
            }
        }
        matmul_nn(dy, &self.w)
    }
}

struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

/// Batch normalization over features with a learnable affine transform.
/// Training normalizes with biased batch variance and updates running stats
/// with momentum 0.1 (unbiased variance, as in the usual framework default);
/// evaluation uses the running statistics.
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(1, d, 1.0).with_grad(),
            beta: Tensor::zeros(1, d).with_grad(),
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.cols()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, d) = x.shape();
        debug_assert_eq!(d, self.dim());
        let mut y = Tensor::zeros(b, d);
        match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::invalid(
                        "batch norm in train mode requires batch size >= 2",
                    ));
                }
                let n = b as f64;
                let mut mean = vec![0.0; d];
                for r in 0..b {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; d];
                for r in 0..b {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        let c = v - m;
                        *s += c * c;
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);

                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let mut x_hat = Tensor::zeros(b, d);
                for r in 0..b {
                    for c in 0..d {
                        let xh = (x.get(r, c) - mean[c]) * inv_std[c];
                        x_hat.set(r, c, xh);
                        y.set(r, c, self.gamma.get(0, c) * xh + self.beta.get(0, c));
                    }
                }
                let unbias = n / (n - 1.0);
                for c in 0..d {
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                    self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                        + self.momentum * var[c] * unbias;
                }
                self.cache = Some(BnCache { x_hat, inv_std });
            }
            Mode::Eval => {
                for r in 0..b {
                    for c in 0..d {
                        let xh = (x.get(r, c) - self.running_mean[c])
                            / (self.running_var[c] + self.eps).sqrt();
                        y.set(r, c, self.gamma.get(0, c) * xh + self.beta.get(0, c));
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("backward before train forward");
        let (b, d) = dy.shape();
        let n = b as f64;
        self.gamma.ensure_grad();
        self.beta.ensure_grad();

        let mut sum_dy = vec![0.0; d];
        let mut sum_dy_xhat = vec![0.0; d];
        for r in 0..b {
            for c in 0..d {
                sum_dy[c] += dy.get(r, c);
                sum_dy_xhat[c] += dy.get(r, c) * cache.x_hat.get(r, c);
            }
        }
        {
            let dgamma = self.gamma.grad_mut();
            for c in 0..d {
                dgamma[c] += sum_dy_xhat[c];
            }
        }
        {
            let dbeta = self.beta.grad_mut();
            for c in 0..d {
                dbeta[c] += sum_dy[c];
            }
        }

        let mut dx = Tensor::zeros(b, d);
        for r in 0..b {
            for c in 0..d {
                let term = dy.get(r, c) - sum_dy[c] / n - cache.x_hat.get(r, c) * sum_dy_xhat[c] / n;
                dx.set(r, c, self.gamma.get(0, c) * cache.inv_std[c] * term);
            }
        }
        dx
    }
}

/// Inverted dropout: zero with probability p in train mode, scale survivors
/// by 1/(1-p); identity in eval mode.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout p must be in [0,1), got {p}")));
        }
        Ok(Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        match &self.mask {
            None => dy.clone(),
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                dx
            }
        }
    }
}

/// One-shot dropout with an explicit seed; the layer above wraps this with a
/// persistent stream.
pub fn dropout(x: &Tensor, p: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    let mut layer = Dropout::new(p, seed)?;
    Ok(layer.forward(x, mode))
}

/// Elementwise activation layer.
pub struct Activation {
    pub kind: ActKind,
    cached_x: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation {
            kind,
            cached_x: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for v in y.data_mut() {
            *v = self.kind.apply(*v);
        }
        self.cached_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cached_x.as_ref().expect("backward before forward");
        let mut dx = dy.clone();
        for (v, xi) in dx.data_mut().iter_mut().zip(x.data()) {
            *v *= self.kind.derivative(*xi);
        }
        dx
    }
}

/// Residual add helper for skip connections when dims match.
pub fn residual_add(main: &Tensor, skip: &Tensor) -> Tensor {
    add(main, skip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let mut rng = rng(1);
        let mut layer = Dense::new(3, 3, &mut rng);
        // Overwrite with identity weights, zero bias.
        for r in 0..3 {
            for c in 0..3 {
                layer.w.set(r, c, if r == c { 1.0 } else { 0.0 });
            }
        }
        let x = Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let y = layer.forward(&x);
        assert_eq!(y.data(), x.data());

        // Zero input: rows all equal the bias.
        let mut layer = Dense::new(2, 4, &mut rng);
        let b = layer.b.as_mut().unwrap();
        for c in 0..4 {
            b.set(0, c, c as f64);
        }
        let y = layer.forward(&Tensor::zeros(3, 2));
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.0, 1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn activation_fixed_points() {
        assert_eq!(ActKind::Relu.apply(-1.0), 0.0);
        assert_eq!(ActKind::Relu.apply(2.0), 2.0);
        assert_eq!(ActKind::Silu.apply(0.0), 0.0);
        assert_eq!(ActKind::Elu.apply(0.0), 0.0);
        assert_eq!(ActKind::Gelu.apply(0.0), 0.0);
        assert_eq!(ActKind::LeakyRelu.apply(-2.0), -0.02);
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut bn = BatchNorm::new(5);
        let mut r = rng(2);
        let data: Vec<f64> = (0..40).map(|_| r.random::<f64>() * 60.0 + 1.0).collect();
        let x = Tensor::from_vec(8, 5, data).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..5 {
            let col: Vec<f64> = (0..8).map(|row| y.get(row, c)).collect();
            let mean = crate::util::mean(&col);
            let var = crate::util::population_variance(&col);
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_eval_with_unit_running_stats_is_affine_identity() {
        let mut bn = BatchNorm::new(3);
        let x = Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.0, -2.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            // eps shifts the denominator slightly away from 1.
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_rejects_batch_of_one_in_train_mode() {
        let mut bn = BatchNorm::new(2);
        assert!(bn.forward(&Tensor::zeros(1, 2), Mode::Train).is_err());
        assert!(bn.forward(&Tensor::zeros(1, 2), Mode::Eval).is_ok());
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = dropout(&x, 0.0, Mode::Train, 1).unwrap();
        assert_eq!(x.data(), y.data());
        let y = dropout(&x, 0.7, Mode::Eval, 1).unwrap();
        assert_eq!(x.data(), y.data());
        assert!(Dropout::new(1.0, 0).is_err());
    }

    #[test]
    fn dropout_survivor_fraction_and_mean_preservation() {
        let n = 1_000_000;
        let x = Tensor::filled(1000, 1000, 1.0);
        let y = dropout(&x, 0.5, Mode::Train, 42).unwrap();
        let survivors = y.data().iter().filter(|v| **v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "survivor fraction {frac}");
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_out - 1.0).abs() < 0.01, "mean {mean_out}");
    }

    #[test]
    fn dropout_mask_is_seed_reproducible() {
        let x = Tensor::filled(4, 8, 1.0);
        let a = dropout(&x, 0.3, Mode::Train, 9).unwrap();
        let b = dropout(&x, 0.3, Mode::Train, 9).unwrap();
        assert_eq!(a.data(), b.data());
        let c = dropout(&x, 0.3, Mode::Train, 10).unwrap();
        assert_ne!(a.data(), c.data());
    }
}
