//! Loss functions with analytic gradients. Every loss returns its scalar
//! value (mean over the batch) and the gradient with respect to its direct
//! input, already divided by the batch size.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const N_CLASSES: usize = 3;

/// Scalar loss plus gradient w.r.t. the loss input (logits or prediction).
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

fn validate_targets(logits: &Tensor, targets: &[u8]) -> Result<()> {
    if logits.rows() != targets.len() || logits.cols() != N_CLASSES {
        return Err(Error::shape(
            format!("{} x {N_CLASSES} logits", targets.len()),
            format!("{} x {}", logits.rows(), logits.cols()),
        ));
    }
    if let Some(bad) = targets.iter().find(|t| **t as usize >= N_CLASSES) {
        return Err(Error::invalid(format!("class code {bad} out of range")));
    }
    logits.assert_finite("logits")
}

/// Row-stable log-softmax: returns (log p, p) for one row.
fn log_softmax_row(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let logp: Vec<f64> = logits.iter().map(|z| z - lse).collect();
    let p = logp.iter().map(|lp| lp.exp()).collect();
    (logp, p)
}

/// Cross-entropy with label smoothing. The smoothed target puts
/// `alpha/3` on every class plus `1 - alpha` on the true class; `alpha = 0`
/// recovers plain CE.
pub fn softmax_ce_ls(logits: &Tensor, targets: &[u8], alpha: f64) -> Result<LossOutput> {
    validate_targets(logits, targets)?;
    if !(0.0..=0.15).contains(&alpha) {
        return Err(Error::invalid(format!(
            "label smoothing alpha must be in [0, 0.15], got {alpha}"
        )));
    }
    let b = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), N_CLASSES);
    for (r, &y) in targets.iter().enumerate() {
        let (logp, p) = log_softmax_row(logits.row(r));
        let mut row_loss = 0.0;
        for j in 0..N_CLASSES {
            let q = alpha / N_CLASSES as f64 + if j == y as usize { 1.0 - alpha } else { 0.0 };
            row_loss -= q * logp[j];
            grad.set(r, j, (p[j] - q) / b);
        }
        total += row_loss;
    }
    Ok(LossOutput {
        value: total / b,
        grad,
    })
}

/// Focal loss: mean of -(1 - p_t)^gamma log p_t. `gamma = 0` reduces to
/// plain CE exactly; the searched range is [0.5, 5.0].
pub fn focal_loss(logits: &Tensor, targets: &[u8], gamma: f64) -> Result<LossOutput> {
    validate_targets(logits, targets)?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::invalid(format!(
            "focal gamma must be finite and >= 0, got {gamma}"
        )));
    }
    let b = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), N_CLASSES);
    for (r, &y) in targets.iter().enumerate() {
        let (logp, p) = log_softmax_row(logits.row(r));
        let yi = y as usize;
        let logp_t = logp[yi];
        let p_t = p[yi];
        // exp_m1 keeps 1 - p_t accurate when p_t is close to 1.
        let u = -logp_t.exp_m1();
        total += -u.powf(gamma) * logp_t;

        // g = dL/dp_t * p_t, assembled to stay bounded at both p_t -> 0
        // (via u^gamma) and p_t -> 1 (via the series limit).
        let g = if u < 1e-12 {
            -(gamma + 1.0) * u.powf(gamma)
        } else {
            gamma * p_t * u.powf(gamma - 1.0) * logp_t - u.powf(gamma)
        };
        for j in 0..N_CLASSES {
            let indicator = if j == yi { 1.0 } else { 0.0 };
            grad.set(r, j, g * (indicator - p[j]) / b);
        }
    }
    Ok(LossOutput {
        value: total / b,
        grad,
    })
}

/// Reconstruction MSE: (1/B) sum_i ||x_i - x'_i||^2 (sum over features,
/// mean over the batch). The gradient is w.r.t. the reconstruction x'.
pub fn mse(x: &Tensor, x_prime: &Tensor) -> Result<LossOutput> {
    if x.shape() != x_prime.shape() {
        return Err(Error::shape(
            format!("{:?}", x.shape()),
            format!("{:?}", x_prime.shape()),
        ));
    }
    let b = x.rows() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    for ((g, a), p) in grad.data_mut().iter_mut().zip(x.data()).zip(x_prime.data()) {
        let diff = p - a;
        total += diff * diff;
        *g = 2.0 * diff / b;
    }
    Ok(LossOutput {
        value: total / b,
        grad,
    })
}

/// KL divergence of a diagonal Gaussian posterior from the standard normal
/// prior, averaged over the batch, with gradients for mu and log-variance.
#[derive(Debug, Clone)]
pub struct KlOutput {
    pub value: f64,
    pub grad_mu: Tensor,
    pub grad_logvar: Tensor,
}

pub fn gaussian_kl(mu: &Tensor, logvar: &Tensor) -> Result<KlOutput> {
    if mu.shape() != logvar.shape() {
        return Err(Error::shape(
            format!("{:?}", mu.shape()),
            format!("{:?}", logvar.shape()),
        ));
    }
    mu.assert_finite("mu")?;
    logvar.assert_finite("logvar")?;
    let b = mu.rows() as f64;
    let mut total = 0.0;
    let mut grad_mu = Tensor::zeros(mu.rows(), mu.cols());
    let mut grad_logvar = Tensor::zeros(mu.rows(), mu.cols());
    for i in 0..mu.len() {
        let m = mu.data()[i];
        let lv = logvar.data()[i];
        let ev = lv.exp();
        total += 0.5 * (m * m + ev - 1.0 - lv);
        grad_mu.data_mut()[i] = m / b;
        grad_logvar.data_mut()[i] = 0.5 * (ev - 1.0) / b;
    }
    Ok(KlOutput {
        value: total / b,
        grad_mu,
        grad_logvar,
    })
}

/// z = mu + eps * exp(logvar / 2) with eps ~ N(0, I) drawn from `rng`.
/// Returns (z, eps); the eps tensor is what the backward pass needs.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let mut eps = Tensor::zeros(mu.rows(), mu.cols());
    for v in eps.data_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let z = reparameterize_with_eps(mu, logvar, &eps);
    (z, eps)
}

/// Deterministic reparameterization with caller-supplied noise.
pub fn reparameterize_with_eps(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Tensor {
    debug_assert_eq!(mu.shape(), logvar.shape());
    debug_assert_eq!(mu.shape(), eps.shape());
    let mut z = Tensor::zeros(mu.rows(), mu.cols());
    for i in 0..z.len() {
        z.data_mut()[i] = mu.data()[i] + eps.data()[i] * (0.5 * logvar.data()[i]).exp();
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn logits(rows: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * N_CLASSES)
            .map(|_| rng.random::<f64>() * 4.0 - 2.0)
            .collect();
        Tensor::from_vec(rows, N_CLASSES, data).unwrap()
    }

    fn targets(rows: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows).map(|_| rng.random_range(0..3) as u8).collect()
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let x = Tensor::zeros(4, N_CLASSES);
        let out = softmax_ce_ls(&x, &[0, 1, 2, 0], 0.0).unwrap();
        assert!((out.value - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smoothing_zero_recovers_plain_ce() {
        let x = logits(16, 1);
        let y = targets(16, 2);
        let smoothed = softmax_ce_ls(&x, &y, 0.0).unwrap();
        // Plain CE computed independently.
        let mut plain = 0.0;
        for (r, &t) in y.iter().enumerate() {
            let (logp, _) = log_softmax_row(x.row(r));
            plain -= logp[t as usize];
        }
        plain /= 16.0;
        assert!((smoothed.value - plain).abs() < 1e-12);
    }

    #[test]
    fn focal_gamma_zero_matches_ce() {
        let x = logits(32, 3);
        let y = targets(32, 4);
        let ce = softmax_ce_ls(&x, &y, 0.0).unwrap();
        let fl = focal_loss(&x, &y, 0.0).unwrap();
        assert!((ce.value - fl.value).abs() < 1e-12);
        for (a, b) in ce.grad.data().iter().zip(fl.grad.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_downweights_easy_examples() {
        // For p_t >= 1/3 the focal factor (1-p_t)^gamma <= 1 keeps the focal
        // loss at or below CE, checked pointwise over a logit grid.
        for gamma in [0.5, 2.0, 5.0] {
            for k in 0..60 {
                let margin = k as f64 * 0.2; // true-class logit advantage
                let x = Tensor::from_vec(1, 3, vec![margin, 0.0, 0.0]).unwrap();
                let y = [0u8];
                let ce = softmax_ce_ls(&x, &y, 0.0).unwrap().value;
                let fl = focal_loss(&x, &y, gamma).unwrap().value;
                assert!(fl <= ce + 1e-15, "gamma={gamma} margin={margin}");
            }
        }
    }

    #[test]
    fn focal_is_finite_at_saturated_logits() {
        let x = Tensor::from_vec(2, 3, vec![1e4, -1e4, -1e4, -1e4, 1e4, -1e4]).unwrap();
        let out = focal_loss(&x, &[0, 1], 2.0).unwrap();
        assert!(out.value.is_finite());
        assert!(out.grad.data().iter().all(|v| v.is_finite()));
        assert!(out.value.abs() < 1e-12); // perfectly confident and correct
    }

    #[test]
    fn ce_is_stable_for_large_logits() {
        let x = Tensor::from_vec(1, 3, vec![1e4, 0.0, -1e4]).unwrap();
        let out = softmax_ce_ls(&x, &[2], 0.1).unwrap();
        assert!(out.value.is_finite());
    }

    #[test]
    fn mse_cases() {
        let x = Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let xp = Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let out = mse(&x, &xp).unwrap();
        assert_eq!(out.value, 25.0);
        let same = mse(&xp, &xp).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(mse(&x, &Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        let mu = Tensor::zeros(3, 4);
        let lv = Tensor::zeros(3, 4);
        let out = gaussian_kl(&mu, &lv).unwrap();
        assert_eq!(out.value, 0.0);

        let mu = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let lv = Tensor::from_vec(1, 1, vec![0.0]).unwrap();
        let out = gaussian_kl(&mu, &lv).unwrap();
        assert!((out.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        let mu_v = [0.7, -1.2];
        let lv_v = [0.4, -0.9];
        let mu = Tensor::from_vec(1, 2, mu_v.to_vec()).unwrap();
        let lv = Tensor::from_vec(1, 2, lv_v.to_vec()).unwrap();
        let exact = gaussian_kl(&mu, &lv).unwrap().value;

        // E_q[log q(z) - log p(z)] estimated with 1e6 draws.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1_000_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut term = 0.0;
            for (m, l) in mu_v.iter().zip(lv_v) {
                let sigma = (0.5 * l).exp();
                let z: f64 = m + sigma * rng.sample::<f64, _>(StandardNormal);
                let log_q = -0.5 * l - (z - m) * (z - m) / (2.0 * l.exp());
                let log_p = -z * z / 2.0;
                term += log_q - log_p;
            }
            samples.push(term);
        }
        let est = crate::util::mean(&samples);
        let se = (crate::util::population_variance(&samples) / n as f64).sqrt();
        assert!(
            (est - exact).abs() < 3.0 * se,
            "MC {est} vs exact {exact}, 3se = {}",
            3.0 * se
        );
    }

    #[test]
    fn losses_are_non_negative() {
        let x = logits(64, 5);
        let y = targets(64, 6);
        assert!(softmax_ce_ls(&x, &y, 0.1).unwrap().value >= 0.0);
        assert!(focal_loss(&x, &y, 3.0).unwrap().value >= 0.0);
        let xp = logits(64, 7);
        assert!(mse(&x, &xp).unwrap().value >= 0.0);
        let lv = logits(64, 8);
        assert!(gaussian_kl(&x, &lv).unwrap().value >= 0.0);
    }

    #[test]
    fn reparameterize_zero_variance_limit_and_determinism() {
        let mu = Tensor::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let lv = Tensor::filled(2, 2, -80.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, _) = reparameterize(&mu, &lv, &mut rng);
        for (a, b) in z.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-15);
        }

        let lv = Tensor::zeros(2, 2);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let (z1, _) = reparameterize(&mu, &lv, &mut r1);
        let (z2, _) = reparameterize(&mu, &lv, &mut r2);
        assert_eq!(z1.data(), z2.data());
    }

    #[test]
    fn reparameterize_moments() {
        let n = 100_000;
        let mu = Tensor::filled(n, 1, 2.0);
        let lv = Tensor::filled(n, 1, 4.0f64.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (z, _) = reparameterize(&mu, &lv, &mut rng);
        let mean = crate::util::mean(z.data());
        let var = crate::util::population_variance(z.data());
        assert!((mean - 2.0).abs() < 0.03, "mean {mean}");
        assert!((var - 4.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn invalid_class_code_rejected() {
        let x = logits(2, 10);
        assert!(softmax_ce_ls(&x, &[0, 3], 0.0).is_err());
        assert!(focal_loss(&x, &[0, 9], 1.0).is_err());
    }
}
