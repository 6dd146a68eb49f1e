//! Central-difference gradient verification for every layer and loss.
//!
//! Each check runs a number of random small instances, compares analytic
//! gradients against (f(x+h) - f(x-h)) / 2h, and reports the worst relative
//! error. The same suite backs the `gradcheck` CLI verb and the test suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{ActKind, Activation, BatchNorm, Dense, Dropout, Mode};
use crate::nn::loss;
use crate::nn::tensor::Tensor;
use crate::util::derive_seed;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Central-difference gradient of a scalar function at `point`.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut theta = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients. Coordinates
/// where `skip` returns true (e.g. activation kinks) are ignored.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], skip: &dyn Fn(usize) -> bool) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .filter(|(i, _)| !skip(*i))
        .map(|(_, (a, n))| (a - n).abs() / (a.abs() + n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn rng_for(seed: u64, instance: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, instance as u64))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale).collect()
}

/// Dense layer: gradients w.r.t. W, b and the input.
pub fn check_dense(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = rng.random_range(2..6);
        let d_in = rng.random_range(3..9);
        let d_out = rng.random_range(2..7);
        let w0 = random_vec(&mut rng, d_out * d_in, 1.0);
        let b0 = random_vec(&mut rng, d_out, 1.0);
        let x0 = random_vec(&mut rng, b * d_in, 1.0);
        let proj = random_vec(&mut rng, b * d_out, 1.0);

        let eval = |theta: &[f64]| -> f64 {
            let (w, rest) = theta.split_at(d_out * d_in);
            let (bias, x) = rest.split_at(d_out);
            let mut layer = Dense::from_parts(
                Tensor::from_vec(d_out, d_in, w.to_vec()).unwrap(),
                Some(Tensor::from_vec(1, d_out, bias.to_vec()).unwrap()),
            );
            let y = layer.forward(&Tensor::from_vec(b, d_in, x.to_vec()).unwrap());
            y.data().iter().zip(&proj).map(|(v, p)| v * p).sum()
        };

        // Analytic gradients via one forward + backward.
        let mut layer = Dense::from_parts(
            Tensor::from_vec(d_out, d_in, w0.clone()).unwrap().with_grad(),
            Some(Tensor::from_vec(1, d_out, b0.clone()).unwrap().with_grad()),
        );
        let x = Tensor::from_vec(b, d_in, x0.clone()).unwrap();
        layer.forward(&x);
        let dy = Tensor::from_vec(b, d_out, proj.clone()).unwrap();
        let dx = layer.backward(&dy);
        let mut analytic = Vec::new();
        analytic.extend_from_slice(layer.w.grad());
        analytic.extend_from_slice(layer.b.as_ref().unwrap().grad());
        analytic.extend_from_slice(dx.data());

        let mut point = w0;
        point.extend(b0);
        point.extend(x0);
        let mut f = eval;
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "dense".to_string(),
        max_rel_err: worst,
        tolerance: 1e-6,
        instances,
    }
}

/// Batch norm alone in train mode: gradients w.r.t. gamma, beta and input.
pub fn check_batchnorm(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = rng.random_range(4..9);
        let d = rng.random_range(2..6);
        let g0 = random_vec(&mut rng, d, 1.0);
        let b0 = random_vec(&mut rng, d, 1.0);
        let x0 = random_vec(&mut rng, b * d, 1.5);
        let proj = random_vec(&mut rng, b * d, 1.0);

        let eval = |theta: &[f64]| -> f64 {
            let (g, rest) = theta.split_at(d);
            let (beta, x) = rest.split_at(d);
            let mut bn = BatchNorm::new(d);
            bn.gamma = Tensor::from_vec(1, d, g.to_vec()).unwrap();
            bn.beta = Tensor::from_vec(1, d, beta.to_vec()).unwrap();
            let y = bn
                .forward(&Tensor::from_vec(b, d, x.to_vec()).unwrap(), Mode::Train)
                .unwrap();
            y.data().iter().zip(&proj).map(|(v, p)| v * p).sum()
        };

        let mut bn = BatchNorm::new(d);
        bn.gamma = Tensor::from_vec(1, d, g0.clone()).unwrap().with_grad();
        bn.beta = Tensor::from_vec(1, d, b0.clone()).unwrap().with_grad();
        let x = Tensor::from_vec(b, d, x0.clone()).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        let dy = Tensor::from_vec(b, d, proj.clone()).unwrap();
        let dx = bn.backward(&dy);
        let mut analytic = Vec::new();
        analytic.extend_from_slice(bn.gamma.grad());
        analytic.extend_from_slice(bn.beta.grad());
        analytic.extend_from_slice(dx.data());

        let mut point = g0;
        point.extend(b0);
        point.extend(x0);
        let mut f = eval;
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "batchnorm".to_string(),
        max_rel_err: worst,
        tolerance: 1e-5,
        instances,
    }
}

/// Dense -> BN -> activation -> dropout(p=0) composition in train mode.
pub fn check_block_composition(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let kind = ActKind::ALL[inst % ActKind::ALL.len()];
        let b = rng.random_range(4..8);
        let d_in = rng.random_range(3..6);
        let d_out = rng.random_range(2..5);
        let w0 = random_vec(&mut rng, d_out * d_in, 1.0);
        let x0 = random_vec(&mut rng, b * d_in, 1.0);
        let proj = random_vec(&mut rng, b * d_out, 1.0);

        let run = |w: &[f64], x: &[f64], want_grads: bool| -> (f64, Vec<f64>) {
            let mut dense = Dense::from_parts(
                Tensor::from_vec(d_out, d_in, w.to_vec()).unwrap().with_grad(),
                Some(Tensor::zeros(1, d_out).with_grad()),
            );
            let mut bn = BatchNorm::new(d_out);
            bn.gamma = bn.gamma.clone().with_grad();
            bn.beta = bn.beta.clone().with_grad();
            let mut act = Activation::new(kind);
            let mut drop = Dropout::new(0.0, 1).unwrap();
            let xt = Tensor::from_vec(b, d_in, x.to_vec()).unwrap();
            let y = drop.forward(
                &act.forward(&bn.forward(&dense.forward(&xt), Mode::Train).unwrap()),
                Mode::Train,
            );
            let value = y.data().iter().zip(&proj).map(|(v, p)| v * p).sum();
            if !want_grads {
                return (value, Vec::new());
            }
            let dy = Tensor::from_vec(b, d_out, proj.clone()).unwrap();
            let dx = dense.backward(&bn.backward(&act.backward(&drop.backward(&dy))));
            let mut analytic = Vec::new();
            analytic.extend_from_slice(dense.w.grad());
            analytic.extend_from_slice(dx.data());
            (value, analytic)
        };

        let (_, analytic) = run(&w0, &x0, true);
        let mut point = w0.clone();
        point.extend(x0.clone());
        let mut f = |theta: &[f64]| {
            let (w, x) = theta.split_at(d_out * d_in);
            run(w, x, false).0
        };
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "dense+bn+act composition".to_string(),
        max_rel_err: worst,
        tolerance: 1e-4,
        instances,
    }
}

/// One activation kind across random points, skipping coordinates near the
/// origin kink for the piecewise-linear kinds.
pub fn check_activation(kind: ActKind, instances: usize, seed: u64) -> CheckResult {
    let kinked = matches!(kind, ActKind::Relu | ActKind::LeakyRelu | ActKind::Elu);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let n = 50;
        let x0 = random_vec(&mut rng, n, 3.0);
        let proj = random_vec(&mut rng, n, 1.0);

        let analytic: Vec<f64> = x0
            .iter()
            .zip(&proj)
            .map(|(x, p)| kind.derivative(*x) * p)
            .collect();
        let mut f = |theta: &[f64]| -> f64 {
            theta
                .iter()
                .zip(&proj)
                .map(|(x, p)| kind.apply(*x) * p)
                .sum()
        };
        let numeric = numeric_gradient(&mut f, &x0, FD_STEP);
        let x_near_kink = x0.clone();
        let skip = move |i: usize| kinked && x_near_kink[i].abs() < 1e-4;
        worst = worst.max(max_rel_error(&analytic, &numeric, &skip));
    }
    CheckResult {
        name: format!("activation {}", kind.name()),
        max_rel_err: worst,
        tolerance: 1e-6,
        instances,
    }
}

/// Dropout: eval and p=0 paths are exact identities; the train-mode path is
/// linear in x under a seed-fixed mask.
pub fn check_dropout(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let n = 40;
        let x0 = random_vec(&mut rng, n, 1.0);
        let proj = random_vec(&mut rng, n, 1.0);
        let mask_seed = derive_seed(seed, 7000 + inst as u64);

        // Analytic via a layer with the same seed.
        let mut layer = Dropout::new(0.5, mask_seed).unwrap();
        let x = Tensor::from_vec(1, n, x0.clone()).unwrap();
        layer.forward(&x, Mode::Train);
        let dy = Tensor::from_vec(1, n, proj.clone()).unwrap();
        let analytic = layer.backward(&dy);

        let mut f = |theta: &[f64]| -> f64 {
            let xt = Tensor::from_vec(1, n, theta.to_vec()).unwrap();
            let y = crate::nn::layers::dropout(&xt, 0.5, Mode::Train, mask_seed).unwrap();
            y.data().iter().zip(&proj).map(|(v, p)| v * p).sum()
        };
        let numeric = numeric_gradient(&mut f, &x0, FD_STEP);
        worst = worst.max(max_rel_error(analytic.data(), &numeric, &|_| false));
    }
    CheckResult {
        name: "dropout (fixed mask)".to_string(),
        max_rel_err: worst,
        tolerance: 1e-6,
        instances,
    }
}

fn check_classification_loss(
    name: &str,
    instances: usize,
    seed: u64,
    tolerance: f64,
    loss_fn: &dyn Fn(&Tensor, &[u8]) -> loss::LossOutput,
) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = rng.random_range(2..8);
        let z0 = random_vec(&mut rng, b * 3, 2.0);
        let targets: Vec<u8> = (0..b).map(|_| rng.random_range(0..3) as u8).collect();

        let out = loss_fn(&Tensor::from_vec(b, 3, z0.clone()).unwrap(), &targets);
        let mut f = |theta: &[f64]| -> f64 {
            loss_fn(&Tensor::from_vec(b, 3, theta.to_vec()).unwrap(), &targets).value
        };
        let numeric = numeric_gradient(&mut f, &z0, FD_STEP);
        worst = worst.max(max_rel_error(out.grad.data(), &numeric, &|_| false));
    }
    CheckResult {
        name: name.to_string(),
        max_rel_err: worst,
        tolerance,
        instances,
    }
}

pub fn check_ce_ls(instances: usize, seed: u64) -> CheckResult {
    check_classification_loss("loss ce+ls", instances, seed, 1e-7, &|z, t| {
        loss::softmax_ce_ls(z, t, 0.1).unwrap()
    })
}

pub fn check_focal(instances: usize, seed: u64) -> CheckResult {
    check_classification_loss("loss focal", instances, seed, 1e-6, &|z, t| {
        loss::focal_loss(z, t, 2.0).unwrap()
    })
}

pub fn check_mse(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = rng.random_range(2..6);
        let d = rng.random_range(2..9);
        let x = random_vec(&mut rng, b * d, 1.0);
        let xp0 = random_vec(&mut rng, b * d, 1.0);
        let xt = Tensor::from_vec(b, d, x.clone()).unwrap();

        let out = loss::mse(&xt, &Tensor::from_vec(b, d, xp0.clone()).unwrap()).unwrap();
        let mut f = |theta: &[f64]| -> f64 {
            loss::mse(&xt, &Tensor::from_vec(b, d, theta.to_vec()).unwrap())
                .unwrap()
                .value
        };
        let numeric = numeric_gradient(&mut f, &xp0, FD_STEP);
        worst = worst.max(max_rel_error(out.grad.data(), &numeric, &|_| false));
    }
    CheckResult {
        name: "loss mse".to_string(),
        max_rel_err: worst,
        tolerance: 1e-8,
        instances,
    }
}

pub fn check_kl(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = rng.random_range(2..6);
        let d = rng.random_range(2..6);
        let mu0 = random_vec(&mut rng, b * d, 1.5);
        let lv0 = random_vec(&mut rng, b * d, 1.5);

        let out = loss::gaussian_kl(
            &Tensor::from_vec(b, d, mu0.clone()).unwrap(),
            &Tensor::from_vec(b, d, lv0.clone()).unwrap(),
        )
        .unwrap();
        let mut analytic = out.grad_mu.data().to_vec();
        analytic.extend_from_slice(out.grad_logvar.data());

        let mut point = mu0;
        point.extend(lv0);
        let mut f = |theta: &[f64]| -> f64 {
            let (mu, lv) = theta.split_at(b * d);
            loss::gaussian_kl(
                &Tensor::from_vec(b, d, mu.to_vec()).unwrap(),
                &Tensor::from_vec(b, d, lv.to_vec()).unwrap(),
            )
            .unwrap()
            .value
        };
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "loss kl".to_string(),
        max_rel_err: worst,
        tolerance: 1e-7,
        instances,
    }
}

/// Reparameterization with frozen noise: dz/dmu = 1, dz/dlogvar = eps*sigma/2.
pub fn check_reparameterize(instances: usize, seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng_for(seed, inst);
        let b = 3;
        let d = 4;
        let mu0 = random_vec(&mut rng, b * d, 1.0);
        let lv0 = random_vec(&mut rng, b * d, 1.0);
        let eps = Tensor::from_vec(b, d, random_vec(&mut rng, b * d, 1.0)).unwrap();
        let proj = random_vec(&mut rng, b * d, 1.0);

        let mut analytic: Vec<f64> = proj.clone(); // dz/dmu = identity
        for (i, p) in proj.iter().enumerate() {
            let sigma = (0.5 * lv0[i]).exp();
            analytic.push(p * 0.5 * eps.data()[i] * sigma);
        }

        let mut point = mu0.clone();
        point.extend(lv0.clone());
        let mut f = |theta: &[f64]| -> f64 {
            let (mu, lv) = theta.split_at(b * d);
            let z = loss::reparameterize_with_eps(
                &Tensor::from_vec(b, d, mu.to_vec()).unwrap(),
                &Tensor::from_vec(b, d, lv.to_vec()).unwrap(),
                &eps,
            );
            z.data().iter().zip(&proj).map(|(v, p)| v * p).sum()
        };
        let numeric = numeric_gradient(&mut f, &point, FD_STEP);
        worst = worst.max(max_rel_error(&analytic, &numeric, &|_| false));
    }
    CheckResult {
        name: "reparameterize (frozen eps)".to_string(),
        max_rel_err: worst,
        tolerance: 1e-6,
        instances,
    }
}

/// The full layer/loss suite at `instances` random instances per check.
pub fn run_all(instances: usize, seed: u64) -> Vec<CheckResult> {
    let mut results = vec![
        check_dense(instances, derive_seed(seed, 1)),
        check_batchnorm(instances, derive_seed(seed, 2)),
        check_block_composition(instances, derive_seed(seed, 3)),
        check_dropout(instances, derive_seed(seed, 4)),
    ];
    for (k, kind) in ActKind::ALL.into_iter().enumerate() {
        results.push(check_activation(kind, instances, derive_seed(seed, 10 + k as u64)));
    }
    results.extend([
        check_ce_ls(instances, derive_seed(seed, 20)),
        check_focal(instances, derive_seed(seed, 21)),
        check_mse(instances, derive_seed(seed, 22)),
        check_kl(instances, derive_seed(seed, 23)),
        check_reparameterize(instances, derive_seed(seed, 24)),
    ]);
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_at_20_instances() {
        for result in run_all(20, 42) {
            assert!(
                result.passed(),
                "{}: max rel err {} >= tol {}",
                result.name,
                result.max_rel_err,
                result.tolerance
            );
        }
    }
}
