//! Minimal dense-network numerical core: f64 tensors, layers with
//! reverse-mode gradients, losses, optimizers, schedules and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod tensor;

pub use layers::{ActKind, Activation, BatchNorm, Dense, Dropout, Mode};
pub use loss::{focal_loss, gaussian_kl, mse, reparameterize, softmax_ce_ls, LossOutput};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use schedule::{Schedule, ScheduleKind};
pub use tensor::Tensor;
