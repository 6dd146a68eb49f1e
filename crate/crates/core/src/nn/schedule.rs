//! Learning-rate schedules. All schedules express themselves as a multiplier
//! on the optimizer's base learning rate.
//!
//! The training loop queries [`Schedule::multiplier_for_epoch`] at the start
//! of each epoch and feeds the validation metric to [`Schedule::observe`]
//! after evaluating it; [`Schedule::step`] combines both for callers that
//! drive the schedule with one call per epoch.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    /// Halve the lr when the validation metric fails to improve for more
    /// than `patience` consecutive epochs.
    Plateau { patience: usize },
    Cosine,
    /// Linear ramp over `warmup` epochs, then cosine decay.
    WarmupCosine { warmup: usize },
    /// Ramp from lr/25 to lr over the first 30% of the budget, then cosine
    /// back down to lr/25.
    OneCycle,
}

pub const PLATEAU_FACTOR: f64 = 0.5;
const ONE_CYCLE_FLOOR: f64 = 1.0 / 25.0;
const ONE_CYCLE_RAMP_FRACTION: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub max_epochs: usize,
    best: f64,
    bad_epochs: usize,
    plateau_mult: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, max_epochs: usize) -> Self {
        Schedule {
            kind,
            max_epochs: max_epochs.max(1),
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
            plateau_mult: 1.0,
        }
    }

    /// Multiplier in effect for the given (0-based) epoch.
    pub fn multiplier_for_epoch(&self, epoch: usize) -> f64 {
        let e_max = self.max_epochs as f64;
        match self.kind {
            ScheduleKind::Plateau { .. } => self.plateau_mult,
            ScheduleKind::Cosine => {
                let e = (epoch as f64).min(e_max);
                0.5 * (1.0 + (std::f64::consts::PI * e / e_max).cos())
            }
            ScheduleKind::WarmupCosine { warmup } => {
                if warmup > 0 && epoch < warmup {
                    (epoch + 1) as f64 / warmup as f64
                } else {
                    let span = (self.max_epochs.saturating_sub(warmup)).max(1) as f64;
                    let e = ((epoch - warmup) as f64).min(span);
                    0.5 * (1.0 + (std::f64::consts::PI * e / span).cos())
                }
            }
            ScheduleKind::OneCycle => {
                let ramp = ((e_max * ONE_CYCLE_RAMP_FRACTION).ceil() as usize).max(1);
                if epoch <= ramp {
                    ONE_CYCLE_FLOOR + (1.0 - ONE_CYCLE_FLOOR) * (epoch as f64 / ramp as f64)
                } else {
                    let span = (self.max_epochs - ramp).max(1) as f64;
                    let e = ((epoch - ramp) as f64).min(span);
                    let cos = 0.5 * (1.0 + (std::f64::consts::PI * e / span).cos());
                    ONE_CYCLE_FLOOR + (1.0 - ONE_CYCLE_FLOOR) * cos
                }
            }
        }
    }

    /// Report the epoch's validation metric (higher is better). Only the
    /// plateau schedule reacts.
    pub fn observe(&mut self, val_metric: f64) {
        if let ScheduleKind::Plateau { patience } = self.kind {
            if val_metric > self.best {
                self.best = val_metric;
                self.bad_epochs = 0;
            } else {
                self.bad_epochs += 1;
                if self.bad_epochs > patience {
                    self.plateau_mult *= PLATEAU_FACTOR;
                    self.bad_epochs = 0;
                }
            }
        }
    }

    /// Observe the metric for this epoch, then return the multiplier.
    pub fn step(&mut self, epoch: usize, val_metric: f64) -> f64 {
        self.observe(val_metric);
        self.multiplier_for_epoch(epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let s = Schedule::new(ScheduleKind::Cosine, 100);
        assert_eq!(s.multiplier_for_epoch(0), 1.0);
        assert!(s.multiplier_for_epoch(100).abs() < 1e-15);
        assert!((s.multiplier_for_epoch(50) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plateau_constant_under_improvement() {
        let mut s = Schedule::new(ScheduleKind::Plateau { patience: 10 }, 100);
        for e in 0..50 {
            let m = s.step(e, e as f64);
            assert_eq!(m, 1.0);
        }
    }

    #[test]
    fn plateau_halves_at_epoch_11_after_best_on_flat_metric() {
        let mut s = Schedule::new(ScheduleKind::Plateau { patience: 10 }, 100);
        let mut multipliers = Vec::new();
        for e in 0..13 {
            multipliers.push(s.step(e, 0.5));
        }
        // Epoch 0 sets the best; epochs 1..=10 accumulate bad epochs within
        // patience; the 11th non-improving epoch triggers the halving.
        assert!(multipliers[..11].iter().all(|&m| m == 1.0));
        assert_eq!(multipliers[11], 0.5);
        assert_eq!(multipliers[12], 0.5);
    }

    #[test]
    fn plateau_counter_resets_after_reduction() {
        let mut s = Schedule::new(ScheduleKind::Plateau { patience: 2 }, 100);
        let mults: Vec<f64> = (0..10).map(|e| s.step(e, 1.0)).collect();
        // best at e0; bad 1,2,3 -> halve at e3; bad 1,2,3 -> halve at e6; ...
        assert_eq!(mults, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn warmup_cosine_ramps_then_decays() {
        let s = Schedule::new(ScheduleKind::WarmupCosine { warmup: 10 }, 100);
        assert!((s.multiplier_for_epoch(0) - 0.1).abs() < 1e-12);
        assert!((s.multiplier_for_epoch(4) - 0.5).abs() < 1e-12);
        assert!((s.multiplier_for_epoch(9) - 1.0).abs() < 1e-12);
        assert!((s.multiplier_for_epoch(10) - 1.0).abs() < 1e-12);
        assert!(s.multiplier_for_epoch(100) < 1e-12);
        // Monotone non-increasing after warm-up.
        let mut prev = 2.0;
        for e in 10..=100 {
            let m = s.multiplier_for_epoch(e);
            assert!(m <= prev + 1e-15);
            prev = m;
        }
    }

    #[test]
    fn one_cycle_peak_and_floor() {
        let s = Schedule::new(ScheduleKind::OneCycle, 100);
        assert!((s.multiplier_for_epoch(0) - 0.04).abs() < 1e-12);
        assert!((s.multiplier_for_epoch(30) - 1.0).abs() < 1e-12);
        assert!((s.multiplier_for_epoch(100) - 0.04).abs() < 1e-12);
        for e in 0..=100 {
            let m = s.multiplier_for_epoch(e);
            assert!(m >= 0.04 - 1e-12 && m <= 1.0 + 1e-12);
        }
    }
}
