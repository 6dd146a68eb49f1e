//! Median pruning: a trial is cut when its intermediate objective falls
//! strictly below the median of all prior trials' objectives at the same
//! epoch, after a startup-trial and warm-up-epoch grace period.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianPruner {
    pub n_startup_trials: usize,
    pub n_warmup_epochs: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        MedianPruner {
            n_startup_trials: 10,
            n_warmup_epochs: 15,
        }
    }
}

/// Epoch-indexed intermediate objectives of every trial seen so far,
/// including pruned trials up to their last reported epoch.
#[derive(Debug, Clone, Default)]
pub struct PruneHistory {
    trials: Vec<BTreeMap<usize, f64>>,
}

impl PruneHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    /// Open a slot for the next trial; returns its index.
    pub fn begin_trial(&mut self) -> usize {
        self.trials.push(BTreeMap::new());
        self.trials.len() - 1
    }

    pub fn record(&mut self, trial: usize, epoch: usize, value: f64) {
        self.trials[trial].insert(epoch, value);
    }

    /// Values reported by trials with index < `trial` at `epoch`.
    fn prior_values_at(&self, trial: usize, epoch: usize) -> Vec<f64> {
        self.trials[..trial]
            .iter()
            .filter_map(|t| t.get(&epoch).copied())
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl MedianPruner {
    /// Decide on the value a trial just reported at a (0-based) epoch.
    /// `trial` is the 0-based trial index within the study.
    pub fn should_prune(
        &self,
        history: &PruneHistory,
        trial: usize,
        epoch: usize,
        value: f64,
    ) -> bool {
        if trial < self.n_startup_trials {
            return false;
        }
        if epoch < self.n_warmup_epochs {
            return false;
        }
        let mut prior = history.prior_values_at(trial, epoch);
        if prior.is_empty() {
            return false;
        }
        value < median(&mut prior)
    }
}
