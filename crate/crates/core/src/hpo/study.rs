//! Study execution: sequential trials with derived seeds, per-epoch
//! intermediate reporting, median pruning and JSON-lines persistence.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hpo::pruner::{MedianPruner, PruneHistory};
use crate::hpo::space::Config;
use crate::models::TrainBudget;
use crate::util::derive_seed;

/// Per-trial training budget: at most 150 epochs, early stopping after 20
/// non-improving epochs.
pub const TRIAL_BUDGET: TrainBudget = TrainBudget {
    max_epochs: 150,
    patience: 20,
};

/// Final-retraining budget: 500 epochs, patience 40, pruner disabled.
pub const FINAL_RETRAIN_BUDGET: TrainBudget = TrainBudget {
    max_epochs: 500,
    patience: 40,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub config: Config,
    pub intermediate: Vec<(usize, f64)>,
    pub status: TrialStatus,
    pub objective: f64,
    pub seed: u64,
    pub pruned_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub name: String,
    pub objective_kind: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub trials: Vec<TrialRecord>,
    pub best_trial: Option<usize>,
}

impl StudyRecord {
    pub fn best(&self) -> Option<&TrialRecord> {
        self.best_trial.map(|id| &self.trials[id])
    }

    /// One trial per line, plus a `<path>.summary.json` with the study head.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for trial in &self.trials {
            serde_json::to_writer(&mut file, trial)?;
            file.write_all(b"\n")?;
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            name: &'a str,
            objective_kind: &'a str,
            master_seed: u64,
            n_trials: usize,
            best_trial: Option<usize>,
            best_objective: Option<f64>,
        }
        let summary = Summary {
            name: &self.name,
            objective_kind: &self.objective_kind,
            master_seed: self.master_seed,
            n_trials: self.n_trials,
            best_trial: self.best_trial,
            best_objective: self.best().map(|t| t.objective),
        };
        std::fs::write(
            path.with_extension("summary.json"),
            serde_json::to_vec_pretty(&summary)?,
        )?;
        Ok(())
    }
}

/// Hands epoch values from a running trial to the pruner.
pub struct TrialContext<'a> {
    pruner: &'a MedianPruner,
    history: &'a mut PruneHistory,
    trial_index: usize,
    intermediate: Vec<(usize, f64)>,
    pruned_at: Option<usize>,
}

impl TrialContext<'_> {
    /// Record an epoch objective; true means the trial must stop now.
    pub fn report(&mut self, epoch: usize, value: f64) -> bool {
        self.history.record(self.trial_index, epoch, value);
        self.intermediate.push((epoch, value));
        if self
            .pruner
            .should_prune(self.history, self.trial_index, epoch, value)
        {
            self.pruned_at = Some(epoch);
            true
        } else {
            false
        }
    }
}

/// Outcome of one objective evaluation: the final objective value, or
/// failure. A pruned trial reports through the context and returns its last
/// value; the study downgrades it to `Pruned` status.
pub type TrialResult = std::result::Result<f64, String>;

/// Run a study: `sampler` draws a config from the study's config stream,
/// `objective` trains it, reporting per-epoch values through the context.
pub fn run_study(
    name: &str,
    objective_kind: &str,
    n_trials: usize,
    master_seed: u64,
    pruner: &MedianPruner,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> Config,
    mut objective: impl FnMut(&Config, u64, &mut TrialContext) -> TrialResult,
) -> StudyRecord {
    let mut config_rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 0xC0FFE));
    let mut history = PruneHistory::new();
    let mut trials = Vec::with_capacity(n_trials);
    let mut best: Option<(usize, f64)> = None;

    for trial_id in 0..n_trials {
        let config = sampler(&mut config_rng);
        let seed = derive_seed(master_seed, 1000 + trial_id as u64);
        let index = history.begin_trial();
        debug_assert_eq!(index, trial_id);
        let mut ctx = TrialContext {
            pruner,
            history: &mut history,
            trial_index: trial_id,
            intermediate: Vec::new(),
            pruned_at: None,
        };
        let outcome = objective(&config, seed, &mut ctx);
        let (status, objective_value) = match (&outcome, ctx.pruned_at) {
            (Err(_), _) => (TrialStatus::Failed, 0.0),
            (Ok(v), _) if !v.is_finite() => (TrialStatus::Failed, 0.0),
            (Ok(v), Some(_)) => (TrialStatus::Pruned, *v),
            (Ok(v), None) => (TrialStatus::Complete, *v),
        };
        if status == TrialStatus::Complete {
            let better = match best {
                None => true,
                Some((_, b)) => objective_value > b,
            };
            if better {
                best = Some((trial_id, objective_value));
            }
        }
        trials.push(TrialRecord {
            trial_id,
            config,
            intermediate: ctx.intermediate,
            status,
            objective: objective_value,
            seed,
            pruned_at: ctx.pruned_at,
        });
    }

    StudyRecord {
        name: name.to_string(),
        objective_kind: objective_kind.to_string(),
        master_seed,
        n_trials,
        trials,
        best_trial: best.map(|(id, _)| id),
    }
}
