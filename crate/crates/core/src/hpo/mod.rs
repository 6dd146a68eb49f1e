//! Hyperparameter search.
