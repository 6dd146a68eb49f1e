//! Hyperparameter search spaces and uniform random sampling.
//!
//! A space is an ordered list of parameter specs; conditional parameters are
//! drawn only when their parent already sampled the required value. Width
//! chains (one draw bounding the next) are handled by the model-specific
//! samplers in [`crate::hpo::drivers`].

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Result<i64> {
        match self {
            ParamValue::Int(v) => Ok(*v),
            other => Err(Error::invalid(format!("expected int, got {other}"))),
        }
    }

    pub fn as_f64(&self) -> Result<f64> {
        match self {
            ParamValue::Int(v) => Ok(*v as f64),
            ParamValue::Float(v) => Ok(*v),
            other => Err(Error::invalid(format!("expected float, got {other}"))),
        }
    }

    pub fn as_str(&self) -> Result<&str> {
        match self {
            ParamValue::Str(v) => Ok(v),
            other => Err(Error::invalid(format!("expected string, got {other}"))),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Categorical(Vec<ParamValue>),
    IntStep { lo: i64, hi: i64, step: i64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    /// Draw only when the parent parameter sampled one of these values.
    pub condition: Option<(String, Vec<ParamValue>)>,
}

impl ParamSpec {
    pub fn new(name: &str, kind: ParamKind) -> Self {
        ParamSpec {
            name: name.to_string(),
            kind,
            condition: None,
        }
    }

    pub fn when(mut self, parent: &str, values: Vec<ParamValue>) -> Self {
        self.condition = Some((parent.to_string(), values));
        self
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            ParamKind::Categorical(choices) => {
                if choices.is_empty() {
                    return Err(Error::invalid(format!("{}: empty categorical", self.name)));
                }
            }
            ParamKind::IntStep { lo, hi, step } => {
                if lo >= hi || *step <= 0 || (hi - lo) % step != 0 {
                    return Err(Error::invalid(format!(
                        "{}: bad int grid [{lo}, {hi}] step {step}",
                        self.name
                    )));
                }
            }
            ParamKind::Uniform { lo, hi } | ParamKind::LogUniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::invalid(format!(
                        "{}: bad range [{lo}, {hi}]",
                        self.name
                    )));
                }
                if matches!(self.kind, ParamKind::LogUniform { .. }) && *lo <= 0.0 {
                    return Err(Error::invalid(format!(
                        "{}: log-uniform needs lo > 0",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match &self.kind {
            ParamKind::Categorical(choices) => {
                choices[rng.random_range(0..choices.len())].clone()
            }
            ParamKind::IntStep { lo, hi, step } => {
                let n = (hi - lo) / step + 1;
                ParamValue::Int(lo + step * rng.random_range(0..n))
            }
            ParamKind::Uniform { lo, hi } => ParamValue::Float(rng.random_range(*lo..*hi)),
            ParamKind::LogUniform { lo, hi } => {
                ParamValue::Float(rng.random_range(lo.ln()..hi.ln()).exp())
            }
        }
    }

    /// True when `value` lies inside this spec's domain.
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Categorical(choices), v) => choices.contains(v),
            (ParamKind::IntStep { lo, hi, step }, ParamValue::Int(v)) => {
                v >= lo && v <= hi && (v - lo) % step == 0
            }
            (ParamKind::Uniform { lo, hi }, ParamValue::Float(v)) => v >= lo && v <= hi,
            (ParamKind::LogUniform { lo, hi }, ParamValue::Float(v)) => v >= lo && v <= hi,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

pub type Config = BTreeMap<String, ParamValue>;

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let mut seen: Vec<&str> = Vec::new();
        for p in &params {
            p.validate()?;
            if let Some((parent, _)) = &p.condition {
                if !seen.contains(&parent.as_str()) {
                    return Err(Error::invalid(format!(
                        "{}: condition references `{parent}`, which is not declared earlier",
                        p.name
                    )));
                }
            }
            seen.push(&p.name);
        }
        Ok(SearchSpace { params })
    }

    /// Independent uniform draws per spec, honoring conditions.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Config {
        let mut config = Config::new();
        for spec in &self.params {
            if let Some((parent, allowed)) = &spec.condition {
                if !config.get(parent).is_some_and(|v| allowed.contains(v)) {
                    continue;
                }
            }
            config.insert(spec.name.clone(), spec.sample(rng));
        }
        config
    }

    /// Check every present key against its spec and every conditional rule.
    pub fn contains(&self, config: &Config) -> bool {
        for spec in &self.params {
            let active = match &spec.condition {
                None => true,
                Some((parent, allowed)) => {
                    config.get(parent).is_some_and(|v| allowed.contains(v))
                }
            };
            match (active, config.get(&spec.name)) {
                (true, Some(v)) => {
                    if !spec.contains(v) {
                        return false;
                    }
                }
                (true, None) => return false,
                (false, Some(_)) => return false,
                (false, None) => {}
            }
        }
        true
    }
}
