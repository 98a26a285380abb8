//! Run configuration as flat `key=value` text.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objective::{LossWeights, MainLoss};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Completion,
    Recommendation,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completion" => Ok(Task::Completion),
            "recommendation" => Ok(Task::Recommendation),
            other => Err(Error::Config(format!(
                "task must be completion or recommendation, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Completion => "completion",
            Task::Recommendation => "recommendation",
        })
    }
}

impl FromStr for MainLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(MainLoss::Balanced),
            "ordinal" => Ok(MainLoss::Ordinal),
            other => Err(Error::Config(format!(
                "main_loss must be balanced or ordinal, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for MainLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MainLoss::Balanced => "balanced",
            MainLoss::Ordinal => "ordinal",
        })
    }
}

/// Hyperparameters of one training run. Keys in config files are the
/// field names, with `L` and `K` upper case.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Per-slot embedding width; node representations are `3d` wide.
    pub d: usize,
    /// Propagation layers.
    pub layers: usize,
    /// Hyperedges per hypergraph.
    pub k: usize,
    /// Layer-combination decay.
    pub theta: f64,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_nrr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub l_close: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Caps the anchors per contrastive side; 0 uses every node.
    pub cl_neg_samples: usize,
    pub task: Task,
    /// Enables the hypergraph (global) path.
    pub hypergraph: bool,
    pub main_loss: MainLoss,
    /// L2 weight of the recommendation loss.
    pub bpr_reg: f64,
    /// Sampled negatives per training interaction in recommendation runs.
    pub bpr_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 32,
            layers: 3,
            k: 256,
            theta: 0.5,
            lr: 1e-2,
            alpha: 0.01,
            beta: 0.01,
            lambda_nrr: 0.01,
            tau: 0.2,
            gamma: 0.2,
            l_close: 0.2,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            cl_neg_samples: 0,
            task: Task::Completion,
            hypergraph: true,
            main_loss: MainLoss::Balanced,
            bpr_reg: 1e-4,
            bpr_negatives: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda_nrr: self.lambda_nrr,
            tau: self.tau,
            gamma: self.gamma,
            l_close: self.l_close,
        }
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_value(key, value)?,
            "L" => self.layers = parse_value(key, value)?,
            "K" => self.k = parse_value(key, value)?,
            "theta" => self.theta = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "lambda_nrr" => self.lambda_nrr = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "l_close" => self.l_close = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "cl_neg_samples" => self.cl_neg_samples = parse_value(key, value)?,
            "task" => self.task = value.parse()?,
            "hypergraph" => self.hypergraph = parse_value(key, value)?,
            "main_loss" => self.main_loss = value.parse()?,
            "bpr_reg" => self.bpr_reg = parse_value(key, value)?,
            "bpr_negatives" => self.bpr_negatives = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if self.layers > 5 {
            return fail(format!("L must lie in [0, 5], got {}", self.layers));
        }
        if self.hypergraph && self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return fail(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=0.1).contains(&v) {
                return fail(format!("{name} must lie in [0, 0.1], got {v}"));
            }
        }
        self.loss_weights().validate()?;
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if !(self.bpr_reg >= 0.0 && self.bpr_reg.is_finite()) {
            return fail(format!("bpr_reg must be non-negative, got {}", self.bpr_reg));
        }
        if self.bpr_negatives == 0 {
            return fail("bpr_negatives must be at least 1".into());
        }
        Ok(())
    }

    /// Renders every field as config text that [`TrainConfig::parse`] reads
    /// back to an equal value.
    pub fn to_text(&self) -> String {
        let pairs: [(&str, String); 20] = [
            ("d", self.d.to_string()),
            ("L", self.layers.to_string()),
            ("K", self.k.to_string()),
            ("theta", self.theta.to_string()),
            ("lr", self.lr.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("lambda_nrr", self.lambda_nrr.to_string()),
            ("tau", self.tau.to_string()),
            ("gamma", self.gamma.to_string()),
            ("l_close", self.l_close.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("cl_neg_samples", self.cl_neg_samples.to_string()),
            ("task", self.task.to_string()),
            ("hypergraph", self.hypergraph.to_string()),
            ("main_loss", self.main_loss.to_string()),
            ("bpr_reg", self.bpr_reg.to_string()),
            ("bpr_negatives", self.bpr_negatives.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}
