//! Run configuration and its flat `key=value` text form.
//!
//! Keys mirror the command-line flags without the leading dashes
//! (`batch-size=128`, `xi=0.4`). Underscores are accepted in place of dashes.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::rls::RlsHyperParams;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Rls,
    Momentum,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rls" => Ok(OptimizerKind::Rls),
            "momentum" => Ok(OptimizerKind::Momentum),
            _ => Err(Error::Config(format!(
                "unknown optimizer {s:?} (expected rls or momentum)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Rls => "rls",
            OptimizerKind::Momentum => "momentum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// 784-1024-512-10 fully-connected network.
    FnnMnist,
    /// Five conv layers, three pools, two fc layers on 3×32×32 input.
    MiniVgg,
}

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fnn-mnist" => Ok(Architecture::FnnMnist),
            "minivgg" => Ok(Architecture::MiniVgg),
            _ => Err(Error::Config(format!(
                "unknown architecture {s:?} (expected fnn-mnist or minivgg)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::FnnMnist => "fnn-mnist",
            Architecture::MiniVgg => "minivgg",
        }
    }

    pub fn spec(self) -> NetworkSpec {
        match self {
            Architecture::FnnMnist => NetworkSpec::fnn_mnist(),
            Architecture::MiniVgg => NetworkSpec::minivgg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumParams {
    pub lr: Float,
    pub beta: Float,
    pub weight_decay: Float,
}

impl Default for MomentumParams {
    fn default() -> Self {
        MomentumParams {
            lr: 0.1,
            beta: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub arch: Architecture,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub rls: RlsHyperParams,
    /// One value broadcast to every layer, or one per learnable layer.
    pub eta: Vec<Float>,
    pub xi: Float,
    /// Epochs of plain training before the first prune check. `q ≥ epochs`
    /// disables pruning.
    pub q: usize,
    pub seed: u64,
    pub momentum: MomentumParams,
    /// Gate pruning on the epoch-mean training loss instead of the last minibatch loss.
    pub epoch_mean_trigger: bool,
    /// Use only the first `n` training / test samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub metrics_out: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data"),
            arch: Architecture::FnnMnist,
            optimizer: OptimizerKind::Rls,
            epochs: 200,
            batch_size: 128,
            rls: RlsHyperParams::default(),
            eta: vec![1.0],
            xi: 0.4,
            q: 30,
            seed: 0,
            momentum: MomentumParams::default(),
            epoch_mean_trigger: false,
            train_limit: None,
            test_limit: None,
            metrics_out: None,
            checkpoint_out: None,
            resume: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_limit(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    match value.trim() {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    }
}

/// Parses `1` or `1,0.5,0.5`.
pub fn parse_eta(value: &str) -> Result<Vec<Float>> {
    let eta = value
        .split(',')
        .map(|v| parse_num::<Float>("eta", v))
        .collect::<Result<Vec<_>>>()?;
    if eta.is_empty() {
        return Err(Error::Config("eta: empty list".into()));
    }
    Ok(eta)
}

impl TrainConfig {
    /// Sets one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "dataset" => self.dataset = DatasetKind::parse(value.trim())?,
            "data-dir" => self.data_dir = PathBuf::from(value.trim()),
            "arch" => self.arch = Architecture::parse(value.trim())?,
            "optimizer" => self.optimizer = OptimizerKind::parse(value.trim())?,
            "epochs" => self.epochs = parse_num(k, value)?,
            "batch-size" => self.batch_size = parse_num(k, value)?,
            "lambda" => self.rls.lambda = parse_num(k, value)?,
            "k" => self.rls.k = parse_num(k, value)?,
            "alpha" => self.rls.alpha = parse_num(k, value)?,
            "delta" => self.rls.delta = parse_num(k, value)?,
            "eps-h" => self.rls.eps_h = parse_num(k, value)?,
            "eta" => self.eta = parse_eta(value)?,
            "xi" => self.xi = parse_num(k, value)?,
            "q" => self.q = parse_num(k, value)?,
            "seed" => self.seed = parse_num(k, value)?,
            "momentum-lr" => self.momentum.lr = parse_num(k, value)?,
            "momentum-beta" => self.momentum.beta = parse_num(k, value)?,
            "weight-decay" => self.momentum.weight_decay = parse_num(k, value)?,
            "epoch-mean-trigger" => self.epoch_mean_trigger = parse_bool(k, value)?,
            "train-limit" => self.train_limit = parse_limit(k, value)?,
            "test-limit" => self.test_limit = parse_limit(k, value)?,
            "metrics-out" => self.metrics_out = parse_path(value),
            "checkpoint-out" => self.checkpoint_out = parse_path(value),
            "resume" => self.resume = parse_path(value),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key, in a form [`TrainConfig::from_text`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let limit = |l: Option<usize>| l.map_or("none".to_string(), |v| v.to_string());
        let eta: Vec<String> = self.eta.iter().map(|v| v.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "dataset={}", self.dataset.name());
        let _ = writeln!(s, "data-dir={}", self.data_dir.display());
        let _ = writeln!(s, "arch={}", self.arch.name());
        let _ = writeln!(s, "optimizer={}", self.optimizer.name());
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch-size={}", self.batch_size);
        let _ = writeln!(s, "lambda={}", self.rls.lambda);
        let _ = writeln!(s, "k={}", self.rls.k);
        let _ = writeln!(s, "alpha={}", self.rls.alpha);
        let _ = writeln!(s, "delta={}", self.rls.delta);
        let _ = writeln!(s, "eps-h={}", self.rls.eps_h);
        let _ = writeln!(s, "eta={}", eta.join(","));
        let _ = writeln!(s, "xi={}", self.xi);
        let _ = writeln!(s, "q={}", self.q);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "momentum-lr={}", self.momentum.lr);
        let _ = writeln!(s, "momentum-beta={}", self.momentum.beta);
        let _ = writeln!(s, "weight-decay={}", self.momentum.weight_decay);
        let _ = writeln!(s, "epoch-mean-trigger={}", self.epoch_mean_trigger);
        let _ = writeln!(s, "train-limit={}", limit(self.train_limit));
        let _ = writeln!(s, "test-limit={}", limit(self.test_limit));
        let _ = writeln!(s, "metrics-out={}", path(&self.metrics_out));
        let _ = writeln!(s, "checkpoint-out={}", path(&self.checkpoint_out));
        let _ = writeln!(s, "resume={}", path(&self.resume));
        s
    }

    /// Rejects out-of-range values before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.rls.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if self.eta.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("every eta must be positive".into()));
        }
        let layers = self.arch.spec().learnable_positions().len();
        if self.eta.len() != 1 && self.eta.len() != layers {
            return Err(Error::Config(format!(
                "eta has {} entries; expected 1 or {layers}",
                self.eta.len()
            )));
        }
        let m = &self.momentum;
        if !(m.lr > 0.0) || !(0.0..1.0).contains(&m.beta) || !(m.weight_decay >= 0.0) {
            return Err(Error::Config(
                "momentum needs lr > 0, beta in [0, 1) and weight-decay >= 0".into(),
            ));
        }
        let expected_input = match self.dataset {
            DatasetKind::Mnist => Architecture::FnnMnist,
            DatasetKind::Cifar10 | DatasetKind::Cifar10Format => Architecture::MiniVgg,
        };
        if self.arch != expected_input {
            return Err(Error::Config(format!(
                "architecture {} does not take {} input",
                self.arch.name(),
                self.dataset.name()
            )));
        }
        Ok(())
    }

    /// Gradient scale of learnable layer `l`.
    pub fn eta_for(&self, l: usize) -> Float {
        if self.eta.len() == 1 {
            self.eta[0]
        } else {
            self.eta[l]
        }
    }

    /// Whether the schedule can ever prune.
    pub fn prunes(&self) -> bool {
        self.optimizer == OptimizerKind::Rls && self.q < self.epochs
    }
}
