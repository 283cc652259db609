//! Run configuration: flat `key = value` text mapped onto [`RunSpec`].
//!
//! Recognized keys (all optional unless noted; defaults in parentheses):
//!
//! | key                | meaning                                             |
//! |--------------------|-----------------------------------------------------|
//! | `dataset.kind`     | `synthetic-desk` (default) or `mmfit`               |
//! | `dataset.path`     | session directory — required when kind is `mmfit`   |
//! | `window.size_s`    | window length in seconds (3.0)                      |
//! | `window.stride_s`  | window stride in seconds (1.5)                      |
//! | `loss.alpha`       | activity-loss weight (1.0)                          |
//! | `loss.beta`        | similarity-loss weight (1.0)                        |
//! | `train.lr`         | Adam learning rate (1e-3)                           |
//! | `train.batch_size` | minibatch size (64)                                 |
//! | `train.max_epochs` | epoch cap (100)                                     |
//! | `train.patience`   | early-stop patience in epochs (25)                  |
//! | `train.seeds`      | comma-separated seed list (0,1,2,3,4)               |
//! | `model.variant`    | `full` (default) or `no-block5`                     |
//! | `method`           | `joint` (default), `baseline-real`, `regression-first` |
//!
//! Any other key is a hard error, so a typo like `train.lrr` cannot silently
//! fall back to a default.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::kv::{parse_kv, parse_list, parse_value};
use crate::models::RegressorVariant;
use crate::training::{Method, TrainConfig};

/// Where the experiment's windows come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    /// The built-in kinematic synthetic dataset at desk scale.
    SyntheticDesk,
    /// A recorded session directory read through its layout descriptor.
    Mmfit { path: PathBuf },
}

/// A full experiment description: data source, windowing, and training.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub dataset: DatasetSpec,
    pub window_size_s: f64,
    pub window_stride_s: f64,
    pub train: TrainConfig,
}

pub fn load_config(path: &Path) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunSpec> {
    const WHAT: &str = "config";
    let mut kv = parse_kv(text, WHAT)?;
    let defaults = TrainConfig::default();

    let dataset = match kv.take("dataset.kind").unwrap_or("synthetic-desk") {
        "synthetic-desk" => DatasetSpec::SyntheticDesk,
        "mmfit" => {
            let path = kv.require("dataset.path", WHAT)?;
            DatasetSpec::Mmfit { path: PathBuf::from(path) }
        }
        other => {
            return Err(Error::Config(format!(
                "config: dataset.kind {other:?} is not synthetic-desk or mmfit"
            )))
        }
    };
    if matches!(dataset, DatasetSpec::SyntheticDesk) {
        if kv.take("dataset.path").is_some() {
            return Err(Error::Config(
                "config: dataset.path only applies when dataset.kind = mmfit".into(),
            ));
        }
    }

    let mut take_num = |key: &str, default: f64| -> Result<f64> {
        match kv.take(key) {
            Some(v) => parse_value(v, key, WHAT),
            None => Ok(default),
        }
    };
    let window_size_s = take_num("window.size_s", 3.0)?;
    let window_stride_s = take_num("window.stride_s", 1.5)?;
    let alpha = take_num("loss.alpha", defaults.alpha)?;
    let beta = take_num("loss.beta", defaults.beta)?;
    let lr = take_num("train.lr", defaults.lr)?;
    if !(window_size_s > 0.0) || !(window_stride_s > 0.0) {
        return Err(Error::Config(format!(
            "config: window.size_s and window.stride_s must be positive, got {window_size_s} / {window_stride_s}"
        )));
    }

    let mut take_int = |key: &str, default: usize| -> Result<usize> {
        match kv.take(key) {
            Some(v) => parse_value(v, key, WHAT),
            None => Ok(default),
        }
    };
    let batch_size = take_int("train.batch_size", defaults.batch_size)?;
    let max_epochs = take_int("train.max_epochs", defaults.max_epochs)?;
    let patience = take_int("train.patience", defaults.patience)?;

    let seeds = match kv.take("train.seeds") {
        Some(v) => parse_list(v, "train.seeds", WHAT)?,
        None => defaults.seeds.clone(),
    };
    let variant = RegressorVariant::parse(kv.take("model.variant").unwrap_or("full"))?;
    let method = match kv.take("method") {
        Some(v) => Method::parse(v)?,
        None => defaults.method,
    };

    kv.reject_unknown(WHAT)?;

    let train = TrainConfig {
        method,
        lr,
        max_epochs,
        patience,
        batch_size,
        seeds,
        alpha,
        beta,
        uniform_class_weights: defaults.uniform_class_weights,
        variant,
    };
    train.validate()?;
    Ok(RunSpec {
        dataset,
        window_size_s,
        window_stride_s,
        train,
    })
}
