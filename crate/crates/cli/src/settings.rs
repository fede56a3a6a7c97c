//! Fully resolved settings for each command. These are what a manifest
//! records and what a replay runs again.

use std::path::{Path, PathBuf};

use hain::data::SyntheticSpec;
use hain::metrics::GradientReading;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "HAIN_SEED";

/// Seed from the flag, then the environment, then zero.
pub fn seed_or_env(flag: Option<u64>) -> CliResult<u64> {
    match flag {
        Some(s) => Ok(s),
        None => env_seed().map(|s| s.unwrap_or(0)),
    }
}

pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    pub label: String,
    pub has_header: bool,
    /// Mean-impute missing cells instead of rejecting their rows.
    pub impute: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub spec: SyntheticSpec,
}

/// Architecture overrides; unset fields take the library defaults for the
/// data's width.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub embed_dim: Option<usize>,
    pub group_size: Option<usize>,
    pub key_dim: Option<usize>,
    pub reduced_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub global_window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lambda_attn: f64,
    pub lambda_sparse: f64,
    pub lambda_consist: f64,
    pub target_sparsity: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub workers: usize,
    pub staleness: usize,
    /// Unset means proportional to the feature count.
    pub offset_lr_scale: Option<f64>,
    pub scale_lr_scale: Option<f64>,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            lr_decay: 0.95,
            lambda_attn: 0.01,
            lambda_sparse: 0.01,
            lambda_consist: 0.1,
            target_sparsity: 0.1,
            temperature_start: 1.0,
            temperature_end: 0.1,
            workers: 1,
            staleness: 0,
            offset_lr_scale: None,
            scale_lr_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub out: PathBuf,
    pub data: DataSource,
    /// Held-out fraction written to `test.csv`; zero trains on everything.
    pub test_fraction: f64,
    pub standardize: bool,
    pub seed: u64,
    pub model: ModelSettings,
    pub optim: OptimSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    GradAttention,
    Gradient,
    ShapleyExact,
    ShapleySampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub data: DataSource,
    /// Zero-based data rows; all rows when absent.
    pub rows: Option<Vec<usize>>,
    pub method: MethodArg,
    /// Target class; each input's predicted class when absent.
    pub class: Option<usize>,
    pub permutations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectSettings {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    /// Rows over which gates are averaged; the baseline input otherwise.
    pub data: Option<DataSource>,
    pub top: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSettings {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub n_prototypes: usize,
    pub theta: f64,
    pub sigma: Option<f64>,
    pub kmeans_iterations: usize,
    pub refine_epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerArg {
    GradAttention,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSettings {
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub data: DataSource,
    pub interpretability: bool,
    pub explainer: ExplainerArg,
    /// Feature budget for sufficiency and comprehensiveness.
    pub k: Option<usize>,
    pub epsilon: f64,
    pub trials: usize,
    /// Rows used for the per-input interpretability metrics.
    pub explain_rows: usize,
    pub gradient: GradientReading,
    pub timing_repeats: usize,
    pub seed: u64,
}

/// Recursively overlays `patch` onto `base`.
pub fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

pub fn read_config(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_keys() {
        let mut a = json!({"optim": {"epochs": 20, "learning_rate": 0.05}, "seed": 1});
        merge(&mut a, json!({"optim": {"epochs": 3}, "out": "x"}));
        assert_eq!(
            a,
            json!({"optim": {"epochs": 3, "learning_rate": 0.05}, "seed": 1, "out": "x"})
        );
    }

    #[test]
    fn partial_optim_settings_take_defaults() {
        let o: OptimSettings = serde_json::from_value(json!({"epochs": 2})).unwrap();
        assert_eq!(o.epochs, 2);
        assert_eq!(o.batch_size, OptimSettings::default().batch_size);
    }
}
