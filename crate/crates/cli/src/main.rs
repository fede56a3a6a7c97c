//! `hain`: train, explain, select, build prototypes and evaluate.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hain::data::SyntheticSpec;
use hain::metrics::{GradientReading, DEFAULT_EPSILON};
use hain::prototypes::DEFAULT_THETA;

use error::{CliError, CliResult};
use settings::*;

#[derive(Parser)]
#[command(name = "hain", version, about = "Hierarchical attention networks for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file with one row per sample.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or zero-based index.
    #[arg(long, default_value = "label")]
    label: String,
    /// The first line is data, not a header.
    #[arg(long)]
    no_header: bool,
    /// Mean-impute missing cells instead of rejecting their rows.
    #[arg(long)]
    impute: bool,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        DataSource {
            path: self.data.clone(),
            label: self.label.clone(),
            has_header: !self.no_header,
            impute: self.impute,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted-feature synthetic benchmark as CSV.
    Synth {
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 2000)]
        features: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        informative: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, log, selection and manifest.
    Train(Box<TrainArgs>),
    /// Explain predictions for rows of a CSV.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated zero-based rows; all rows by default.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "grad-attention")]
        method: MethodArg,
        /// Class to explain; the predicted class by default.
        #[arg(long)]
        class: Option<usize>,
        /// Permutations for shapley-sampled.
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank features by mean attention and mark the selected ones.
    Select {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Average gates over these rows instead of the baseline input.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label: String,
        #[arg(long)]
        no_header: bool,
        /// Keep only the first N rows of the ranking.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build prototypes in embedding space and store them in a checkpoint copy.
    Prototypes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "count", short = 'P', default_value_t = 3)]
        n_prototypes: usize,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        /// Similarity bandwidth; median pairwise distance by default.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 100)]
        kmeans_iterations: usize,
        #[arg(long, default_value_t = 10)]
        refine_epochs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predictive metrics, ROC/PR series and optional interpretability metrics.
    Evaluate(Box<EvaluateArgs>),
    /// Run a command again from its manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; the recorded one by default.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless every output matches the recorded digest.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// CSV file with one row per sample.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    impute: bool,
    /// JSON file with any subset of the resolved settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lambda_attn: Option<f64>,
    #[arg(long)]
    lambda_sparse: Option<f64>,
    #[arg(long)]
    lambda_consist: Option<f64>,
    /// Fraction of features the selection threshold keeps.
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    staleness: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Restrict group self-attention to this band half-width.
    #[arg(long)]
    global_window: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also compute faithfulness, stability, sufficiency and comprehensiveness.
    #[arg(long)]
    interpretability: bool,
    #[arg(long, value_enum, default_value = "grad-attention")]
    explainer: ExplainerArg,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    explain_rows: usize,
    /// Correlate attention with the signed gradient rather than its magnitude.
    #[arg(long)]
    signed_gradient: bool,
    #[arg(long, default_value_t = 3)]
    timing_repeats: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Flags over config file over defaults.
fn resolve_train(a: &TrainArgs) -> CliResult<TrainSettings> {
    let mut value = serde_json::json!({
        "out": null,
        "data": {"path": null, "label": "label", "has_header": true, "impute": false},
        "test_fraction": 0.2,
        "standardize": true,
        "seed": null,
        "model": ModelSettings::default(),
        "optim": OptimSettings::default(),
    });
    if let Some(path) = &a.config {
        merge(&mut value, read_config(path)?);
    }
    let mut flags = serde_json::Map::new();
    let mut put = |path: &[&str], v: serde_json::Value| {
        let mut node = &mut flags;
        for key in &path[..path.len() - 1] {
            node = node
                .entry(key.to_string())
                .or_insert_with(|| serde_json::json!({}))
                .as_object_mut()
                .expect("flag groups are objects");
        }
        node.insert(path[path.len() - 1].to_string(), v);
    };
    use serde_json::json;
    if let Some(v) = &a.out {
        put(&["out"], json!(v));
    }
    if let Some(v) = &a.data {
        put(&["data", "path"], json!(v));
    }
    if let Some(v) = &a.label {
        put(&["data", "label"], json!(v));
    }
    if a.no_header {
        put(&["data", "has_header"], json!(false));
    }
    if a.impute {
        put(&["data", "impute"], json!(true));
    }
    if let Some(v) = a.test_fraction {
        put(&["test_fraction"], json!(v));
    }
    if a.no_standardize {
        put(&["standardize"], json!(false));
    }
    if let Some(v) = a.seed {
        put(&["seed"], json!(v));
    }
    let optim = [
        ("epochs", a.epochs.map(|v| json!(v))),
        ("batch_size", a.batch_size.map(|v| json!(v))),
        ("learning_rate", a.lr.map(|v| json!(v))),
        ("lr_decay", a.lr_decay.map(|v| json!(v))),
        ("lambda_attn", a.lambda_attn.map(|v| json!(v))),
        ("lambda_sparse", a.lambda_sparse.map(|v| json!(v))),
        ("lambda_consist", a.lambda_consist.map(|v| json!(v))),
        ("target_sparsity", a.sparsity.map(|v| json!(v))),
        ("workers", a.workers.map(|v| json!(v))),
        ("staleness", a.staleness.map(|v| json!(v))),
    ];
    for (k, v) in optim {
        if let Some(v) = v {
            put(&["optim", k], v);
        }
    }
    let model = [
        ("group_size", a.group_size),
        ("embed_dim", a.embed_dim),
        ("hidden_dim", a.hidden_dim),
        ("global_window", a.global_window),
    ];
    for (k, v) in model {
        if let Some(v) = v {
            put(&["model", k], json!(v));
        }
    }
    merge(&mut value, serde_json::Value::Object(flags));

    if value["seed"].is_null() {
        value["seed"] = json!(seed_or_env(None)?);
    }
    if value["data"]["path"].is_null() {
        return Err(CliError::Usage("train needs --data or a config with data.path".into()));
    }
    if value["out"].is_null() {
        return Err(CliError::Usage("train needs --out or a config with out".into()));
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid train settings: {e}")))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            samples,
            features,
            classes,
            informative,
            separation,
            noise,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                n_samples: samples,
                n_features: features,
                n_classes: classes,
                n_informative: informative,
                separation,
                noise,
                seed: seed_or_env(seed)?,
            };
            commands::synth(&SynthSettings { out, spec })
        }
        Command::Train(a) => commands::train(&resolve_train(&a)?),
        Command::Explain {
            checkpoint,
            data,
            rows,
            method,
            class,
            permutations,
            seed,
            out,
        } => commands::explain(&ExplainSettings {
            out,
            checkpoint,
            data: data.source(),
            rows,
            method,
            class,
            permutations,
            seed: seed_or_env(seed)?,
        }),
        Command::Select {
            checkpoint,
            data,
            label,
            no_header,
            top,
            out,
        } => commands::select(&SelectSettings {
            out,
            checkpoint,
            data: data.map(|path| DataSource {
                path,
                label,
                has_header: !no_header,
                impute: false,
            }),
            top,
        }),
        Command::Prototypes {
            checkpoint,
            data,
            n_prototypes,
            theta,
            sigma,
            kmeans_iterations,
            refine_epochs,
            seed,
            out,
        } => commands::prototypes(&PrototypeSettings {
            out,
            checkpoint,
            data: data.source(),
            n_prototypes,
            theta,
            sigma,
            kmeans_iterations,
            refine_epochs,
            seed: seed_or_env(seed)?,
        }),
        Command::Evaluate(a) => commands::evaluate(&EvaluateSettings {
            out: a.out,
            checkpoint: a.checkpoint,
            data: a.data.source(),
            interpretability: a.interpretability,
            explainer: a.explainer,
            k: a.k,
            epsilon: a.epsilon,
            trials: a.trials,
            explain_rows: a.explain_rows,
            gradient: if a.signed_gradient {
                GradientReading::Signed
            } else {
                GradientReading::Absolute
            },
            timing_repeats: a.timing_repeats,
            seed: seed_or_env(a.seed)?,
        }),
        Command::Replay { manifest, out, verify } => commands::replay(&manifest, out, verify),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
