use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hain::attribution::{
    grad_attention_explain, gradient_explain, logit_gradient, shapley_exact, shapley_sampled, Explanation, ModelGame,
};
use hain::data::{
    generate_synthetic, load_checkpoint, load_csv_with, save_checkpoint, standardize, stratified_split, write_csv,
    Checkpoint, CsvOptions, Dataset, IngestReport, MissingPolicy,
};
use hain::metrics::{
    classification_metrics, comprehensiveness, curves, explanation_timing, faithfulness_with, stability, sufficiency,
    CurvePoint, InterpretabilityMetrics, MetricsReport,
};
use hain::model::{forward, HainConfig};
use hain::prototypes::{build_prototypes, embed_all, neighborhoods, PrototypeOptions};
use hain::training::{ps_train, rank_descending, train as train_model, TemperatureSchedule, TrainConfig};
use hain::{HainError, Matrix, Rng};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::manifest::{versioned, RunManifest, MANIFEST_FILE};
use crate::settings::*;

pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn contract(msg: impl Into<String>) -> CliError {
    CliError::Run(HainError::Contract(msg.into()))
}

fn load_data(src: &DataSource) -> CliResult<(Dataset, IngestReport)> {
    let mut opts = CsvOptions::new(src.label.clone(), src.has_header);
    if src.impute {
        opts.missing = MissingPolicy::Impute;
    }
    Ok(load_csv_with(&src.path, &opts)?)
}

/// Matches a dataset to a checkpoint: same features, class labels mapped by
/// name, stored standardization applied.
fn align(data: Dataset, ckpt: &Checkpoint, has_header: bool) -> CliResult<Dataset> {
    let d = ckpt.config().n_features;
    if data.n_features() != d {
        return Err(contract(format!(
            "data has {} features, model expects {d}",
            data.n_features()
        )));
    }
    if has_header && !ckpt.feature_names.is_empty() && data.feature_names != ckpt.feature_names {
        return Err(contract("feature names differ from the ones the model was trained on"));
    }
    let mut y = Vec::with_capacity(data.y.len());
    for &c in &data.y {
        let name = &data.class_names[c];
        let idx = ckpt
            .class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| contract(format!("label {name:?} is not one of the model's classes")))?;
        y.push(idx);
    }
    let aligned = Dataset::new(data.x, y, data.feature_names, ckpt.class_names.clone())?;
    match &ckpt.standardization {
        Some(s) => Ok(aligned.with_standardization(s)?),
        None => Ok(aligned),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, body: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(&versioned(body))? + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut f = fs::File::create(path)?;
    for item in items {
        writeln!(f, "{}", serde_json::to_string(&versioned(item))?)?;
    }
    Ok(())
}

fn finish(mut manifest: RunManifest, dir: &Path, outputs: &[PathBuf]) -> CliResult<()> {
    for p in outputs {
        manifest.output(p)?;
    }
    manifest.write(dir)?;
    Ok(())
}

pub fn synth(s: &SynthSettings) -> CliResult<()> {
    create_dir(&s.out)?;
    let (data, planted) = generate_synthetic(&s.spec)?;
    let csv = s.out.join("data.csv");
    write_csv(&data, &csv, "label")?;
    let truth = s.out.join("planted.json");
    let names: Vec<&str> = planted.iter().map(|&i| data.feature_names[i].as_str()).collect();
    write_json(
        &truth,
        &serde_json::json!({ "planted": planted, "planted_names": names }),
    )?;
    let manifest = RunManifest::new("synth", s, Some(s.spec.seed))?;
    finish(manifest, &s.out, &[csv, truth])?;
    println!(
        "wrote {} samples x {} features, {} planted",
        data.n_samples(),
        data.n_features(),
        planted.len()
    );
    Ok(())
}

/// Offset-table step multiplier when unset: proportional to the width,
/// since each row's gradient is scaled by an attention weight near `1/d`.
pub fn default_offset_lr_scale(d: usize) -> f64 {
    2.5 * d as f64
}

pub fn default_scale_lr_scale(d: usize) -> f64 {
    0.25 * d as f64
}

fn model_config(m: &ModelSettings, d: usize, k: usize, seed: u64) -> HainConfig {
    let mut c = HainConfig::new(d, k);
    c.seed = seed;
    if let Some(v) = m.embed_dim {
        c.embed_dim = v;
    }
    if let Some(v) = m.group_size {
        c.group_size = v;
    }
    if let Some(v) = m.key_dim {
        c.key_dim = v;
    }
    if let Some(v) = m.reduced_dim {
        c.reduced_dim = v;
    }
    if let Some(v) = m.hidden_dim {
        c.hidden_dim = v;
    }
    c.global_window = m.global_window;
    c
}

fn train_config(o: &OptimSettings, d: usize, seed: u64) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::new(o.epochs);
    c.batch_size = o.batch_size;
    c.learning_rate = o.learning_rate;
    c.lr_decay = o.lr_decay;
    c.weights = hain::objective::LossWeights::new(o.lambda_attn, o.lambda_sparse, o.lambda_consist)?;
    c.target_sparsity = o.target_sparsity;
    c.temperature = TemperatureSchedule::geometric(o.temperature_start, o.temperature_end, o.epochs);
    c.seed = seed;
    c.workers = o.workers;
    c.max_staleness = o.staleness;
    c.offset_lr_scale = o.offset_lr_scale.unwrap_or_else(|| default_offset_lr_scale(d));
    c.scale_lr_scale = o.scale_lr_scale.unwrap_or_else(|| default_scale_lr_scale(d));
    c.validate()?;
    Ok(c)
}

pub fn train(s: &TrainSettings) -> CliResult<()> {
    if !(0.0..1.0).contains(&s.test_fraction) {
        return Err(CliError::Usage(format!(
            "test fraction {} outside [0, 1)",
            s.test_fraction
        )));
    }
    create_dir(&s.out)?;
    let mut manifest = RunManifest::new("train", s, Some(s.seed))?;
    manifest.input(&s.data.path)?;
    let (raw, report) = load_data(&s.data)?;
    if !report.rows_rejected.is_empty() {
        eprintln!(
            "warning: rejected {} rows with missing values",
            report.rows_rejected.len()
        );
    }
    let mut outputs = Vec::new();
    let (train_raw, test_raw) = if s.test_fraction > 0.0 {
        let (a, b) = stratified_split(&raw, s.test_fraction, &mut Rng::new(s.seed).derive(1))?;
        let test_path = s.out.join("test.csv");
        let label_name = if s.data.has_header {
            s.data.label.as_str()
        } else {
            "label"
        };
        write_csv(&b, &test_path, label_name)?;
        outputs.push(test_path);
        (a, Some(b))
    } else {
        (raw, None)
    };
    let train_data = if s.standardize {
        standardize(&train_raw)?
    } else {
        train_raw
    };
    let validation = match (&test_raw, &train_data.standardization) {
        (Some(t), Some(st)) => Some(t.with_standardization(st)?),
        (Some(t), None) => Some(t.clone()),
        (None, _) => None,
    };

    let d = train_data.n_features();
    let model = model_config(&s.model, d, train_data.n_classes(), s.seed);
    let cfg = train_config(&s.optim, d, s.seed)?;
    manifest.resolved = serde_json::json!({ "model": model, "train": cfg, "ingest": report });
    let result = if cfg.workers > 1 || cfg.max_staleness > 0 {
        ps_train(&train_data, validation.as_ref(), &model, &cfg)?
    } else {
        train_model(&train_data, validation.as_ref(), &model, &cfg)?
    };

    let mut ckpt = Checkpoint::new(
        result.params,
        train_data.feature_names.clone(),
        train_data.class_names.clone(),
    );
    ckpt.standardization = train_data.standardization.clone();
    ckpt.baseline = Some(train_data.feature_means());
    ckpt.selection = Some(result.selection.clone());
    ckpt.train_config = Some(cfg);
    ckpt.metadata.insert("command".into(), "train".into());
    let ckpt_path = s.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &ckpt_path)?;
    let log_path = s.out.join("train_log.jsonl");
    write_jsonl(&log_path, &result.log.records)?;
    let sel_path = s.out.join("selection.json");
    write_json(&sel_path, &result.selection)?;
    outputs.extend([ckpt_path, log_path, sel_path]);
    finish(manifest, &s.out, &outputs)?;

    if let Some(last) = result.log.records.last() {
        let val = last.val_accuracy.map_or(String::from("-"), |a| format!("{a:.4}"));
        println!(
            "trained {} epochs: loss {:.4}, validation accuracy {val}, {} features selected",
            last.epoch, last.loss_total, last.n_selected
        );
    }
    Ok(())
}

fn baseline(ckpt: &Checkpoint) -> Vec<f64> {
    ckpt.baseline
        .clone()
        .unwrap_or_else(|| vec![0.0; ckpt.config().n_features])
}

pub fn explain(s: &ExplainSettings) -> CliResult<()> {
    create_dir(&s.out)?;
    let mut manifest = RunManifest::new("explain", s, Some(s.seed))?;
    manifest.input(&s.checkpoint)?;
    manifest.input(&s.data.path)?;
    let ckpt = load_checkpoint(&s.checkpoint)?;
    let data = align(load_data(&s.data)?.0, &ckpt, s.data.has_header)?;
    let params = &ckpt.params;
    let base = baseline(&ckpt);
    let rows: Vec<usize> = s.rows.clone().unwrap_or_else(|| (0..data.n_samples()).collect());
    let root = Rng::new(s.seed);
    let mut out = Vec::with_capacity(rows.len());
    for &r in &rows {
        if r >= data.n_samples() {
            return Err(contract(format!("row {r} out of range 0..{}", data.n_samples())));
        }
        let x = data.row(r);
        let class = match s.class {
            Some(c) => c,
            None => forward(params, x)?.predicted_class(),
        };
        let mut e: Explanation = match s.method {
            MethodArg::GradAttention => grad_attention_explain(params, x, class)?,
            MethodArg::Gradient => gradient_explain(params, x, class)?,
            MethodArg::ShapleyExact => shapley_exact(&ModelGame::new(params, x, &base, class)?)?,
            MethodArg::ShapleySampled => shapley_sampled(
                &ModelGame::new(params, x, &base, class)?,
                s.permutations,
                &mut root.derive(r as u64),
            )?,
        };
        e.input_id = Some(format!("row{r}"));
        out.push(e);
    }
    let path = s.out.join("explanations.jsonl");
    write_jsonl(&path, &out)?;
    finish(manifest, &s.out, &[path])?;
    println!("wrote {} explanations", out.len());
    Ok(())
}

pub fn select(s: &SelectSettings) -> CliResult<()> {
    create_dir(&s.out)?;
    let mut manifest = RunManifest::new("select", s, None)?;
    manifest.input(&s.checkpoint)?;
    let ckpt = load_checkpoint(&s.checkpoint)?;
    let sel = ckpt
        .selection
        .as_ref()
        .ok_or_else(|| contract("checkpoint has no selection state; train it first"))?;
    let d = ckpt.config().n_features;
    let gates = match &s.data {
        Some(src) => {
            manifest.input(&src.path)?;
            let data = align(load_data(src)?.0, &ckpt, src.has_header)?;
            let mut acc = vec![0.0; d];
            for i in 0..data.n_samples() {
                for (a, g) in acc.iter_mut().zip(forward(&ckpt.params, data.row(i))?.trace.gates) {
                    *a += g;
                }
            }
            acc.iter_mut().for_each(|a| *a /= data.n_samples().max(1) as f64);
            acc
        }
        None => forward(&ckpt.params, &baseline(&ckpt))?.trace.gates,
    };
    let order = rank_descending(&sel.alpha_mean);
    let keep = s.top.unwrap_or(d).min(d);
    let path = s.out.join("ranking.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "rank",
        "feature",
        "index",
        "alpha_mean",
        "alpha_sample",
        "threshold",
        "gate",
        "selected",
    ])?;
    for (rank, &j) in order.iter().take(keep).enumerate() {
        let name = ckpt.feature_names.get(j).cloned().unwrap_or_else(|| j.to_string());
        w.write_record([
            (rank + 1).to_string(),
            name,
            j.to_string(),
            format!("{:?}", sel.alpha_mean[j]),
            format!("{:?}", sel.alpha_snapshot[j]),
            format!("{:?}", sel.threshold),
            format!("{:?}", gates[j]),
            (sel.alpha_snapshot[j] > sel.threshold).to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    finish(manifest, &s.out, &[path])?;
    println!("ranked {d} features, {} selected", sel.selected.len());
    Ok(())
}

pub fn prototypes(s: &PrototypeSettings) -> CliResult<()> {
    create_dir(&s.out)?;
    let mut manifest = RunManifest::new("prototypes", s, Some(s.seed))?;
    manifest.input(&s.checkpoint)?;
    manifest.input(&s.data.path)?;
    let mut ckpt = load_checkpoint(&s.checkpoint)?;
    let data = align(load_data(&s.data)?.0, &ckpt, s.data.has_header)?;
    let opts = PrototypeOptions {
        n_prototypes: s.n_prototypes,
        theta: s.theta,
        sigma: s.sigma,
        kmeans_iterations: s.kmeans_iterations,
        refine_epochs: s.refine_epochs,
        seed: s.seed,
    };
    let set = build_prototypes(&ckpt.params, &data, &opts)?;
    let points = embed_all(&ckpt.params, &data)?;
    let sizes: Vec<usize> = neighborhoods(&points, &set).iter().map(Vec::len).collect();
    if sizes.iter().all(|&n| n == 0) {
        eprintln!(
            "warning: every neighborhood is empty at theta = {}; prototypes are the k-means centroids",
            s.theta
        );
    }
    let summary = s.out.join("prototypes.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["prototype", "neighborhood_size", "majority_class"])?;
    let labels = set.labels.clone().unwrap_or_default();
    for (j, n) in sizes.iter().enumerate() {
        let class = labels
            .get(j)
            .copied()
            .flatten()
            .map(|c| ckpt.class_names[c].clone())
            .unwrap_or_default();
        w.write_record([j.to_string(), n.to_string(), class])?;
    }
    w.flush()?;
    drop(w);
    ckpt.prototypes = Some(set);
    ckpt.metadata.insert("command".into(), "prototypes".into());
    let ckpt_path = s.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &ckpt_path)?;
    finish(manifest, &s.out, &[ckpt_path, summary])?;
    println!(
        "built {} prototypes, sigma {:.4}",
        sizes.len(),
        ckpt.prototypes.as_ref().map_or(0.0, |p| p.sigma)
    );
    Ok(())
}

fn write_curves(
    path: &Path,
    series: &[(usize, &Option<Vec<CurvePoint>>)],
    x: &str,
    y: &str,
    names: &[String],
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "threshold", x, y])?;
    for (c, pts) in series {
        for p in pts.iter().flatten() {
            w.write_record([
                names[*c].clone(),
                format!("{:?}", p.threshold),
                format!("{:?}", p.x),
                format!("{:?}", p.y),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_table(r: &MetricsReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("{:<22}{}", "samples", r.n_samples);
    println!("{:<22}{:.4}", "accuracy", r.accuracy);
    println!("{:<22}{:.4}", "macro precision", r.macro_precision);
    println!("{:<22}{:.4}", "macro recall", r.macro_recall);
    println!("{:<22}{:.4}", "macro F1", r.macro_f1);
    println!("{:<22}{}", "macro AUC-ROC", opt(r.macro_auc_roc));
    println!("{:<22}{}", "macro AUC-PR", opt(r.macro_auc_pr));
    if let Some(i) = &r.interpretability {
        println!("{:<22}{:.4}", "faithfulness", i.faithfulness);
        println!("{:<22}{:.4}", "stability", i.stability);
        println!("{:<22}{:.4}", format!("sufficiency@{}", i.k), i.sufficiency);
        println!("{:<22}{:.4}", format!("comprehensiveness@{}", i.k), i.comprehensiveness);
        println!("{:<22}{:.4}", "explanation ms", i.explanation_time_ms);
    }
}

pub fn evaluate(s: &EvaluateSettings) -> CliResult<()> {
    create_dir(&s.out)?;
    let mut manifest = RunManifest::new("evaluate", s, Some(s.seed))?;
    manifest.input(&s.checkpoint)?;
    manifest.input(&s.data.path)?;
    let ckpt = load_checkpoint(&s.checkpoint)?;
    let data = align(load_data(&s.data)?.0, &ckpt, s.data.has_header)?;
    if data.is_empty() {
        return Err(contract("no rows to evaluate"));
    }
    let params = &ckpt.params;
    let k = ckpt.config().n_classes;
    let mut scores = Vec::with_capacity(data.n_samples() * k);
    let mut pred = Vec::with_capacity(data.n_samples());
    for i in 0..data.n_samples() {
        let out = forward(params, data.row(i))?;
        pred.push(out.predicted_class());
        scores.extend(out.probabilities);
    }
    let scores = Matrix::from_vec(data.n_samples(), k, scores)?;
    let mut report = classification_metrics(&data.y, &pred, &scores)?;

    if s.interpretability {
        report.interpretability = Some(interpretability(s, &ckpt, &data)?);
    }
    let report_path = s.out.join("metrics.json");
    write_json(&report_path, &report)?;
    let series = curves(&data.y, &scores);
    let roc: Vec<_> = series.iter().enumerate().map(|(c, (r, _))| (c, r)).collect();
    let pr: Vec<_> = series.iter().enumerate().map(|(c, (_, p))| (c, p)).collect();
    let roc_path = s.out.join("roc.csv");
    let pr_path = s.out.join("pr.csv");
    write_curves(&roc_path, &roc, "fpr", "tpr", &ckpt.class_names)?;
    write_curves(&pr_path, &pr, "recall", "precision", &ckpt.class_names)?;
    finish(manifest, &s.out, &[report_path, roc_path, pr_path])?;
    print_table(&report);
    Ok(())
}

fn interpretability(s: &EvaluateSettings, ckpt: &Checkpoint, data: &Dataset) -> CliResult<InterpretabilityMetrics> {
    let params = &ckpt.params;
    let d = ckpt.config().n_features;
    let n = s.explain_rows.clamp(1, data.n_samples());
    let rows: Vec<usize> = (0..n).collect();
    let sample = data.subset(&rows);
    let explainer = |x: &[f64]| -> hain::Result<Vec<f64>> {
        let class = forward(params, x)?.predicted_class();
        Ok(match s.explainer {
            ExplainerArg::GradAttention => grad_attention_explain(params, x, class)?.scores,
            ExplainerArg::Gradient => gradient_explain(params, x, class)?.scores,
        })
    };

    let mut faith = 0.0;
    let mut importance = vec![0.0; d];
    for i in 0..n {
        let x = sample.row(i);
        let class = forward(params, x)?.predicted_class();
        let (grad, alpha) = logit_gradient(params, x, class)?;
        faith += faithfulness_with(&alpha, &grad, s.gradient);
        for (a, v) in importance.iter_mut().zip(explainer(x)?) {
            *a += v.abs();
        }
    }
    let ranking = rank_descending(&importance);
    let k = s.k.unwrap_or(20).min(d);
    let fill = baseline(ckpt);
    let stab = stability(&explainer, &sample.x, s.epsilon, s.trials, &mut Rng::new(s.seed))?;
    let timing = explanation_timing(&explainer, &sample.x, s.timing_repeats)?;
    Ok(InterpretabilityMetrics {
        explainer: match s.explainer {
            ExplainerArg::GradAttention => "grad_attention".into(),
            ExplainerArg::Gradient => "gradient".into(),
        },
        faithfulness: faith / n as f64,
        faithfulness_gradient: s.gradient,
        stability: stab,
        stability_epsilon: s.epsilon,
        k,
        sufficiency: sufficiency(params, data, &ranking, k, &fill)?,
        comprehensiveness: comprehensiveness(params, data, &ranking, k, &fill)?,
        explanation_time_ms: timing.mean_ms,
        explanation_time_std_ms: timing.std_ms,
    })
}

/// Runs a recorded command again, optionally into another directory, and
/// optionally checks the outputs against the recorded digests.
pub fn replay(path: &Path, out: Option<PathBuf>, verify: bool) -> CliResult<()> {
    let m = RunManifest::load(path)?;
    let mut config = m.config.clone();
    let recorded_dir: PathBuf = serde_json::from_value(config["out"].clone())
        .map_err(|_| CliError::Usage("manifest config has no output directory".into()))?;
    let dir = out.unwrap_or_else(|| recorded_dir.clone());
    config["out"] = serde_json::to_value(&dir)?;
    match m.command.as_str() {
        "synth" => synth(&serde_json::from_value(config)?)?,
        "train" => train(&serde_json::from_value(config)?)?,
        "explain" => explain(&serde_json::from_value(config)?)?,
        "select" => select(&serde_json::from_value(config)?)?,
        "prototypes" => prototypes(&serde_json::from_value(config)?)?,
        "evaluate" => evaluate(&serde_json::from_value(config)?)?,
        other => return Err(CliError::Usage(format!("manifest names unknown command {other:?}"))),
    }
    if verify {
        let fresh = RunManifest::load(&dir.join(MANIFEST_FILE))?;
        for old in &m.outputs {
            let name = old.path.file_name().unwrap_or_default();
            let new = fresh
                .outputs
                .iter()
                .find(|f| f.path.file_name().unwrap_or_default() == name)
                .ok_or_else(|| CliError::Mismatch(format!("{} was not produced", old.path.display())))?;
            if new.sha256 != old.sha256 {
                return Err(CliError::Mismatch(format!(
                    "{} differs from the recorded run",
                    name.to_string_lossy()
                )));
            }
        }
        println!("all {} outputs match", m.outputs.len());
    }
    Ok(())
}
