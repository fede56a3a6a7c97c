//! Browser playground: draw a synthetic benchmark, train on it, and explain
//! single held-out rows. Every method returns a JSON string so the same API
//! runs natively in tests.

use hain::attribution::{grad_attention_explain, gradient_explain, shapley_exact, shapley_sampled, ModelGame};
use hain::data::{generate_synthetic, standardize, stratified_split, Dataset, SyntheticSpec};
use hain::model::{forward, HainConfig, HainParams};
use hain::objective::LossWeights;
use hain::training::{rank_descending, train, TrainConfig};
use hain::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Widest input for which exact Shapley values are offered.
pub const EXACT_LIMIT: usize = 12;

#[derive(Serialize)]
struct Trained {
    epochs: Vec<EpochView>,
    test_accuracy: f64,
    ranking: Vec<usize>,
    alpha_mean: Vec<f64>,
    planted: Vec<usize>,
    recall: f64,
}

#[derive(Serialize)]
struct EpochView {
    epoch: usize,
    loss_total: f64,
    loss_pred: f64,
    val_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct RowView {
    row: usize,
    label: usize,
    predicted: usize,
    probabilities: Vec<f64>,
    method: String,
    scores: Vec<f64>,
}

#[wasm_bindgen]
pub struct Playground {
    train: Dataset,
    test: Dataset,
    planted: Vec<usize>,
    seed: u64,
    params: Option<HainParams>,
}

fn js(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
impl Playground {
    /// Draws and standardizes a benchmark, holding out a quarter of it.
    #[wasm_bindgen(constructor)]
    pub fn new(
        samples: usize,
        features: usize,
        classes: usize,
        informative: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Playground, String> {
        let mut spec = SyntheticSpec::new(samples, features, classes, informative);
        spec.separation = separation;
        spec.seed = seed;
        let (data, planted) = generate_synthetic(&spec).map_err(js)?;
        let data = standardize(&data).map_err(js)?;
        let (train, test) = stratified_split(&data, 0.25, &mut Rng::new(seed).derive(1)).map_err(js)?;
        Ok(Playground {
            train,
            test,
            planted,
            seed,
            params: None,
        })
    }

    pub fn n_features(&self) -> usize {
        self.train.n_features()
    }

    pub fn n_test(&self) -> usize {
        self.test.n_samples()
    }

    /// Trains from scratch and reports the log, test accuracy and ranking.
    pub fn train(&mut self, epochs: usize, learning_rate: f64, group_size: usize) -> Result<String, String> {
        let d = self.train.n_features();
        let mut model = HainConfig::new(d, self.train.n_classes());
        model.group_size = group_size.clamp(1, d);
        model.seed = self.seed;
        let mut cfg = TrainConfig::new(epochs);
        cfg.learning_rate = learning_rate;
        cfg.weights = LossWeights::default();
        cfg.seed = self.seed;
        cfg.offset_lr_scale = 2.5 * d as f64;
        cfg.scale_lr_scale = 0.25 * d as f64;
        let result = train(&self.train, Some(&self.test), &model, &cfg).map_err(js)?;

        let mut correct = 0;
        for i in 0..self.test.n_samples() {
            let out = forward(&result.params, self.test.row(i)).map_err(js)?;
            correct += usize::from(out.predicted_class() == self.test.y[i]);
        }
        let alpha = result.selection.alpha_mean.clone();
        let ranking = rank_descending(&alpha);
        let p = self.planted.len();
        let hits = ranking[..p.min(d)].iter().filter(|i| self.planted.contains(i)).count();
        let view = Trained {
            epochs: result
                .log
                .records
                .iter()
                .map(|r| EpochView {
                    epoch: r.epoch,
                    loss_total: r.loss_total,
                    loss_pred: r.loss_pred,
                    val_accuracy: r.val_accuracy,
                })
                .collect(),
            test_accuracy: correct as f64 / self.test.n_samples() as f64,
            ranking,
            alpha_mean: alpha,
            planted: self.planted.clone(),
            recall: if p == 0 { 1.0 } else { hits as f64 / p as f64 },
        };
        self.params = Some(result.params);
        serde_json::to_string(&view).map_err(js)
    }

    /// Attributes one held-out row to its features with the named method:
    /// `grad_attention`, `gradient`, `shapley_exact` or `shapley_sampled`.
    pub fn explain(&self, row: usize, method: &str) -> Result<String, String> {
        let params = self.params.as_ref().ok_or("train a model first")?;
        if row >= self.test.n_samples() {
            return Err(format!("row {row} out of range (0..{})", self.test.n_samples()));
        }
        let x = self.test.row(row);
        let out = forward(params, x).map_err(js)?;
        let class = out.predicted_class();
        // Standardized data, so the all-zero input is the mean row.
        let baseline = vec![0.0; x.len()];
        let explanation = match method {
            "grad_attention" => grad_attention_explain(params, x, class),
            "gradient" => gradient_explain(params, x, class),
            "shapley_exact" if x.len() > EXACT_LIMIT => {
                return Err(format!("exact Shapley is limited to {EXACT_LIMIT} features"))
            }
            "shapley_exact" => shapley_exact(&ModelGame::new(params, x, &baseline, class).map_err(js)?),
            "shapley_sampled" => shapley_sampled(
                &ModelGame::new(params, x, &baseline, class).map_err(js)?,
                200,
                &mut Rng::new(self.seed).derive(row as u64),
            ),
            other => return Err(format!("unknown method {other:?}")),
        }
        .map_err(js)?;
        let view = RowView {
            row,
            label: self.test.y[row],
            predicted: class,
            probabilities: out.probabilities,
            method: method.to_string(),
            scores: explanation.scores,
        };
        serde_json::to_string(&view).map_err(js)
    }
}
