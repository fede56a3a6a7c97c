//! Minibatch SGD on the regularized objective, epoch-level feature selection,
//! a simulated asynchronous parameter server and memory-bounded execution.

mod attention;
mod ps;
mod selection;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HainError, Result};
use crate::model::{forward, forward_graph, init_params, HainConfig, HainParams};
use crate::numerics::{Matrix, Rng};
use crate::objective::{build_loss, total_loss, LossBreakdown, LossWeights};

pub use attention::{chunked_forward, masked_attention, AttentionMask, ChunkedOutput};
pub use ps::{ps_train, ps_train_from};
pub use selection::{
    gumbel_softmax, gumbel_softmax_with_noise, percentile_threshold, rank_descending, select_above, SelectionState,
    TemperatureSchedule,
};

/// Selection threshold before the first percentile update.
pub const INITIAL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub weights: LossWeights,
    /// Fraction of features kept by the percentile threshold.
    pub target_sparsity: f64,
    pub temperature: TemperatureSchedule,
    pub seed: u64,
    pub workers: usize,
    pub max_staleness: usize,
    /// Step-size multiplier for the per-feature offset table. Each row
    /// only sees gradient through its own attention weight, which is of
    /// order `1 / n_features`.
    #[serde(default = "unit")]
    pub offset_lr_scale: f64,
    /// Step-size multiplier for the per-feature input-scale table.
    #[serde(default = "unit")]
    pub scale_lr_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(20)
    }
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay: 0.95,
            weights: LossWeights::default(),
            target_sparsity: 0.1,
            temperature: TemperatureSchedule::geometric(1.0, 0.1, epochs),
            seed: 0,
            workers: 1,
            max_staleness: 0,
            offset_lr_scale: 1.0,
            scale_lr_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HainError::contract(format!("invalid training config: {m}")));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return fail(format!("learning-rate decay {}", self.lr_decay));
        }
        if !(self.target_sparsity > 0.0 && self.target_sparsity < 1.0) {
            return fail(format!("target sparsity {} outside (0, 1)", self.target_sparsity));
        }
        if !(self.offset_lr_scale >= 0.0 && self.offset_lr_scale.is_finite())
            || !(self.scale_lr_scale >= 0.0 && self.scale_lr_scale.is_finite())
        {
            return fail("table step-size multipliers must be finite and nonnegative".into());
        }
        if self.workers == 0 {
            return fail("need at least one worker".into());
        }
        self.weights.validate()?;
        self.temperature.validate()
    }

    /// Step size for the zero-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// One line of the training log. Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_pred: f64,
    pub loss_attn: f64,
    pub loss_sparse: f64,
    pub loss_consist: f64,
    pub loss_total: f64,
    pub val_loss_total: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub tau: f64,
    pub n_selected: usize,
    pub temperature: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { records })
    }

    pub fn series(&self, pick: impl Fn(&EpochRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    /// Trailing moving average of a per-epoch series.
    pub fn smoothed(&self, pick: impl Fn(&EpochRecord) -> f64, window: usize) -> Vec<f64> {
        moving_average(&self.series(pick), window)
    }
}

/// Trailing moving average with a window of at most `window` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: HainParams,
    pub log: TrainLog,
    pub selection: SelectionState,
}

/// Gradient, loss and attention of one labelled sample.
pub(crate) struct SampleGradient {
    pub grads: Vec<Matrix>,
    pub loss: LossBreakdown,
    pub alpha: Vec<f64>,
}

pub(crate) fn sample_gradient(
    params: &HainParams,
    x: &[f64],
    label: usize,
    weights: &LossWeights,
) -> Result<SampleGradient> {
    let (mut g, pn, fwd) = forward_graph(params, x, true, false)?;
    let loss = build_loss(&mut g, &fwd, label, weights)?;
    let mut adj = g.backward(loss.total)?;
    let grads =
        pn.0.iter()
            .zip(params.tensors())
            .map(|(&id, t)| adj.take(id).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
            .collect();
    let alpha = g.value(fwd.alpha_combined).data().to_vec();
    Ok(SampleGradient {
        grads,
        loss: loss.breakdown(&g),
        alpha,
    })
}

/// Mean gradient over `batch`, with per-sample losses and the running
/// attention sum updated in sample order.
pub(crate) fn batch_gradient(
    params: &HainParams,
    data: &Dataset,
    batch: &[usize],
    weights: &LossWeights,
    losses: &mut Vec<LossBreakdown>,
    alpha_sum: &mut [f64],
    epoch: usize,
) -> Result<Vec<Matrix>> {
    let mut acc = params.zeros_like();
    for &i in batch {
        let s = sample_gradient(params, data.row(i), data.y[i], weights)?;
        if !s.loss.total.is_finite() || !s.grads.iter().all(Matrix::is_finite) {
            return Err(HainError::Training {
                epoch,
                reason: format!("non-finite loss or gradient on sample {i}"),
            });
        }
        for (a, g) in acc.iter_mut().zip(&s.grads) {
            a.add_assign(g);
        }
        for (a, v) in alpha_sum.iter_mut().zip(&s.alpha) {
            *a += v;
        }
        losses.push(s.loss);
    }
    let inv = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|a| a.scale_in_place(inv));
    Ok(acc)
}

pub(crate) fn apply_step(params: &mut HainParams, mut grads: Vec<Matrix>, lr: f64, cfg: &TrainConfig) {
    grads[crate::model::tensor_index("feature_pos")].scale_in_place(cfg.offset_lr_scale);
    grads[crate::model::tensor_index("feature_scale")].scale_in_place(cfg.scale_lr_scale);
    params.sgd_step(&grads, lr);
}

/// Random streams keyed by purpose so schedules never interfere.
pub(crate) mod streams {
    pub fn shuffle(epoch: usize, worker: usize) -> u64 {
        0x1_0000_0000 + ((epoch as u64) << 16) + worker as u64
    }

    pub fn gumbel(epoch: usize) -> u64 {
        0x2_0000_0000 + epoch as u64
    }

    pub const STALENESS: u64 = 0x3_0000_0000;
}

/// Mean loss and accuracy of `params` on `data`.
pub fn evaluate(params: &HainParams, data: &Dataset, weights: &LossWeights) -> Result<(LossBreakdown, f64)> {
    if data.is_empty() {
        return Err(HainError::contract("cannot evaluate on an empty dataset"));
    }
    let mut losses = Vec::with_capacity(data.n_samples());
    let mut correct = 0;
    for i in 0..data.n_samples() {
        let out = forward(params, data.row(i))?;
        correct += usize::from(out.predicted_class() == data.y[i]);
        losses.push(total_loss(&out, data.y[i], weights)?);
    }
    Ok((LossBreakdown::mean(&losses), correct as f64 / data.n_samples() as f64))
}

pub(crate) fn check_inputs(data: &Dataset, model: &HainConfig, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(HainError::contract("training set is empty"));
    }
    if data.n_features() != model.n_features {
        return Err(HainError::shape(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            model.n_features
        )));
    }
    if data.n_classes() > model.n_classes {
        return Err(HainError::contract(format!(
            "dataset has {} classes, model outputs {}",
            data.n_classes(),
            model.n_classes
        )));
    }
    Ok(())
}

/// Shared end-of-epoch bookkeeping: selection step and log record.
pub(crate) struct EpochCloser<'a> {
    pub cfg: &'a TrainConfig,
    pub root: Rng,
    pub validation: Option<&'a Dataset>,
    pub threshold: f64,
}

impl EpochCloser<'_> {
    pub fn close(
        &mut self,
        epoch: usize,
        params: &HainParams,
        losses: &[LossBreakdown],
        alpha_sum: &[f64],
    ) -> Result<(EpochRecord, SelectionState)> {
        let mean = LossBreakdown::mean(losses);
        if !mean.total.is_finite() || !params.is_finite() {
            return Err(HainError::Training {
                epoch: epoch + 1,
                reason: "parameters or loss became non-finite".into(),
            });
        }
        let n = losses.len().max(1) as f64;
        let alpha_mean: Vec<f64> = alpha_sum.iter().map(|a| a / n).collect();
        let temperature = self.cfg.temperature.at(epoch);
        let state = SelectionState::step(
            alpha_mean,
            self.threshold,
            temperature,
            self.cfg.target_sparsity,
            &mut self.root.derive(streams::gumbel(epoch)),
        )?;
        self.threshold = state.next_threshold;
        let (val_loss_total, val_accuracy) = match self.validation {
            Some(v) => {
                let (l, a) = evaluate(params, v, &self.cfg.weights)?;
                (Some(l.total), Some(a))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss_pred: mean.pred,
            loss_attn: mean.attn,
            loss_sparse: mean.sparse,
            loss_consist: mean.consist,
            loss_total: mean.total,
            val_loss_total,
            val_accuracy,
            tau: state.threshold,
            n_selected: state.selected.len(),
            temperature,
        };
        Ok((record, state))
    }
}

/// Trains freshly initialized parameters (seeded by `model.seed`).
pub fn train(
    data: &Dataset,
    validation: Option<&Dataset>,
    model: &HainConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(data, model, cfg)?;
    let params = init_params(model, &Rng::new(model.seed))?;
    train_from(params, data, validation, cfg)
}

/// Minibatch SGD from the given parameters. Each epoch shuffles, steps with
/// `lr * decay^epoch`, then runs the selection step on the epoch's mean
/// combined attention.
pub fn train_from(
    mut params: HainParams,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(data, params.config(), cfg)?;
    let d = data.n_features();
    let root = Rng::new(cfg.seed);
    let mut closer = EpochCloser {
        cfg,
        root: root.clone(),
        validation,
        threshold: INITIAL_THRESHOLD,
    };
    let mut log = TrainLog::default();
    let mut selection = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let order = root.derive(streams::shuffle(epoch, 0)).permutation(data.n_samples());
        let mut losses = Vec::with_capacity(order.len());
        let mut alpha_sum = vec![0.0; d];
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch_gradient(
                &params,
                data,
                batch,
                &cfg.weights,
                &mut losses,
                &mut alpha_sum,
                epoch + 1,
            )?;
            apply_step(&mut params, grads, lr, cfg);
        }
        let (record, state) = closer.close(epoch, &params, &losses, &alpha_sum)?;
        log.records.push(record);
        selection = Some(state);
    }
    let selection = match selection {
        Some(s) => s,
        None => untrained_selection(&params, data, cfg)?,
    };
    Ok(TrainResult { params, log, selection })
}

/// Selection from a single pass when no epochs ran.
fn untrained_selection(params: &HainParams, data: &Dataset, cfg: &TrainConfig) -> Result<SelectionState> {
    let d = data.n_features();
    let mut alpha = vec![0.0; d];
    for i in 0..data.n_samples() {
        for (a, v) in alpha.iter_mut().zip(forward(params, data.row(i))?.trace.alpha_combined) {
            *a += v / data.n_samples() as f64;
        }
    }
    SelectionState::step(
        alpha,
        INITIAL_THRESHOLD,
        cfg.temperature.at(0),
        cfg.target_sparsity,
        &mut Rng::new(cfg.seed).derive(streams::gumbel(0)),
    )
}

#[cfg(test)]
mod tests;
