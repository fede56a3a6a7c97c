use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HainError, Result};
use crate::model::{forward, HainParams};
use crate::numerics::{Matrix, Rng};

/// Default perturbation scale for stability on standardized data.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Which gradient reading faithfulness correlates against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientReading {
    #[default]
    Absolute,
    Signed,
}

/// Anything mapping an input row to a per-feature explanation vector.
pub trait Explainer {
    fn explain(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Explainer for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn explain(&self, x: &[f64]) -> Result<Vec<f64>> {
        self(x)
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Correlation between attention and gradient magnitudes.
pub fn faithfulness(alpha: &[f64], grads: &[f64]) -> f64 {
    faithfulness_with(alpha, grads, GradientReading::Absolute)
}

pub fn faithfulness_with(alpha: &[f64], grads: &[f64], reading: GradientReading) -> f64 {
    match reading {
        GradientReading::Absolute => {
            let mag: Vec<f64> = grads.iter().map(|g| g.abs()).collect();
            pearson(alpha, &mag)
        }
        GradientReading::Signed => pearson(alpha, grads),
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.into_iter().map(|x| x / norm).collect()
    } else {
        v
    }
}

/// One minus the mean distance between unit-normalized explanations of each
/// input and of `trials` Gaussian perturbations of it.
pub fn stability(
    explainer: &dyn Explainer,
    inputs: &Matrix,
    epsilon: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(HainError::contract(format!(
            "perturbation scale must be positive, got {epsilon}"
        )));
    }
    if trials == 0 || inputs.rows() == 0 {
        return Err(HainError::contract("stability needs at least one input and one trial"));
    }
    let mut total = 0.0;
    for r in 0..inputs.rows() {
        let x = inputs.row(r);
        let base = unit(explainer.explain(x)?);
        for _ in 0..trials {
            let noisy: Vec<f64> = x.iter().map(|v| v + epsilon * rng.normal()).collect();
            let other = unit(explainer.explain(&noisy)?);
            if other.len() != base.len() {
                return Err(HainError::shape("explainer changed output width"));
            }
            total += base
                .iter()
                .zip(&other)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(1.0 - total / (inputs.rows() * trials) as f64)
}

/// Accuracy with every feature not flagged in `keep` replaced by `fill`.
pub fn masked_accuracy(params: &HainParams, data: &Dataset, keep: &[bool], fill: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(HainError::contract("no samples to score"));
    }
    let mut correct = 0usize;
    let mut row = vec![0.0; data.n_features()];
    for i in 0..data.n_samples() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if keep[j] { data.x.get(i, j) } else { fill[j] };
        }
        if forward(params, &row)?.predicted_class() == data.y[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n_samples() as f64)
}

fn top_k_mask(ranking: &[usize], k: usize, d: usize) -> Result<Vec<bool>> {
    if k > d || k > ranking.len() {
        return Err(HainError::contract(format!(
            "k = {k} exceeds {d} features or the ranking"
        )));
    }
    let mut top = vec![false; d];
    for &j in &ranking[..k] {
        if j >= d || top[j] {
            return Err(HainError::contract(format!(
                "ranking entry {j} out of range or repeated"
            )));
        }
        top[j] = true;
    }
    Ok(top)
}

fn full_accuracy(params: &HainParams, data: &Dataset) -> Result<f64> {
    let acc = masked_accuracy(
        params,
        data,
        &vec![true; data.n_features()],
        &vec![0.0; data.n_features()],
    )?;
    if acc == 0.0 {
        return Err(HainError::UndefinedMetric(
            "model has zero accuracy on all features".into(),
        ));
    }
    Ok(acc)
}

fn check_fill(data: &Dataset, fill: &[f64]) -> Result<()> {
    if fill.len() != data.n_features() {
        return Err(HainError::shape(format!(
            "{} fill values for {} features",
            fill.len(),
            data.n_features()
        )));
    }
    Ok(())
}

/// `acc(top-k kept) / acc(all)`, other features set to `fill`.
pub fn sufficiency(params: &HainParams, data: &Dataset, ranking: &[usize], k: usize, fill: &[f64]) -> Result<f64> {
    check_fill(data, fill)?;
    let keep = top_k_mask(ranking, k, data.n_features())?;
    let all = full_accuracy(params, data)?;
    Ok(masked_accuracy(params, data, &keep, fill)? / all)
}

/// `1 - acc(top-k set to fill) / acc(all)`.
pub fn comprehensiveness(
    params: &HainParams,
    data: &Dataset,
    ranking: &[usize],
    k: usize,
    fill: &[f64],
) -> Result<f64> {
    check_fill(data, fill)?;
    let keep: Vec<bool> = top_k_mask(ranking, k, data.n_features())?.iter().map(|t| !t).collect();
    let all = full_accuracy(params, data)?;
    Ok(1.0 - masked_accuracy(params, data, &keep, fill)? / all)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Milliseconds per input.
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repeats: usize,
}

/// Wall-clock cost per input over `repeats` passes after one warm-up pass.
pub fn explanation_timing(explainer: &dyn Explainer, inputs: &Matrix, repeats: usize) -> Result<Timing> {
    if repeats < 3 {
        return Err(HainError::contract(format!("need at least 3 repeats, got {repeats}")));
    }
    if inputs.rows() == 0 {
        return Err(HainError::contract("no inputs to time"));
    }
    let pass = || -> Result<f64> {
        let start = Instant::now();
        for r in 0..inputs.rows() {
            std::hint::black_box(explainer.explain(inputs.row(r))?);
        }
        Ok(start.elapsed().as_secs_f64() * 1e3 / inputs.rows() as f64)
    };
    pass()?;
    let times = (0..repeats).map(|_| pass()).collect::<Result<Vec<f64>>>()?;
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok(Timing {
        mean_ms: mean,
        std_ms: var.sqrt(),
        repeats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityMetrics {
    pub explainer: String,
    pub faithfulness: f64,
    pub faithfulness_gradient: GradientReading,
    pub stability: f64,
    pub stability_epsilon: f64,
    pub k: usize,
    pub sufficiency: f64,
    pub comprehensiveness: f64,
    pub explanation_time_ms: f64,
    pub explanation_time_std_ms: f64,
}
