use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{HainError, Result};
use crate::numerics::{Matrix, Rng};

/// Class-conditional Gaussian benchmark with a planted informative subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub n_informative: usize,
    /// Gap between two class means on an informative feature where they differ.
    pub separation: f64,
    /// Standard deviation of the per-cell Gaussian noise.
    #[serde(default = "unit")]
    pub noise: f64,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, n_features: usize, n_classes: usize, n_informative: usize) -> Self {
        SyntheticSpec {
            n_samples,
            n_features,
            n_classes,
            n_informative,
            separation: 2.0,
            noise: 1.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HainError::contract(format!("invalid synthetic spec: {m}")));
        if self.n_classes < 2 {
            return fail("need at least two classes".into());
        }
        if self.n_samples < self.n_classes {
            return fail(format!("{} samples for {} classes", self.n_samples, self.n_classes));
        }
        if self.n_informative > self.n_features || self.n_features == 0 {
            return fail(format!(
                "{} informative of {} features",
                self.n_informative, self.n_features
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return fail(format!("separation {}", self.separation));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise {}", self.noise));
        }
        Ok(())
    }
}

/// Draws the benchmark and returns it with the sorted planted feature indices.
///
/// Each class gets a random sign pattern over the planted features and its
/// mean is `±separation / 2` there, zero elsewhere; every cell then adds
/// `N(0, noise²)`. Labels are balanced and shuffled.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let (n, d, k, p) = (spec.n_samples, spec.n_features, spec.n_classes, spec.n_informative);
    let root = Rng::new(spec.seed);

    let mut planted = root.derive(1).permutation(d);
    planted.truncate(p);
    planted.sort_unstable();

    // patterns[c][j]: sign of class c's offset on planted feature j. Each
    // column is redrawn until it is not constant, so every planted feature
    // separates some pair of classes; rows are redrawn until all differ.
    let mut sign_rng = root.derive(2);
    let mut draw_sign = || if sign_rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    let distinct_possible = p >= 64 || (1u64 << p) >= k as u64;
    let patterns: Vec<Vec<f64>> = loop {
        let mut pats = vec![vec![0.0; p]; k];
        for j in 0..p {
            loop {
                for row in pats.iter_mut() {
                    row[j] = draw_sign();
                }
                if pats.iter().any(|r| r[j] != pats[0][j]) {
                    break;
                }
            }
        }
        let all_distinct = (0..k).all(|a| (a + 1..k).all(|b| pats[a] != pats[b]));
        if all_distinct || !distinct_possible {
            break pats;
        }
    };

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    root.derive(3).shuffle(&mut labels);

    let mut noise_rng = root.derive(4);
    let half = spec.separation / 2.0;
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        let start = data.len();
        data.extend((0..d).map(|_| spec.noise * noise_rng.normal()));
        for (j, &f) in planted.iter().enumerate() {
            data[start + f] += half * patterns[y][j];
        }
    }
    let width = d.to_string().len();
    let dataset = Dataset::new(
        Matrix::from_vec(n, d, data)?,
        labels,
        (0..d).map(|i| format!("f{i:0width$}")).collect(),
        (0..k).map(|c| format!("class{c}")).collect(),
    )?;
    Ok((dataset, planted))
}
