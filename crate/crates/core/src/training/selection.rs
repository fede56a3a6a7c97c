use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::numerics::{gumbel_sample, softmax_in_place, Rng};

/// Outcome of one feature-selection step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    /// Threshold the hard sample was compared against.
    pub threshold: f64,
    /// Gumbel-softmax sample drawn from `alpha_mean`.
    pub alpha_snapshot: Vec<f64>,
    /// Mean combined attention over the epoch's training samples.
    pub alpha_mean: Vec<f64>,
    /// Indices with `alpha_snapshot > threshold`, ascending.
    pub selected: Vec<usize>,
    /// Percentile of `alpha_mean` to use at the next selection step.
    pub next_threshold: f64,
}

impl SelectionState {
    /// Draws the hard sample, selects against `threshold` and computes the
    /// next threshold.
    pub fn step(
        alpha_mean: Vec<f64>,
        threshold: f64,
        temperature: f64,
        target_sparsity: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let alpha_snapshot = gumbel_softmax(&alpha_mean, temperature, rng)?;
        let selected = select_above(&alpha_snapshot, threshold);
        let next_threshold = percentile_threshold(&alpha_mean, target_sparsity)?;
        Ok(SelectionState {
            threshold,
            alpha_snapshot,
            alpha_mean,
            selected,
            next_threshold,
        })
    }

    /// Features ranked by `alpha_mean`, largest first; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        rank_descending(&self.alpha_mean)
    }
}

pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Indices with value strictly greater than `threshold`.
pub fn select_above(values: &[f64], threshold: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// `softmax((ln alpha + g) / T)` with standard Gumbel noise `g`.
pub fn gumbel_softmax(alpha: &[f64], temperature: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let noise = gumbel_sample(rng, alpha.len());
    gumbel_softmax_with_noise(alpha, &noise, temperature)
}

/// [`gumbel_softmax`] with explicit noise.
pub fn gumbel_softmax_with_noise(alpha: &[f64], noise: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(HainError::contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if alpha.len() != noise.len() {
        return Err(HainError::shape(format!(
            "{} weights but {} noise values",
            alpha.len(),
            noise.len()
        )));
    }
    if alpha.is_empty() {
        return Ok(Vec::new());
    }
    let mut out: Vec<f64> = alpha
        .iter()
        .zip(noise)
        .map(|(&a, &g)| (a.max(f64::MIN_POSITIVE).ln() + g) / temperature)
        .collect();
    softmax_in_place(&mut out, None);
    Ok(out)
}

/// Nearest-rank percentile at `(1 - rho) * 100`: the value at sorted index
/// `ceil((1 - rho) * d) - 1`, clamped to the valid range.
pub fn percentile_threshold(alpha: &[f64], rho: f64) -> Result<f64> {
    if alpha.is_empty() {
        return Err(HainError::contract("percentile of an empty vector"));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(HainError::contract(format!(
            "target sparsity must be in (0, 1), got {rho}"
        )));
    }
    let mut sorted = alpha.to_vec();
    sorted.sort_by(f64::total_cmp);
    // The small slack keeps products like 0.9 * 10 from rounding up a rank.
    let rank = ((1.0 - rho) * sorted.len() as f64 - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Geometric decay `max(end, start * decay^epoch)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
}

impl TemperatureSchedule {
    /// Reaches `end` exactly at the last of `epochs` epochs.
    pub fn geometric(start: f64, end: f64, epochs: usize) -> Self {
        let decay = if epochs > 1 {
            (end / start).powf(1.0 / (epochs - 1) as f64)
        } else {
            1.0
        };
        TemperatureSchedule { start, end, decay }
    }

    /// Temperature for the zero-based epoch index.
    pub fn at(&self, epoch: usize) -> f64 {
        (self.start * self.decay.powi(epoch as i32)).max(self.end)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.start > 0.0 && self.end > 0.0 && self.start.is_finite() && self.decay > 0.0 && self.decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(HainError::contract(format!("invalid temperature schedule {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn zero_noise_unit_temperature_is_identity() {
        let a = [0.5, 0.3, 0.2];
        let out = gumbel_softmax_with_noise(&a, &[0.0; 3], 1.0).unwrap();
        for (o, e) in out.iter().zip(a) {
            assert_abs_diff_eq!(*o, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn cold_temperature_is_nearly_one_hot() {
        let out = gumbel_softmax_with_noise(&[0.9, 0.1], &[0.3, -0.2], 1e-6).unwrap();
        assert!(out[0] > 0.999);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        assert!(gumbel_softmax(&[1.0], 0.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn cooling_sharpens_monotonically() {
        let a = [0.4, 0.35, 0.25];
        let g = gumbel_sample(&mut Rng::new(8), 3);
        let maxes: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
            .iter()
            .map(|&t| {
                gumbel_softmax_with_noise(&a, &g, t)
                    .unwrap()
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(maxes.windows(2).all(|w| w[1] >= w[0]), "{maxes:?}");
    }

    #[test]
    fn percentile_examples() {
        let a: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
        assert_eq!(percentile_threshold(&a, 0.1).unwrap(), 9.0 / 55.0);
        assert_eq!(percentile_threshold(&[0.25; 4], 0.5).unwrap(), 0.25);
        assert!(select_above(&[0.25; 4], 0.25).is_empty());
        assert_eq!(percentile_threshold(&[0.7], 0.3).unwrap(), 0.7);
    }

    #[test]
    fn percentile_rejects_bad_sparsity() {
        assert!(percentile_threshold(&[0.1, 0.2], 1.0).is_err());
        assert!(percentile_threshold(&[], 0.5).is_err());
    }

    #[test]
    fn schedule_runs_from_start_to_end() {
        let s = TemperatureSchedule::geometric(1.0, 0.1, 10);
        assert_eq!(s.at(0), 1.0);
        assert_abs_diff_eq!(s.at(9), 0.1, epsilon = 1e-12);
        assert_eq!(s.at(50), 0.1);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_descending(&[0.2, 0.5, 0.2, 0.1]), vec![1, 0, 2, 3]);
    }

    /// Smallest value whose count of entries at or below it reaches the rank.
    fn rank_oracle(alpha: &[f64], rho: f64) -> f64 {
        let need = (1.0 - rho) * alpha.len() as f64;
        let mut candidates = alpha.to_vec();
        candidates.sort_by(f64::total_cmp);
        *candidates
            .iter()
            .find(|&&v| alpha.iter().filter(|&&a| a <= v).count() as f64 >= need - 1e-9)
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn percentile_matches_counting_oracle(
            alpha in proptest::collection::vec(0.0f64..1.0, 1..100),
            rho in 0.01f64..0.99,
        ) {
            prop_assert_eq!(percentile_threshold(&alpha, rho).unwrap(), rank_oracle(&alpha, rho));
        }

        #[test]
        fn gumbel_softmax_is_simplex(
            alpha in proptest::collection::vec(1e-6f64..1.0, 1..40),
            t in 1e-3f64..10.0,
            seed in 0u64..1000,
        ) {
            let out = gumbel_softmax(&alpha, t, &mut Rng::new(seed)).unwrap();
            prop_assert!(out.iter().all(|&v| v >= 0.0));
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
