//! The interpretability-regularized training objective
//!
//! `total = pred + l1 * attn + l2 * sparse + l3 * consist`, where `pred` is
//! cross-entropy, `attn` the entropy of the combined feature attention,
//! `sparse` the mean of the sigmoid feature gates, and `consist` the squared
//! distance between the combined and cross attention distributions.
//!
//! The L1 term is taken over the gates rather than the attention simplex:
//! the L1 norm of a softmax output is identically one.

use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::model::{ForwardNodes, ForwardOutput};
use crate::numerics::graph::{xlogx, LN_FLOOR};
use crate::numerics::{Graph, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub attn: f64,
    pub sparse: f64,
    pub consist: f64,
}

impl LossWeights {
    pub fn new(attn: f64, sparse: f64, consist: f64) -> Result<Self> {
        let w = LossWeights { attn, sparse, consist };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        LossWeights {
            attn: 0.0,
            sparse: 0.0,
            consist: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.attn, self.sparse, self.consist]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0)
        {
            Ok(())
        } else {
            Err(HainError::contract(format!(
                "loss weights must be finite and nonnegative, got {self:?}"
            )))
        }
    }

    /// Weighted sum of the three regularizer values.
    pub fn regularizer(&self, attn: f64, sparse: f64, consist: f64) -> f64 {
        self.attn * attn + self.sparse * sparse + self.consist * consist
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            attn: 0.01,
            sparse: 0.01,
            consist: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub attn: f64,
    pub sparse: f64,
    pub consist: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(pred: f64, attn: f64, sparse: f64, consist: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            pred,
            attn,
            sparse,
            consist,
            total: pred + w.regularizer(attn, sparse, consist),
        }
    }

    /// Componentwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.pred += b.pred;
            acc.attn += b.attn;
            acc.sparse += b.sparse;
            acc.consist += b.consist;
            acc.total += b.total;
        }
        LossBreakdown {
            pred: acc.pred / n,
            attn: acc.attn / n,
            sparse: acc.sparse / n,
            consist: acc.consist / n,
            total: acc.total / n,
        }
    }
}

/// `-ln p[label]`, with `p` clamped below at `1e-12`.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> Result<f64> {
    let p = probabilities.get(label).ok_or_else(|| {
        HainError::contract(format!(
            "label {label} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(LN_FLOOR).ln())
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn attention_entropy(alpha: &[f64]) -> f64 {
    -alpha.iter().map(|&a| xlogx(a)).sum::<f64>()
}

/// Mean gate value, `(1/d) sum g_i`.
pub fn sparsity_l1(gates: &[f64]) -> f64 {
    if gates.is_empty() {
        return 0.0;
    }
    gates.iter().map(|g| g.abs()).sum::<f64>() / gates.len() as f64
}

/// Squared Euclidean distance between two attention distributions.
pub fn consistency(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HainError::shape(format!(
            "consistency between lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum())
}

pub fn total_loss(fwd: &ForwardOutput, label: usize, w: &LossWeights) -> Result<LossBreakdown> {
    let pred = cross_entropy(&fwd.probabilities, label)?;
    let t = &fwd.trace;
    Ok(LossBreakdown::combine(
        pred,
        attention_entropy(&t.alpha_combined),
        sparsity_l1(&t.gates),
        consistency(&t.alpha_combined, &t.alpha_cross)?,
        w,
    ))
}

/// Loss terms recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub pred: NodeId,
    pub attn: NodeId,
    pub sparse: NodeId,
    pub consist: NodeId,
    /// Weighted sum of the three regularizer values.
    pub regularizer: NodeId,
    pub total: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph<'_>) -> LossBreakdown {
        let v = |n: NodeId| g.value(n).data()[0];
        LossBreakdown {
            pred: v(self.pred),
            attn: v(self.attn),
            sparse: v(self.sparse),
            consist: v(self.consist),
            total: v(self.total),
        }
    }
}

/// Records every loss term for one sample on the forward graph.
pub fn build_loss(g: &mut Graph<'_>, fwd: &ForwardNodes, label: usize, w: &LossWeights) -> Result<LossNodes> {
    let k = g.value(fwd.probabilities).cols();
    if label >= k {
        return Err(HainError::contract(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let p = g.pick(fwd.probabilities, 0, label)?;
    let lp = g.ln(p);
    let pred = g.scale(lp, -1.0);

    let xl = g.xlogx(fwd.alpha_combined);
    let s = g.sum_all(xl);
    let attn = g.scale(s, -1.0);

    let sparse = g.mean_all(fwd.gates);

    let diff = g.sub(fwd.alpha_combined, fwd.alpha_cross)?;
    let sq = g.mul(diff, diff)?;
    let consist = g.sum_all(sq);

    let a = g.scale(attn, w.attn);
    let b = g.scale(sparse, w.sparse);
    let c = g.scale(consist, w.consist);
    let ab = g.add(a, b)?;
    let regularizer = g.add(ab, c)?;
    let total = g.add(pred, regularizer)?;
    Ok(LossNodes {
        pred,
        attn,
        sparse,
        consist,
        regularizer,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, forward_graph, init_params, HainConfig, HainParams, TENSOR_NAMES};
    use crate::numerics::{finite_diff_check, Matrix, Rng};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], 0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cross_entropy(&[0.9, 0.1], 1).unwrap(),
            std::f64::consts::LN_10,
            epsilon = 1e-12
        );
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(HainError::Contract(_))));
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(attention_entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-15);
        assert_eq!(attention_entropy(&[0.0, 1.0, 0.0]), 0.0);
        // -(3/4)ln(3/4) - (1/4)ln(1/4), evaluated term by term
        let expected = -(0.75 * 0.75f64.ln()) - 0.25 * 0.25f64.ln();
        assert_abs_diff_eq!(attention_entropy(&[0.75, 0.25]), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.562335, epsilon = 1e-6);
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_l1(&[0.0; 5]), 0.0);
        assert_eq!(sparsity_l1(&[1.0; 5]), 1.0);
        assert_abs_diff_eq!(sparsity_l1(&[0.5, 0.25, 0.25]), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(consistency(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_abs_diff_eq!(consistency(&[0.6, 0.4], &[0.5, 0.5]).unwrap(), 0.02, epsilon = 1e-15);
        assert!(matches!(consistency(&[1.0], &[0.5, 0.5]), Err(HainError::Shape(_))));
    }

    fn cfg() -> HainConfig {
        HainConfig {
            n_features: 6,
            embed_dim: 3,
            group_size: 4,
            key_dim: 2,
            reduced_dim: 2,
            hidden_dim: 4,
            n_classes: 3,
            global_window: None,
            seed: 0,
        }
    }

    fn sample(seed: u64) -> (HainParams, Vec<f64>) {
        let p = init_params(&cfg(), &Rng::new(seed)).unwrap();
        let mut r = Rng::new(seed + 77);
        let x = (0..6).map(|_| r.normal()).collect();
        (p, x)
    }

    #[test]
    fn zero_weights_leave_prediction_loss() {
        let (p, x) = sample(1);
        let out = forward(&p, &x).unwrap();
        let b = total_loss(&out, 2, &LossWeights::zero()).unwrap();
        assert_eq!(b.total, b.pred);
    }

    #[test]
    fn one_hot_matching_attention_has_no_regularizer() {
        let (p, x) = sample(2);
        let mut out = forward(&p, &x).unwrap();
        let one_hot = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        out.trace.alpha_combined = one_hot.clone();
        out.trace.alpha_cross = one_hot;
        let b = total_loss(&out, 0, &LossWeights::default()).unwrap();
        assert_eq!(b.attn, 0.0);
        assert_eq!(b.consist, 0.0);
    }

    #[test]
    fn breakdown_recombines_and_matches_graph() {
        let w = LossWeights::new(0.3, 0.7, 1.1).unwrap();
        for seed in 0..5 {
            let (p, x) = sample(seed);
            let out = forward(&p, &x).unwrap();
            let b = total_loss(&out, 1, &w).unwrap();
            let hand = b.pred + 0.3 * b.attn + 0.7 * b.sparse + 1.1 * b.consist;
            assert!((b.total - hand).abs() < 1e-12);
            let (mut g, _, nodes) = forward_graph(&p, &x, true, false).unwrap();
            let ln = build_loss(&mut g, &nodes, 1, &w).unwrap();
            let gb = ln.breakdown(&g);
            assert!((gb.total - b.total).abs() < 1e-12);
            assert!((gb.attn - b.attn).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights::new(0.1, -1.0, 0.0).is_err());
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let w = LossWeights::new(0.5, 0.5, 2.0).unwrap();
        for seed in 0..3 {
            let (p, x) = sample(seed + 10);
            let label = seed as usize % 3;
            let (mut g, pn, nodes) = forward_graph(&p, &x, true, true).unwrap();
            let ln = build_loss(&mut g, &nodes, label, &w).unwrap();
            let grads = g.backward(ln.total).unwrap();
            for (i, name) in TENSOR_NAMES.iter().enumerate() {
                let zero = Matrix::zeros(p.tensor(name).rows(), p.tensor(name).cols());
                let analytic = grads.get(pn.0[i]).unwrap_or(&zero);
                let f = |m: &Matrix| {
                    let mut q = p.clone();
                    *q.tensor_mut(name) = m.clone();
                    total_loss(&forward(&q, &x).unwrap(), label, &w).unwrap().total
                };
                let err = finite_diff_check(f, analytic, p.tensor(name), 1e-5).unwrap();
                // Only the embedding is off the loss path.
                assert_eq!(grads.get(pn.0[i]).is_none(), name.starts_with("embed"), "{name}");
                assert!(err < 1e-4, "seed {seed} {name}: {err}");
            }
            let gx = grads.get(nodes.input).unwrap();
            let f = |m: &Matrix| total_loss(&forward(&p, m.data()).unwrap(), label, &w).unwrap().total;
            assert!(finite_diff_check(f, gx, &Matrix::column(&x), 1e-5).unwrap() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(raw in proptest::collection::vec(0.0f64..10.0, 1..30)) {
            let s: f64 = raw.iter().sum();
            prop_assert!(s > 0.0 || raw.iter().all(|&v| v == 0.0));
            if s > 0.0 {
                let alpha: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let h = attention_entropy(&alpha);
                prop_assert!(h >= -1e-12);
                prop_assert!(h <= (alpha.len() as f64).ln() + 1e-12);
            }
        }

        #[test]
        fn consistency_symmetric_and_zero_iff_equal(
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let ab = consistency(&a, &b).unwrap();
            prop_assert!((ab - consistency(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert_eq_zero(consistency(&a, &a).unwrap());
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn recombination_identity(
            l in proptest::collection::vec(0.0f64..100.0, 3),
            terms in proptest::collection::vec(0.0f64..10.0, 4),
        ) {
            let w = LossWeights::new(l[0], l[1], l[2]).unwrap();
            let b = LossBreakdown::combine(terms[0], terms[1], terms[2], terms[3], &w);
            let hand = terms[0] + l[0] * terms[1] + l[1] * terms[2] + l[2] * terms[3];
            prop_assert!((b.total - hand).abs() <= 1e-12 * hand.max(1.0));
        }
    }

    fn prop_assert_eq_zero(v: f64) {
        assert_eq!(v, 0.0);
    }
}
