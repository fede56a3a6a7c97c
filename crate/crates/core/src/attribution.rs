//! Local explanations: gradient-weighted attention, exact and sampled
//! Shapley values, and plain input gradients.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::model::{forward, forward_graph, HainParams};
use crate::numerics::Rng;

/// Largest player count [`shapley_exact`] will enumerate.
pub const MAX_EXACT_PLAYERS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradAttention,
    ShapleyExact,
    ShapleySampled,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub target_class: usize,
    pub scores: Vec<f64>,
    pub normalized: bool,
    /// How absent features are filled in, for coalition-based methods.
    pub baseline_policy: Option<String>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_id: Option<String>,
    /// Per-feature standard error of a sampled estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<Vec<f64>>,
}

impl Explanation {
    fn new(method: Method, target_class: usize, scores: Vec<f64>) -> Self {
        Explanation {
            method,
            target_class,
            scores,
            normalized: false,
            baseline_policy: None,
            seed: None,
            input_id: None,
            std_error: None,
        }
    }
}

/// A cooperative game over `n_players` features.
pub trait Game {
    fn n_players(&self) -> usize;

    /// Worth of the coalition whose members are flagged `true`.
    fn value(&self, coalition: &[bool]) -> Result<f64>;

    fn target_class(&self) -> usize {
        0
    }

    fn baseline_policy(&self) -> Option<String> {
        None
    }
}

/// Game defined by a closure, mainly for tests and synthetic checks.
pub struct FnGame<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[bool]) -> f64> FnGame<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnGame { n, f }
    }
}

impl<F: Fn(&[bool]) -> f64> Game for FnGame<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        Ok((self.f)(coalition))
    }
}

/// Class-`c` probability of the model when features outside the coalition
/// are replaced by per-feature baseline values.
pub struct ModelGame<'a> {
    pub params: &'a HainParams,
    pub x: &'a [f64],
    pub baseline: &'a [f64],
    pub class: usize,
    pub policy: String,
}

impl<'a> ModelGame<'a> {
    pub fn new(params: &'a HainParams, x: &'a [f64], baseline: &'a [f64], class: usize) -> Result<Self> {
        let cfg = params.config();
        if x.len() != cfg.n_features || baseline.len() != cfg.n_features {
            return Err(HainError::shape(format!(
                "input {} and baseline {} for a {}-feature model",
                x.len(),
                baseline.len(),
                cfg.n_features
            )));
        }
        check_class(params, class)?;
        Ok(ModelGame {
            params,
            x,
            baseline,
            class,
            policy: "training_mean".into(),
        })
    }
}

impl Game for ModelGame<'_> {
    fn n_players(&self) -> usize {
        self.x.len()
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        let input: Vec<f64> = coalition
            .iter()
            .zip(self.x.iter().zip(self.baseline))
            .map(|(&on, (&x, &b))| if on { x } else { b })
            .collect();
        Ok(forward(self.params, &input)?.probabilities[self.class])
    }

    fn target_class(&self) -> usize {
        self.class
    }

    fn baseline_policy(&self) -> Option<String> {
        Some(self.policy.clone())
    }
}

fn check_class(params: &HainParams, class: usize) -> Result<()> {
    let k = params.config().n_classes;
    if class >= k {
        return Err(HainError::contract(format!(
            "class {class} out of range for {k} classes"
        )));
    }
    Ok(())
}

fn coalition_of(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

/// Exact Shapley values by enumerating all `2^d` coalitions once.
pub fn shapley_exact(game: &dyn Game) -> Result<Explanation> {
    let n = game.n_players();
    if n > MAX_EXACT_PLAYERS {
        return Err(HainError::Capacity(format!(
            "exact Shapley values for {n} players exceed the limit of {MAX_EXACT_PLAYERS}; use shapley_sampled"
        )));
    }
    let values = (0..1u64 << n)
        .map(|m| game.value(&coalition_of(m, n)))
        .collect::<Result<Vec<f64>>>()?;
    // weight[s] = s! (n - s - 1)! / n!
    let weight: Vec<f64> = (0..n)
        .map(|s| {
            let mut w = 1.0 / n as f64;
            for j in 1..=s {
                w *= j as f64 / (n - j) as f64;
            }
            w
        })
        .collect();
    let mut phi = vec![0.0; n];
    for (mask, &v) in values.iter().enumerate() {
        let size = (mask as u64).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[size] * (values[mask | 1 << i] - v);
            }
        }
    }
    let mut e = Explanation::new(Method::ShapleyExact, game.target_class(), phi);
    e.baseline_policy = game.baseline_policy();
    Ok(e)
}

/// Mean marginal contributions along the given player orderings, with the
/// per-feature standard error of that mean.
pub fn shapley_over_permutations(game: &dyn Game, perms: &[Vec<usize>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = game.n_players();
    if perms.is_empty() {
        return Err(HainError::contract("need at least one permutation"));
    }
    let mut cache: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut eval = |c: &Vec<bool>| -> Result<f64> {
        if let Some(&v) = cache.get(c) {
            return Ok(v);
        }
        let v = game.value(c)?;
        if n <= 20 {
            cache.insert(c.clone(), v);
        }
        Ok(v)
    };
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for perm in perms {
        if perm.len() != n {
            return Err(HainError::shape(format!(
                "permutation of {} for {n} players",
                perm.len()
            )));
        }
        let mut coalition = vec![false; n];
        let mut prev = eval(&coalition)?;
        for &i in perm {
            coalition[i] = true;
            let v = eval(&coalition)?;
            let delta = v - prev;
            sum[i] += delta;
            sum_sq[i] += delta * delta;
            prev = v;
        }
    }
    let m = perms.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            if perms.len() < 2 {
                return 0.0;
            }
            let var = ((sq - m * mu * mu) / (m - 1.0)).max(0.0);
            (var / m).sqrt()
        })
        .collect();
    Ok((mean, se))
}

/// Monte Carlo Shapley values from `n_perms` uniform random orderings.
pub fn shapley_sampled(game: &dyn Game, n_perms: usize, rng: &mut Rng) -> Result<Explanation> {
    if n_perms == 0 {
        return Err(HainError::contract("n_perms must be at least 1"));
    }
    let n = game.n_players();
    let perms: Vec<Vec<usize>> = (0..n_perms).map(|_| rng.permutation(n)).collect();
    let (phi, se) = shapley_over_permutations(game, &perms)?;
    let mut e = Explanation::new(Method::ShapleySampled, game.target_class(), phi);
    e.baseline_policy = game.baseline_policy();
    e.seed = Some(rng.seed());
    e.std_error = Some(se);
    Ok(e)
}

/// Gradient of the class-`c` logit with respect to the input.
pub fn logit_gradient(params: &HainParams, x: &[f64], class: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_class(params, class)?;
    let (mut g, _, nodes) = forward_graph(params, x, false, true)?;
    let logit = g.pick(nodes.logits, 0, class)?;
    let grads = g.backward(logit)?;
    let grad = grads
        .get(nodes.input)
        .map(|m| m.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let alpha = g.value(nodes.alpha_combined).data().to_vec();
    Ok((grad, alpha))
}

/// `I_i = alpha_i * |g_i|`, scaled to unit L2 norm; a zero vector stays zero
/// and is reported as not normalized.
pub fn grad_attention_scores(alpha: &[f64], grad: &[f64]) -> (Vec<f64>, bool) {
    let raw: Vec<f64> = alpha.iter().zip(grad).map(|(a, g)| a * g.abs()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        (raw.iter().map(|v| v / norm).collect(), true)
    } else {
        (raw, false)
    }
}

/// Attention weights times absolute logit gradients.
pub fn grad_attention_explain(params: &HainParams, x: &[f64], class: usize) -> Result<Explanation> {
    let (grad, alpha) = logit_gradient(params, x, class)?;
    let (scores, normalized) = grad_attention_scores(&alpha, &grad);
    let mut e = Explanation::new(Method::GradAttention, class, scores);
    e.normalized = normalized;
    Ok(e)
}

/// Raw signed gradient of the class logit.
pub fn gradient_explain(params: &HainParams, x: &[f64], class: usize) -> Result<Explanation> {
    let (grad, _) = logit_gradient(params, x, class)?;
    Ok(Explanation::new(Method::Gradient, class, grad))
}
