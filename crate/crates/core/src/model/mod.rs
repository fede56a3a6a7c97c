//! The hierarchical attention network: per-feature encoding, local attention
//! inside contiguous feature groups, self-attention across groups, cross
//! attention from the pooled group summary back onto every feature, sigmoid
//! feature gates and a one-hidden-layer classifier head.

mod forward;

use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::numerics::{Graph, Matrix, NodeId, Rng};

pub use forward::{
    build_forward, cross_attention, cross_block, embed, feature_representations, forward, forward_graph,
    global_attention, global_block, local_attention, local_block, AttentionTrace, ForwardNodes, ForwardOutput,
    GlobalNodes,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HainConfig {
    /// Input feature count `d`.
    pub n_features: usize,
    /// Width of each per-feature representation `h_i`.
    pub embed_dim: usize,
    /// Features per local group `m`; groups are contiguous, the last may be short.
    pub group_size: usize,
    /// Query/key width `d_k` for the global and cross blocks.
    pub key_dim: usize,
    /// Output width `d'` of the dense input embedding `ReLU(W_e x + b_e)`.
    pub reduced_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    /// When set, global attention only lets group `g` attend to groups within
    /// this distance (sparse masked attention).
    #[serde(default)]
    pub global_window: Option<usize>,
    pub seed: u64,
}

impl HainConfig {
    /// Sensible defaults for `d` features and `k` classes.
    pub fn new(n_features: usize, n_classes: usize) -> Self {
        HainConfig {
            n_features,
            embed_dim: 8,
            group_size: 20.min(n_features.max(1)),
            key_dim: 8,
            reduced_dim: 16.min(n_features.max(2) - 1).max(1),
            hidden_dim: 32,
            n_classes,
            global_window: None,
            seed: 0,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_features.div_ceil(self.group_size.max(1))
    }

    pub fn group_of(&self, feature: usize) -> usize {
        feature / self.group_size
    }

    /// Feature index range of every group.
    pub fn groups(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.n_groups())
            .map(|g| g * self.group_size..((g + 1) * self.group_size).min(self.n_features))
            .collect()
    }

    pub fn head_input_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HainError::contract(format!("invalid model config: {m}")));
        if self.n_features < 1 {
            return fail("need at least one feature");
        }
        if self.group_size < 1 {
            return fail("group size must be at least 1");
        }
        if self.n_classes < 2 {
            return fail("need at least two classes");
        }
        if self.embed_dim < 1 || self.key_dim < 1 || self.hidden_dim < 1 || self.reduced_dim < 1 {
            return fail("layer widths must be positive");
        }
        Ok(())
    }

    /// Row-major `G x G` permission mask for the global block, if windowed.
    pub fn global_mask(&self) -> Option<Vec<bool>> {
        let w = self.global_window?;
        let g = self.n_groups();
        Some((0..g * g).map(|k| (k / g).abs_diff(k % g) <= w).collect())
    }
}

/// Names of the learnable tensors, in storage order.
pub const TENSOR_NAMES: [&str; 19] = [
    "embed_w",
    "embed_b",
    "feature_scale",
    "feature_pos",
    "local_w",
    "local_b",
    "global_q",
    "global_k",
    "global_v",
    "global_score_w",
    "global_score_b",
    "cross_q",
    "cross_k",
    "gate_w",
    "gate_b",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
];

/// Tensors initialized to zero rather than Xavier-uniform.
const BIASES: [&str; 6] = ["embed_b", "local_b", "global_score_b", "gate_b", "head_b1", "head_b2"];

/// All learnable parameters, stored in [`TENSOR_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct HainParams {
    config: HainConfig,
    tensors: Vec<Matrix>,
}

/// One node per parameter tensor, in [`TENSOR_NAMES`] order.
#[derive(Clone, Debug)]
pub struct ParamNodes(pub Vec<NodeId>);

impl ParamNodes {
    pub fn get(&self, name: &str) -> NodeId {
        self.0[tensor_index(name)]
    }
}

pub fn tensor_index(name: &str) -> usize {
    TENSOR_NAMES
        .iter()
        .position(|n| *n == name)
        .unwrap_or_else(|| panic!("unknown tensor {name}"))
}

/// `(rows, cols)` of every tensor for a config.
pub fn tensor_shapes(cfg: &HainConfig) -> Vec<(usize, usize)> {
    let (d, k, dk, r, h, c) = (
        cfg.n_features,
        cfg.embed_dim,
        cfg.key_dim,
        cfg.reduced_dim,
        cfg.hidden_dim,
        cfg.n_classes,
    );
    vec![
        (r, d),
        (r, 1),
        (d, k),
        (d, k),
        (k, 1),
        (1, 1),
        (k, dk),
        (k, dk),
        (k, k),
        (k, 1),
        (1, 1),
        (k, dk),
        (k, dk),
        (k, 1),
        (1, 1),
        (cfg.head_input_dim(), h),
        (1, h),
        (h, c),
        (1, c),
    ]
}

/// Xavier-uniform bound `sqrt(6 / (fan_in + fan_out))` for a tensor shape.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Xavier-uniform weights, zero biases. Tensors draw from independent
/// streams of `rng`'s seed.
pub fn init_params(cfg: &HainConfig, rng: &Rng) -> Result<HainParams> {
    cfg.validate()?;
    let tensors = tensor_shapes(cfg)
        .into_iter()
        .zip(TENSOR_NAMES)
        .enumerate()
        .map(|(i, ((rows, cols), name))| {
            if BIASES.contains(&name) {
                return Matrix::zeros(rows, cols);
            }
            let a = match name {
                // Each row embeds one scalar input, so the fans are (1, k).
                "feature_scale" | "feature_pos" => xavier_bound(1, cols),
                _ => xavier_bound(rows, cols),
            };
            let mut stream = rng.derive(1000 + i as u64);
            let data = (0..rows * cols).map(|_| stream.uniform_range(-a, a)).collect();
            Matrix::from_vec(rows, cols, data).expect("shape from tensor_shapes")
        })
        .collect();
    Ok(HainParams {
        config: cfg.clone(),
        tensors,
    })
}

impl HainParams {
    /// Builds parameters from explicit tensors, validating every shape.
    pub fn from_tensors(config: HainConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let shapes = tensor_shapes(&config);
        if tensors.len() != shapes.len() {
            return Err(HainError::shape(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(TENSOR_NAMES) {
            if t.shape() != *s {
                return Err(HainError::shape(format!(
                    "{name}: expected {:?}, got {:?}",
                    s,
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(HainError::contract(format!("{name} has non-finite entries")));
            }
        }
        Ok(HainParams { config, tensors })
    }

    pub fn config(&self) -> &HainConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> &Matrix {
        &self.tensors[tensor_index(name)]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.tensors[tensor_index(name)]
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Adds every tensor as a graph leaf.
    pub fn register<'a>(&'a self, g: &mut Graph<'a>, requires_grad: bool) -> ParamNodes {
        ParamNodes(self.tensors.iter().map(|t| g.leaf(t, requires_grad)).collect())
    }

    /// Zero tensors of matching shapes.
    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect()
    }

    /// `w <- w - lr * grad` for every tensor.
    pub fn sgd_step(&mut self, grads: &[Matrix], lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (t, g) in self.tensors.iter_mut().zip(grads) {
            for (w, dw) in t.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * dw;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}
