use serde::{Deserialize, Serialize};

use super::{HainConfig, HainParams, ParamNodes};
use crate::error::{HainError, Result};
use crate::numerics::{Graph, Matrix, NodeId};

/// Every attention distribution produced by one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// One simplex per group over that group's member features.
    pub alpha_local: Vec<Vec<f64>>,
    /// Simplex over groups.
    pub alpha_global: Vec<f64>,
    /// Simplex over all features, from the pooled query.
    pub alpha_cross: Vec<f64>,
    /// `alpha_global[group(i)] * alpha_local[i]`, renormalized over features.
    pub alpha_combined: Vec<f64>,
    pub gates: Vec<f64>,
    /// Row-stochastic `G x G` group self-attention matrix.
    pub global_matrix: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub trace: AttentionTrace,
    /// Dense input embedding `ReLU(W_e x + b_e)`.
    pub embedded: Vec<f64>,
}

impl ForwardOutput {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| {
                if x > bv {
                    (i, x)
                } else {
                    (bi, bv)
                }
            },
        )
        .0
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub input: NodeId,
    pub embedded: NodeId,
    pub hidden_features: NodeId,
    pub alpha_local: NodeId,
    pub global_matrix: NodeId,
    pub alpha_global: NodeId,
    pub pooled: NodeId,
    pub alpha_cross: NodeId,
    pub alpha_combined: NodeId,
    pub gates: NodeId,
    pub logits: NodeId,
    pub probabilities: NodeId,
}

/// Records the forward pass for the `d x 1` input node `x`.
pub fn build_forward(g: &mut Graph<'_>, cfg: &HainConfig, p: &ParamNodes, x: NodeId) -> Result<ForwardNodes> {
    let d = cfg.n_features;
    if g.value(x).shape() != (d, 1) {
        return Err(HainError::shape(format!(
            "input of shape {:?}, model expects {d} features",
            g.value(x).shape()
        )));
    }
    let m = cfg.group_size;

    let wx = g.matmul(p.get("embed_w"), x)?;
    let wx = g.add(wx, p.get("embed_b"))?;
    let embedded = g.relu(wx);

    // h_i = x_i * scale_i + pos_i
    let scaled = g.scale_rows(x, p.get("feature_scale"))?;
    let h = g.add(scaled, p.get("feature_pos"))?;

    let (alpha_local, groups) = local_block(g, cfg, p, h)?;
    let global = global_block(g, cfg, p, groups)?;
    let alpha_cross = cross_block(g, cfg, p, global.pooled, h)?;
    let (global_matrix, alpha_global, pooled) = (global.matrix, global.alpha, global.pooled);

    let spread = g.segment_broadcast(alpha_global, m, d)?;
    let raw = g.mul(spread, alpha_local)?;
    let total = g.sum_all(raw);
    let alpha_combined = g.div_scalar(raw, total)?;

    let gl = g.matmul(h, p.get("gate_w"))?;
    let gl = g.add_row(gl, p.get("gate_b"))?;
    let gates = g.sigmoid(gl);

    let mix = g.mul(alpha_combined, gates)?;
    let mix_t = g.transpose(mix);
    let fused = g.matmul(mix_t, h)?;

    let head_in = g.concat_cols(pooled, fused)?;
    let hid = g.matmul(head_in, p.get("head_w1"))?;
    let hid = g.add_row(hid, p.get("head_b1"))?;
    let hid = g.relu(hid);
    let logits = g.matmul(hid, p.get("head_w2"))?;
    let logits = g.add_row(logits, p.get("head_b2"))?;
    let probabilities = g.softmax_rows(logits);

    Ok(ForwardNodes {
        input: x,
        embedded,
        hidden_features: h,
        alpha_local,
        global_matrix,
        alpha_global,
        pooled,
        alpha_cross,
        alpha_combined,
        gates,
        logits,
        probabilities,
    })
}

/// Local block: `e_i = tanh(w . h_i + b)`, softmax inside each group, and
/// the attention-weighted sum of member representations per group.
/// Returns `(alpha_local: d x 1, group_vectors: G x k)`.
pub fn local_block(g: &mut Graph<'_>, cfg: &HainConfig, p: &ParamNodes, h: NodeId) -> Result<(NodeId, NodeId)> {
    let e = g.matmul(h, p.get("local_w"))?;
    let e = g.add_row(e, p.get("local_b"))?;
    let e = g.tanh(e);
    let alpha = g.segment_softmax(e, cfg.group_size)?;
    let weighted = g.scale_rows(alpha, h)?;
    let groups = g.segment_sum(weighted, cfg.group_size)?;
    Ok((alpha, groups))
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalNodes {
    /// `G x G` attention matrix.
    pub matrix: NodeId,
    /// Attention-mixed group values, `G x k`.
    pub mixed: NodeId,
    /// `G x 1` simplex.
    pub alpha: NodeId,
    /// `1 x k` summary.
    pub pooled: NodeId,
}

/// Global block: scaled dot-product self-attention over group vectors,
/// then a tanh scorer and softmax over the mixed groups, pooled by that
/// distribution.
pub fn global_block(g: &mut Graph<'_>, cfg: &HainConfig, p: &ParamNodes, groups: NodeId) -> Result<GlobalNodes> {
    let q = g.matmul(groups, p.get("global_q"))?;
    let k = g.matmul(groups, p.get("global_k"))?;
    let v = g.matmul(groups, p.get("global_v"))?;
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, 1.0 / (cfg.key_dim as f64).sqrt());
    let matrix = match cfg.global_mask() {
        Some(mask) if mask.len() == g.value(scores).len() => g.masked_softmax_rows(scores, mask)?,
        _ => g.softmax_rows(scores),
    };
    let mixed = g.matmul(matrix, v)?;
    let e = g.matmul(mixed, p.get("global_score_w"))?;
    let e = g.add_row(e, p.get("global_score_b"))?;
    let e = g.tanh(e);
    let n_groups = g.value(e).rows();
    let alpha = g.segment_softmax(e, n_groups)?;
    let alpha_t = g.transpose(alpha);
    let pooled = g.matmul(alpha_t, mixed)?;
    Ok(GlobalNodes {
        matrix,
        mixed,
        alpha,
        pooled,
    })
}

/// Cross block: softmax over `(pooled Wq) . (h_i Wk) / sqrt(d_k)` for all
/// features. Returns a `d x 1` simplex.
pub fn cross_block(g: &mut Graph<'_>, cfg: &HainConfig, p: &ParamNodes, pooled: NodeId, h: NodeId) -> Result<NodeId> {
    let q = g.matmul(pooled, p.get("cross_q"))?;
    let k = g.matmul(h, p.get("cross_k"))?;
    let s = g.matmul_bt(k, q)?;
    let s = g.scale(s, 1.0 / (cfg.key_dim as f64).sqrt());
    let n = g.value(s).rows();
    g.segment_softmax(s, n)
}

/// Eager local attention over `d x k` feature representations.
pub fn local_attention(params: &HainParams, features: &Matrix) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let cfg = params.config();
    expect_shape(features, (cfg.n_features, cfg.embed_dim), "feature representations")?;
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let h = g.leaf(features, false);
    let (alpha, groups) = local_block(&mut g, cfg, &p, h)?;
    let a = g.value(alpha).data();
    let per_group = cfg.groups().into_iter().map(|r| a[r].to_vec()).collect();
    Ok((per_group, g.value(groups).clone()))
}

/// Eager global attention. Returns `(A, alpha_global, pooled)`.
pub fn global_attention(params: &HainParams, groups: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let cfg = params.config();
    if groups.rows() < 1 || groups.cols() != cfg.embed_dim {
        return Err(HainError::shape(format!(
            "group vectors of shape {:?}, expected G x {}",
            groups.shape(),
            cfg.embed_dim
        )));
    }
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let z = g.leaf(groups, false);
    let out = global_block(&mut g, cfg, &p, z)?;
    Ok((
        g.value(out.matrix).clone(),
        g.value(out.alpha).data().to_vec(),
        g.value(out.pooled).data().to_vec(),
    ))
}

/// Eager cross attention of a pooled summary against all features.
pub fn cross_attention(params: &HainParams, pooled: &[f64], features: &Matrix) -> Result<Vec<f64>> {
    let cfg = params.config();
    expect_shape(features, (cfg.n_features, cfg.embed_dim), "feature representations")?;
    if pooled.len() != cfg.embed_dim {
        return Err(HainError::shape(format!(
            "pooled vector of length {}, expected {}",
            pooled.len(),
            cfg.embed_dim
        )));
    }
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let q = g.leaf_owned(Matrix::row_vector(pooled), false);
    let h = g.leaf(features, false);
    let a = cross_block(&mut g, cfg, &p, q, h)?;
    Ok(g.value(a).data().to_vec())
}

fn expect_shape(m: &Matrix, shape: (usize, usize), what: &str) -> Result<()> {
    if m.shape() != shape {
        return Err(HainError::shape(format!(
            "{what} of shape {:?}, expected {:?}",
            m.shape(),
            shape
        )));
    }
    Ok(())
}

/// Per-feature representations `h_i = x_i * scale_i + pos_i` as a `d x k` matrix.
pub fn feature_representations(params: &HainParams, x: &[f64]) -> Result<Matrix> {
    let (g, _, nodes) = forward_graph(params, x, false, false)?;
    Ok(g.value(nodes.hidden_features).clone())
}

impl ForwardOutput {
    pub fn from_graph(g: &Graph<'_>, cfg: &HainConfig, n: &ForwardNodes) -> Self {
        let local = g.value(n.alpha_local).data();
        let alpha_local = cfg.groups().into_iter().map(|r| local[r].to_vec()).collect();
        ForwardOutput {
            logits: g.value(n.logits).data().to_vec(),
            probabilities: g.value(n.probabilities).data().to_vec(),
            embedded: g.value(n.embedded).data().to_vec(),
            trace: AttentionTrace {
                alpha_local,
                alpha_global: g.value(n.alpha_global).data().to_vec(),
                alpha_cross: g.value(n.alpha_cross).data().to_vec(),
                alpha_combined: g.value(n.alpha_combined).data().to_vec(),
                gates: g.value(n.gates).data().to_vec(),
                global_matrix: g.value(n.global_matrix).clone(),
            },
        }
    }
}

/// Builds a forward graph over constant parameters and an input leaf.
pub fn forward_graph<'a>(
    params: &'a HainParams,
    x: &[f64],
    params_require_grad: bool,
    input_requires_grad: bool,
) -> Result<(Graph<'a>, ParamNodes, ForwardNodes)> {
    let mut g = Graph::new();
    let pn = params.register(&mut g, params_require_grad);
    let xn = g.leaf_owned(Matrix::column(x), input_requires_grad);
    let nodes = build_forward(&mut g, params.config(), &pn, xn)?;
    Ok((g, pn, nodes))
}

pub fn forward(params: &HainParams, x: &[f64]) -> Result<ForwardOutput> {
    let (g, _, nodes) = forward_graph(params, x, false, false)?;
    Ok(ForwardOutput::from_graph(&g, params.config(), &nodes))
}

/// The dense embedding alone, without running the attention blocks.
pub fn embed(params: &HainParams, x: &[f64]) -> Result<Vec<f64>> {
    let cfg = params.config();
    if x.len() != cfg.n_features {
        return Err(HainError::shape(format!(
            "input has {} values, model expects {}",
            x.len(),
            cfg.n_features
        )));
    }
    let w = params.tensor("embed_w");
    let b = params.tensor("embed_b");
    Ok((0..w.rows())
        .map(|r| {
            let z: f64 = w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data()[r];
            z.max(0.0)
        })
        .collect())
}
