use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::model::{forward_graph, ForwardOutput, HainParams};
use crate::numerics::{softmax_in_place, Matrix};

/// Boolean permission pattern congruent to an attention matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(HainError::shape(format!(
                "mask of {} entries for {rows}x{cols}",
                allowed.len()
            )));
        }
        Ok(AttentionMask { rows, cols, allowed })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn diagonal(n: usize) -> Self {
        Self::banded(n, 0)
    }

    /// Square mask permitting `|i - j| <= width`.
    pub fn banded(n: usize, width: usize) -> Self {
        AttentionMask {
            rows: n,
            cols: n,
            allowed: (0..n * n).map(|k| (k / n).abs_diff(k % n) <= width).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.allowed[r * self.cols..(r + 1) * self.cols]
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

/// Row softmax over permitted entries only; forbidden entries are exactly 0.
pub fn masked_attention(scores: &Matrix, mask: &AttentionMask) -> Result<Matrix> {
    if scores.shape() != mask.shape() {
        return Err(HainError::shape(format!(
            "scores {:?} vs mask {:?}",
            scores.shape(),
            mask.shape()
        )));
    }
    let mut out = scores.clone();
    for r in 0..out.rows() {
        if !softmax_in_place(out.row_mut(r), Some(mask.row(r))) {
            return Err(HainError::contract(format!("row {r} of the mask permits nothing")));
        }
    }
    Ok(out)
}

/// Per-row outputs of a chunked batch evaluation.
#[derive(Clone, Debug)]
pub struct ChunkedOutput {
    pub outputs: Vec<ForwardOutput>,
    /// Largest number of intermediate floats alive at once.
    pub peak_working_floats: usize,
}

/// Evaluates the rows of `x` in chunks of `chunk_size`, keeping at most one
/// chunk of intermediate state alive.
pub fn chunked_forward(params: &HainParams, x: &Matrix, chunk_size: usize) -> Result<ChunkedOutput> {
    if chunk_size == 0 {
        return Err(HainError::contract("chunk size must be at least 1"));
    }
    let cfg = params.config();
    if x.cols() != cfg.n_features {
        return Err(HainError::shape(format!(
            "batch has {} columns, model expects {}",
            x.cols(),
            cfg.n_features
        )));
    }
    let mut outputs = Vec::with_capacity(x.rows());
    let mut peak = 0;
    for start in (0..x.rows()).step_by(chunk_size) {
        let end = (start + chunk_size).min(x.rows());
        let graphs = (start..end)
            .map(|r| forward_graph(params, x.row(r), false, false))
            .collect::<Result<Vec<_>>>()?;
        peak = peak.max(graphs.iter().map(|(g, _, _)| g.footprint()).sum());
        outputs.extend(
            graphs
                .iter()
                .map(|(g, _, nodes)| ForwardOutput::from_graph(g, cfg, nodes)),
        );
    }
    Ok(ChunkedOutput {
        outputs,
        peak_working_floats: peak,
    })
}
