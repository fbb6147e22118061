//! Multi-scale attention-based feature enhancement.
//!
//! Base-scale embeddings are first substituted with their mapped
//! largest-scale embeddings, then refined for N iterations: each step
//! blends a row-stochastic attention map built from the fixed multi-scale
//! affinity M with one built from the evolving cosine affinity C of the
//! current embeddings, shifting weight from M towards C, and multiplies it
//! into the embedding matrix.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMatrix;
use crate::embedding::MultiScaleEmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, matmul, row_softmax_scaled};
use crate::scalar::Scalar;

/// Refined base-scale embedding matrix (same shape as the input).
pub type EnhancedEmbeddings<T> = Array2<T>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AAConfig {
    /// Number of refinement repetitions N (dataset presets: 10, 20, 10, 15).
    pub iterations: usize,
    /// Softmax temperature; attention logits are similarity / temperature
    /// (0.30 for all datasets).
    pub temperature: f64,
}

impl Default for AAConfig {
    fn default() -> Self {
        Self { iterations: 10, temperature: 0.30 }
    }
}

impl AAConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("enhancement iterations must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("enhancement temperature must be positive"));
        }
        Ok(())
    }
}

/// Picks, per base segment, the mapped embedding of the largest-window
/// scale in the set. A single-scale set therefore falls back to the base
/// embedding itself; the chain is total because the closest-midpoint
/// mapping is.
pub fn substitute_base_embeddings<T: Scalar>(set: &MultiScaleEmbeddingSet<T>) -> Array2<T> {
    let mut order: Vec<usize> = (0..set.num_scales()).collect();
    order.sort_by(|&a, &b| {
        set.scales()[b]
            .window
            .partial_cmp(&set.scales()[a].window)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let source = order[0];
    let l = set.num_base_segments();
    let mut out = Array2::<T>::zeros((l, set.dim()));
    for i in 0..l {
        let row = set.embedding(source, set.mapping().mapped_index(i, source));
        out.row_mut(i).assign(&row);
    }
    out
}

fn cosine_matrix<T: Scalar>(x: ArrayView2<'_, T>, iteration: usize) -> Result<Array2<T>> {
    let l = x.nrows();
    let mut norms = Vec::with_capacity(l);
    for (r, row) in x.rows().into_iter().enumerate() {
        let n = linalg::norm2(row.as_slice().expect("contiguous"));
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::invalid_input(format!(
                "enhancement iteration {iteration}: row {r} has zero norm"
            )));
        }
        norms.push(n);
    }
    let mut c = Array2::<T>::zeros((l, l));
    for i in 0..l {
        for j in 0..l {
            c[[i, j]] = linalg::dot(
                x.row(i).as_slice().expect("contiguous"),
                x.row(j).as_slice().expect("contiguous"),
            ) / (norms[i] * norms[j]);
        }
    }
    Ok(c)
}

/// Runs the refinement loop, invoking `observer` with each iteration's
/// blended attention map before it is applied.
pub fn enhance_with_observer<T: Scalar>(
    x: ArrayView2<'_, T>,
    affinity: &AffinityMatrix<T>,
    cfg: &AAConfig,
    mut observer: impl FnMut(usize, &Array2<T>),
) -> Result<EnhancedEmbeddings<T>> {
    cfg.validate()?;
    let l = x.nrows();
    if affinity.len() != l {
        return Err(Error::dimension(format!(
            "affinity is {}x{} but embeddings have {l} rows",
            affinity.len(),
            affinity.len()
        )));
    }
    for (idx, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("embedding value at flat index {idx}")));
        }
    }

    let n = cfg.iterations;
    // Temperature in the standard sense: logits are similarities / tau, so
    // tau below 1 sharpens the attention rows.
    let inv_tau = T::one() / T::from_f64_lossy(cfg.temperature);
    let n_t = T::from_f64_lossy(n as f64);
    // The multi-scale map never changes inside the loop.
    let a1 = row_softmax_scaled(affinity.view(), inv_tau);

    let mut current = x.to_owned();
    for i in 0..n {
        let c = cosine_matrix(current.view(), i)?;
        let a2 = row_softmax_scaled(c.view(), inv_tau);
        let w1 = T::from_f64_lossy((n - i) as f64);
        let w2 = T::from_f64_lossy(i as f64);
        let mut blend = Array2::<T>::zeros((l, l));
        for ((r, s), v) in blend.indexed_iter_mut() {
            *v = (w1 * a1[[r, s]] + w2 * a2[[r, s]]) / n_t;
        }
        observer(i, &blend);
        current = matmul(blend.view(), current.view());
    }
    Ok(current)
}

/// Refines the embeddings per the attention-blend loop.
pub fn enhance<T: Scalar>(
    x: ArrayView2<'_, T>,
    affinity: &AffinityMatrix<T>,
    cfg: &AAConfig,
) -> Result<EnhancedEmbeddings<T>> {
    enhance_with_observer(x, affinity, cfg, |_, _| {})
}
