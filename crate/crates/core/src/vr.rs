//! Variance reduction: a full-gradient anchor `(w, mu = grad f(w))` refreshed
//! every `m` epochs, and the estimator
//! `v = grad f_S(x) - grad f_S(w) + mu`.
//!
//! The anchor is immutable; a refresh produces a new one, so workers can
//! keep reading the old anchor until the epoch barrier.

use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::vecops;

#[derive(Debug, Clone, PartialEq)]
pub struct VrAnchor {
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub epoch_taken: usize,
}

impl VrAnchor {
    /// Snapshot at `x` with a full gradient pass.
    pub fn take(x: &[f64], epoch: usize, model: &LossModel, data: &Dataset) -> Result<Self> {
        let mu = model.full_gradient(data, x)?;
        Ok(VrAnchor { w: x.to_vec(), mu, epoch_taken: epoch })
    }
}

/// Refresh the anchor when `k mod m == 0` (or when there is none yet).
/// Returns the anchor in effect and whether a new snapshot was taken, which
/// costs one pass over the data.
pub fn schedule_update(
    x: &[f64],
    k: usize,
    m: usize,
    anchor: Option<Arc<VrAnchor>>,
    model: &LossModel,
    data: &Dataset,
) -> Result<(Arc<VrAnchor>, bool)> {
    if m == 0 {
        return Err(Error::Config("snapshot period m must be at least 1".into()));
    }
    match anchor {
        Some(a) if k % m != 0 => Ok((a, false)),
        _ => Ok((Arc::new(VrAnchor::take(x, k, model, data)?), true)),
    }
}

/// `grad f_S(x_read) - grad f_S(anchor.w) + anchor.mu`.
pub fn vr_gradient(
    model: &LossModel,
    data: &Dataset,
    sample: &[usize],
    x_read: &[f64],
    anchor: &VrAnchor,
) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySubsample);
    }
    let d = data.d();
    for v in [x_read, &anchor.w[..], &anchor.mu[..]] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    if let Some(&index) = sample.iter().find(|&&i| i >= data.n()) {
        return Err(Error::IndexOutOfRange { index, n: data.n() });
    }
    let mut out = vec![0.0; d];
    vr_gradient_into(model, data, sample, x_read, anchor, &mut out);
    Ok(out)
}

/// Unchecked variant writing into `out`. Both sample gradients share the
/// rows, so they are accumulated in one pass as `(phi'(z.x) - phi'(z.w)) z`.
pub(crate) fn vr_gradient_into(
    model: &LossModel,
    data: &Dataset,
    sample: &[usize],
    x_read: &[f64],
    anchor: &VrAnchor,
    out: &mut [f64],
) {
    out.fill(0.0);
    for &i in sample {
        let row = data.row(i);
        let y = data.label(i);
        let c = model.link_grad(row.dot(x_read), y) - model.link_grad(row.dot(&anchor.w), y);
        if c != 0.0 {
            row.axpy_into(c, out);
        }
    }
    vecops::scale(1.0 / sample.len() as f64, out);
    if model.lambda > 0.0 {
        for ((o, x), w) in out.iter_mut().zip(x_read).zip(&anchor.w) {
            *o += 2.0 * model.lambda * (x - w);
        }
    }
    vecops::axpy(1.0, &anchor.mu, out);
}
