//! Loss families and their per-sample oracles.
//!
//! Every loss here is a generalized linear model: with prediction
//! `p = z_i . x`, the summand is `f_i(x) = phi(p, y_i) + lambda * |x|^2`, so
//! value, gradient and Hessian-vector product reduce to the scalar link
//! derivatives `phi`, `phi'`, `phi''`:
//!
//! | kind         | phi                    | phi'                  | phi''              |
//! |--------------|------------------------|-----------------------|--------------------|
//! | LeastSquares | `(y - p)^2`            | `-2 (y - p)`          | `2`                |
//! | Logistic     | `ln(1 + exp(+y p))`    | `sigmoid(y p) y`      | `s (1 - s) y^2`    |
//! | Hinge        | `max(0, 1 - y p)`      | `-y` if `y p < 1`     | `0`                |
//!
//! The logistic summand keeps the `+y p` sign inside the exponential exactly
//! as the experiments define it; with labels in `{-1, +1}` this is ordinary
//! logistic regression with the labels flipped. At the hinge kink `y p = 1`
//! the zero branch of the subgradient is returned.
//!
//! Sums run over the sample indices in the order given and are divided once
//! at the end, so results are deterministic for a fixed index order.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    LeastSquares,
    Logistic,
    Hinge,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::LeastSquares => "least-squares",
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, LossKind::Hinge)
    }
}

/// A loss family with its L2 weight `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
    pub lambda: f64,
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LossModel {
    pub fn new(kind: LossKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        Ok(LossModel { kind, lambda })
    }

    pub fn least_squares() -> Self {
        LossModel { kind: LossKind::LeastSquares, lambda: 0.0 }
    }

    pub fn logistic(lambda: f64) -> Self {
        LossModel { kind: LossKind::Logistic, lambda }
    }

    pub fn hinge(lambda: f64) -> Self {
        LossModel { kind: LossKind::Hinge, lambda }
    }

    #[inline]
    pub fn link(&self, p: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::LeastSquares => (y - p) * (y - p),
            LossKind::Logistic => softplus(y * p),
            LossKind::Hinge => (1.0 - y * p).max(0.0),
        }
    }

    /// `phi'(p, y)`: the scalar multiplying `z_i` in the per-sample gradient.
    #[inline]
    pub fn link_grad(&self, p: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::LeastSquares => -2.0 * (y - p),
            LossKind::Logistic => sigmoid(y * p) * y,
            LossKind::Hinge => {
                if y * p < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub fn link_curvature(&self, p: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::LeastSquares => 2.0,
            LossKind::Logistic => {
                let s = sigmoid(y * p);
                s * (1.0 - s) * y * y
            }
            LossKind::Hinge => 0.0,
        }
    }

    fn check(&self, data: &Dataset, indices: &[usize], x: &[f64]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::EmptySubsample);
        }
        if x.len() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: x.len() });
        }
        let n = data.n();
        if let Some(&index) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index, n });
        }
        Ok(())
    }

    /// Mean of `f_i(x)` over `indices`.
    pub fn sample_loss(&self, data: &Dataset, indices: &[usize], x: &[f64]) -> Result<f64> {
        self.check(data, indices, x)?;
        Ok(self.loss_unchecked(data, indices.iter().copied(), indices.len(), x))
    }

    pub fn full_loss(&self, data: &Dataset, x: &[f64]) -> Result<f64> {
        if x.len() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: x.len() });
        }
        Ok(self.loss_unchecked(data, 0..data.n(), data.n(), x))
    }

    fn loss_unchecked(
        &self,
        data: &Dataset,
        indices: impl Iterator<Item = usize>,
        count: usize,
        x: &[f64],
    ) -> f64 {
        let mut acc = 0.0;
        for i in indices {
            acc += self.link(data.row(i).dot(x), data.label(i));
        }
        let reg = if self.lambda > 0.0 { self.lambda * vecops::dot(x, x) } else { 0.0 };
        acc / count as f64 + reg
    }

    /// Mean of `grad f_i(x)` over `indices`.
    pub fn sample_gradient(&self, data: &Dataset, indices: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        self.check(data, indices, x)?;
        let mut out = vec![0.0; x.len()];
        self.gradient_into(data, indices.iter().copied(), indices.len(), x, &mut out);
        Ok(out)
    }

    pub fn full_gradient(&self, data: &Dataset, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: x.len() });
        }
        let mut out = vec![0.0; x.len()];
        self.gradient_into(data, 0..data.n(), data.n(), x, &mut out);
        Ok(out)
    }

    /// Overwrites `out` with the mean gradient; inputs are assumed valid.
    pub(crate) fn gradient_into(
        &self,
        data: &Dataset,
        indices: impl Iterator<Item = usize>,
        count: usize,
        x: &[f64],
        out: &mut [f64],
    ) {
        out.fill(0.0);
        for i in indices {
            let row = data.row(i);
            let c = self.link_grad(row.dot(x), data.label(i));
            if c != 0.0 {
                row.axpy_into(c, out);
            }
        }
        vecops::scale(1.0 / count as f64, out);
        if self.lambda > 0.0 {
            vecops::axpy(2.0 * self.lambda, x, out);
        }
    }

    /// Mean of `hess f_i(x) v` over `indices`.
    pub fn hessian_vector_product(
        &self,
        data: &Dataset,
        indices: &[usize],
        x: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(data, indices, x)?;
        if v.len() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), got: v.len() });
        }
        let mut out = vec![0.0; x.len()];
        for &i in indices {
            let row = data.row(i);
            let c = self.link_curvature(row.dot(x), data.label(i));
            if c != 0.0 {
                row.axpy_into(c * row.dot(v), &mut out);
            }
        }
        vecops::scale(1.0 / indices.len() as f64, &mut out);
        if self.lambda > 0.0 {
            vecops::axpy(2.0 * self.lambda, v, &mut out);
        }
        Ok(out)
    }
}
