//! Limited-memory inverse-Hessian approximation.
//!
//! [`CorrectionHistory`] keeps the newest `capacity` curvature pairs and
//! applies the approximation to a vector with the two-loop recursion. The
//! seed matrix is `gamma * I` with `gamma = s'y / y'y` taken from the newest
//! pair (identity when the history is empty).
//!
//! [`CorrectionHistory::dense_inverse_hessian`] builds the same matrix
//! explicitly with the BFGS update `H <- V' H V + rho s s'`,
//! `V = I - rho y s'`, applied oldest pair first. It exists to check the
//! recursion and is never used on the optimizer hot path.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::vecops::{all_finite, axpy, dot, norm, scale};

/// Relative curvature tolerance: pairs with `s'y < SKIP_TOL * |s| |y|` are
/// not stored.
pub const SKIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    /// `1 / (y's)`
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    Skipped,
}

/// Ring buffer of correction pairs, oldest first.
#[derive(Debug, Clone)]
pub struct CorrectionHistory {
    pairs: VecDeque<CorrectionPair>,
    capacity: usize,
}

impl CorrectionHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory size M must be at least 1".into()));
        }
        Ok(CorrectionHistory { pairs: VecDeque::with_capacity(capacity), capacity })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> impl Iterator<Item = &CorrectionPair> {
        self.pairs.iter()
    }

    fn dim(&self) -> Option<usize> {
        self.pairs.front().map(|p| p.s.len())
    }

    /// Store `(s, y)` if it carries positive curvature, evicting the oldest
    /// pair when full.
    pub fn push_pair(&mut self, s: &[f64], y: &[f64]) -> Result<PushOutcome> {
        if s.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: s.len(), got: y.len() });
        }
        if let Some(d) = self.dim() {
            if s.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.len() });
            }
        }
        if !all_finite(s) || !all_finite(y) {
            return Err(Error::NonFinitePair);
        }
        let (ns, ny) = (norm(s), norm(y));
        if ns == 0.0 {
            return Err(Error::ZeroStep);
        }
        let sy = dot(s, y);
        if !(sy >= SKIP_TOL * ns * ny) || sy <= 0.0 {
            return Ok(PushOutcome::Skipped);
        }
        let rho = 1.0 / sy;
        if !rho.is_finite() {
            return Ok(PushOutcome::Skipped);
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CorrectionPair { s: s.to_vec(), y: y.to_vec(), rho });
        Ok(PushOutcome::Accepted)
    }

    /// Seed scaling `gamma = s'y / y'y` of the newest pair; 1 when empty.
    pub fn seed_scale(&self) -> f64 {
        match self.pairs.back() {
            Some(p) => 1.0 / (p.rho * dot(&p.y, &p.y)),
            None => 1.0,
        }
    }

    /// Search direction `-H v` via the two-loop recursion.
    pub fn two_loop_direction(&self, v: &[f64]) -> Result<Vec<f64>> {
        if let Some(d) = self.dim() {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        if !all_finite(v) {
            return Err(Error::NonFiniteVector);
        }
        let mut p: Vec<f64> = v.iter().map(|x| -x).collect();
        if self.pairs.is_empty() {
            return Ok(p);
        }
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, pair) in self.pairs.iter().enumerate().rev() {
            alpha[i] = pair.rho * dot(&pair.s, &p);
            axpy(-alpha[i], &pair.y, &mut p);
        }
        scale(self.seed_scale(), &mut p);
        for (i, pair) in self.pairs.iter().enumerate() {
            let beta = pair.rho * dot(&pair.y, &p);
            axpy(alpha[i] - beta, &pair.s, &mut p);
        }
        Ok(p)
    }

    /// The explicit `d x d` inverse-Hessian approximation.
    pub fn dense_inverse_hessian(&self, d: usize) -> Result<DMatrix<f64>> {
        if let Some(pd) = self.dim() {
            if pd != d {
                return Err(Error::DimensionMismatch { expected: pd, got: d });
            }
        }
        let mut h = DMatrix::<f64>::identity(d, d) * self.seed_scale();
        let eye = DMatrix::<f64>::identity(d, d);
        for pair in &self.pairs {
            let s = DMatrix::from_column_slice(d, 1, &pair.s);
            let y = DMatrix::from_column_slice(d, 1, &pair.y);
            let v = &eye - (&y * s.transpose()) * pair.rho;
            h = v.transpose() * &h * &v + (&s * s.transpose()) * pair.rho;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_curvature_pair() {
        let mut h = CorrectionHistory::new(10).unwrap();
        assert_eq!(h.push_pair(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), PushOutcome::Accepted);
        assert_eq!(h.len(), 1);
        assert_eq!(h.pairs().next().unwrap().rho, 0.5);
    }

    #[test]
    fn skips_orthogonal_pair() {
        let mut h = CorrectionHistory::new(10).unwrap();
        assert_eq!(h.push_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), PushOutcome::Skipped);
        assert!(h.is_empty());
        assert_eq!(h.push_pair(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), PushOutcome::Skipped);
    }

    #[test]
    fn evicts_oldest_when_full() {
        let mut h = CorrectionHistory::new(10).unwrap();
        for k in 0..11 {
            let s = [1.0 + k as f64, 0.0];
            assert_eq!(h.push_pair(&s, &[1.0, 0.0]).unwrap(), PushOutcome::Accepted);
        }
        assert_eq!(h.len(), 10);
        assert_eq!(h.pairs().next().unwrap().s[0], 2.0);
    }

    #[test]
    fn push_errors() {
        let mut h = CorrectionHistory::new(3).unwrap();
        assert!(matches!(h.push_pair(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(h.push_pair(&[f64::NAN], &[1.0]), Err(Error::NonFinitePair));
        assert_eq!(h.push_pair(&[1.0], &[f64::INFINITY]), Err(Error::NonFinitePair));
        assert_eq!(h.push_pair(&[0.0], &[1.0]), Err(Error::ZeroStep));
        h.push_pair(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(h.push_pair(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(CorrectionHistory::new(0).is_err());
    }

    #[test]
    fn direction_examples() {
        let empty = CorrectionHistory::new(5).unwrap();
        assert_eq!(empty.two_loop_direction(&[3.0, -1.0]).unwrap(), vec![-3.0, 1.0]);
        let mut h = CorrectionHistory::new(5).unwrap();
        h.push_pair(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(h.two_loop_direction(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(h.two_loop_direction(&[1.0, 1.0]).unwrap(), vec![-0.5, -0.5]);
        assert_eq!(h.two_loop_direction(&[f64::NAN, 0.0]), Err(Error::NonFiniteVector));
    }

    #[test]
    fn dense_examples() {
        let empty = CorrectionHistory::new(5).unwrap();
        assert_eq!(empty.dense_inverse_hessian(3).unwrap(), DMatrix::identity(3, 3));
        let mut h = CorrectionHistory::new(5).unwrap();
        h.push_pair(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        let m = h.dense_inverse_hessian(2).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        assert!(h.dense_inverse_hessian(3).is_err());
    }
}
