//! Reference optimum `f*` for gap reporting.
//!
//! Least squares is solved from the normal equations
//! `(2/n Z'Z + 2 lambda I) x = 2/n Z'y` (Cholesky, with a `1e-12` ridge when
//! the system is singular) for `d <= 2000`, and by conjugate gradients
//! beyond that. Logistic uses full-batch L-BFGS with backtracking. Hinge is
//! nonsmooth, so it gets a long SVRG run with a decaying step and reports
//! the subgradient norm it ended at.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lbfgs::CorrectionHistory;
use crate::model::{LossKind, LossModel};
use crate::vecops::{axpy, dot, norm};

/// Largest dimension solved with a dense factorization.
pub const DENSE_SOLVE_MAX_D: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub f_star: f64,
    pub x_star: Vec<f64>,
    /// Full (sub)gradient norm at `x_star`.
    pub grad_norm: f64,
    pub method: &'static str,
}

pub fn compute_reference_optimum(model: &LossModel, data: &Dataset) -> Result<ReferenceOptimum> {
    let (x_star, method) = match model.kind {
        LossKind::LeastSquares if data.d() <= DENSE_SOLVE_MAX_D => (normal_equations(model, data)?, "normal-equations"),
        LossKind::LeastSquares => (conjugate_gradient(model, data)?, "conjugate-gradient"),
        LossKind::Logistic => (full_batch_lbfgs(model, data)?, "lbfgs"),
        LossKind::Hinge => (hinge_svrg(model, data, 10_000)?, "svrg"),
    };
    let f_star = model.full_loss(data, &x_star)?;
    let grad_norm = norm(&model.full_gradient(data, &x_star)?);
    Ok(ReferenceOptimum { f_star, x_star, grad_norm, method })
}

/// `(2/n) Z'Z`
pub fn gram_matrix(data: &Dataset) -> DMatrix<f64> {
    let d = data.d();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for i in 0..data.n() {
        let e = data.row(i).entries();
        for &(a, va) in &e {
            for &(b, vb) in &e {
                g[(a, b)] += va * vb;
            }
        }
    }
    g * (2.0 / data.n() as f64)
}

fn normal_equations(model: &LossModel, data: &Dataset) -> Result<Vec<f64>> {
    let d = data.d();
    let n = data.n() as f64;
    let mut g = gram_matrix(data);
    for j in 0..d {
        g[(j, j)] += 2.0 * model.lambda;
    }
    let mut rhs = DVector::<f64>::zeros(d);
    for i in 0..data.n() {
        for (j, v) in data.row(i).entries() {
            rhs[j] += v * data.label(i);
        }
    }
    rhs *= 2.0 / n;
    let x = match g.clone().cholesky() {
        Some(c) => {
            let mut x = c.solve(&rhs);
            // one step of iterative refinement
            let r = &rhs - &g * &x;
            x += c.solve(&r);
            x
        }
        None => {
            log::warn!("normal equations singular; using ridge 1e-12");
            let mut gr = g.clone();
            for j in 0..d {
                gr[(j, j)] += 1e-12;
            }
            gr.cholesky()
                .ok_or_else(|| Error::Dataset("normal equations not solvable".into()))?
                .solve(&rhs)
        }
    };
    Ok(x.iter().copied().collect())
}

fn conjugate_gradient(model: &LossModel, data: &Dataset) -> Result<Vec<f64>> {
    let d = data.d();
    let all: Vec<usize> = (0..data.n()).collect();
    let zero = vec![0.0; d];
    let apply = |v: &[f64]| model.hessian_vector_product(data, &all, &zero, v);
    // b = -grad f(0)
    let mut r: Vec<f64> = model.full_gradient(data, &zero)?.iter().map(|g| -g).collect();
    let tol = 1e-14 * norm(&r).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; d];
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..(10 * d).max(100) {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = apply(&p)?;
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(x)
}

fn full_batch_lbfgs(model: &LossModel, data: &Dataset) -> Result<Vec<f64>> {
    let d = data.d();
    let mut x = vec![0.0; d];
    let mut f = model.full_loss(data, &x)?;
    let mut g = model.full_gradient(data, &x)?;
    let mut history = CorrectionHistory::new(10)?;
    for _ in 0..10_000 {
        if norm(&g) <= 1e-12 {
            break;
        }
        let mut p = history.two_loop_direction(&g)?;
        let mut slope = dot(&g, &p);
        if slope >= 0.0 {
            p = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x.clone();
            axpy(step, &p, &mut xn);
            let fnew = model.full_loss(data, &xn)?;
            if fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = model.full_gradient(data, &xn)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if norm(&s) > 0.0 {
            history.push_pair(&s, &y)?;
        }
        let stalled = fnew >= f && norm(&s) == 0.0;
        x = xn;
        f = fnew;
        g = gn;
        if stalled {
            break;
        }
    }
    Ok(x)
}

fn hinge_svrg(model: &LossModel, data: &Dataset, max_epochs: usize) -> Result<Vec<f64>> {
    let n = data.n();
    let d = data.d();
    let max_row = (0..n).map(|i| data.row(i).norm_sq()).fold(0.0, f64::max);
    let eta0 = 1.0 / (max_row + 2.0 * model.lambda).max(1e-12);
    let mut x = vec![0.0; d];
    let mut best = (model.full_loss(data, &x)?, x.clone());
    let mut since_best = 0;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5eed);
    let mut sample = Vec::with_capacity(1);
    for k in 0..max_epochs {
        let anchor = crate::vr::VrAnchor::take(&x, k, model, data)?;
        let eta = eta0 / (1.0 + k as f64);
        let mut v = vec![0.0; d];
        for _ in 0..n {
            crate::engine::sample_indices(&mut rng, n, 1, &mut sample);
            crate::vr::vr_gradient_into(model, data, &sample, &x, &anchor, &mut v);
            axpy(-eta, &v, &mut x);
        }
        let f = model.full_loss(data, &x)?;
        if f < best.0 {
            best = (f, x.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 100 {
                break;
            }
        }
    }
    Ok(best.1)
}
