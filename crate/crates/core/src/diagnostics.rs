//! Closed-form convergence diagnostics.
//!
//! The worst-case inverse-Hessian bounds
//! `mu1 = 1 / ((d+M) l)` and `mu2 = ((d+M) l)^(d+M-1) / mu^(d+M)` overflow
//! `f64` for any realistic `d`, so everything here is carried as natural
//! logarithms and only exponentiated at the end.
//!
//! None of these quantities gate a run; the harness grid-searches the step
//! size instead. They serve as a pre-run report and as test oracles.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use num_rational::Ratio;

use crate::data::Dataset;
use crate::engine::Algorithm;
use crate::error::{Error, Result};
use crate::model::{LossKind, LossModel};
use crate::reference::{gram_matrix, DENSE_SOLVE_MAX_D};
use crate::vecops::{dot, norm, scale};

/// `ln(e^a + e^b)`
fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `ln(1 + e^t)`
fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Problem and algorithm constants entering the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Strong convexity.
    pub mu: f64,
    /// Gradient Lipschitz constant.
    pub l: f64,
    pub d: usize,
    pub memory: usize,
    /// Anchor period.
    pub m: f64,
    /// Delay bound.
    pub tau: f64,
    pub eta: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= self.l && self.l.is_finite()) {
            return Err(Error::Config("need 0 < mu <= l".into()));
        }
        if self.d + self.memory == 0 {
            return Err(Error::Config("d + M must be positive".into()));
        }
        if !(self.m > 0.0) || !(self.tau >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config("need m > 0, tau >= 0, eta >= 0".into()));
        }
        Ok(())
    }

    pub fn kappa_b(&self) -> f64 {
        self.l / self.mu
    }
}

/// `mu1 I <= H <= mu2 I`, stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseHessianBounds {
    pub log_mu1: f64,
    pub log_mu2: f64,
}

impl InverseHessianBounds {
    pub fn explicit(mu1: f64, mu2: f64) -> Self {
        InverseHessianBounds { log_mu1: mu1.ln(), log_mu2: mu2.ln() }
    }

    pub fn log_kappa_h(&self) -> f64 {
        self.log_mu2 - self.log_mu1
    }

    pub fn mu1(&self) -> f64 {
        self.log_mu1.exp()
    }

    pub fn mu2(&self) -> f64 {
        self.log_mu2.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Bounds {
    pub bounds: InverseHessianBounds,
    pub log_kappa_h: f64,
    /// `|ln kappa(H) - (d+M)(ln(d+M) + ln kappa(B))|`, relative to
    /// `max(1, |ln kappa(H)|)`.
    pub identity_residual: f64,
}

/// Worst-case inverse-Hessian bounds in log form.
pub fn lemma2_bounds(c: &ProblemConstants) -> Result<Lemma2Bounds> {
    c.validate()?;
    let k = (c.d + c.memory) as f64;
    let ln_kl = k.ln() + c.l.ln();
    let log_mu1 = -ln_kl;
    let log_mu2 = (k - 1.0) * ln_kl - k * c.mu.ln();
    let log_kappa_h = log_mu2 - log_mu1;
    let identity = k * (k.ln() + c.kappa_b().ln());
    let identity_residual = (log_kappa_h - identity).abs() / log_kappa_h.abs().max(1.0);
    Ok(Lemma2Bounds {
        bounds: InverseHessianBounds { log_mu1, log_mu2 },
        log_kappa_h,
        identity_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaRate {
    pub log_c: f64,
    pub c: f64,
    pub theta: f64,
    /// `1 - theta = (B - 2C) / (1 + B - C)` with `B = m eta mu mu1`,
    /// accurate when `theta` is within rounding of one.
    pub one_minus_theta: f64,
    /// `0 < theta < 1`
    pub contracts: bool,
}

/// Per-epoch contraction factor `theta = (1 + C) / (1 + m eta mu mu1 - C)`
/// with `C = 4 m l^2 eta^2 mu2^2 (l eta mu1 tau + 1) / (1 - 2 l^2 eta^2 mu2^2 tau^2)`.
pub fn theta_rate(c: &ProblemConstants, h: &InverseHessianBounds) -> Result<ThetaRate> {
    c.validate()?;
    let (ln_l, ln_eta, ln_tau, ln_m) = (c.l.ln(), c.eta.ln(), c.tau.ln(), c.m.ln());
    let log_a = std::f64::consts::LN_2 + 2.0 * (ln_l + ln_eta + h.log_mu2 + ln_tau);
    if log_a >= 0.0 {
        return Err(Error::DelayBound { bound: delay_bound_log(c, h).exp() });
    }
    let log_one_minus_a = (-log_a.exp_m1()).ln();
    let log_inner = log1p_exp(ln_l + ln_eta + h.log_mu1 + ln_tau);
    let log_c = 4f64.ln() + ln_m + 2.0 * (ln_l + ln_eta + h.log_mu2) + log_inner - log_one_minus_a;
    let log_b = ln_m + ln_eta + c.mu.ln() + h.log_mu1;
    let s = 0f64.max(log_c).max(log_b);
    let num = (-s).exp() + (log_c - s).exp();
    let den = (-s).exp() + (log_b - s).exp() - (log_c - s).exp();
    let theta = num / den;
    let one_minus_theta = ((log_b - s).exp() - 2.0 * (log_c - s).exp()) / den;
    Ok(ThetaRate {
        log_c,
        c: log_c.exp(),
        theta,
        one_minus_theta,
        contracts: den > 0.0 && theta > 0.0 && theta < 1.0,
    })
}

fn delay_bound_log(c: &ProblemConstants, h: &InverseHessianBounds) -> f64 {
    -(0.5 * std::f64::consts::LN_2 + c.l.ln() + h.log_mu2 + c.tau.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryCheck {
    /// `8 kappa(B) kappa(H) + 4 kappa(B)`
    pub threshold: f64,
    pub threshold_ok: bool,
    pub rate_bound: f64,
    /// `m -> infinity` value `kappa(B) kappa(H) / (kappa(B) kappa(H) + 1/2)`.
    pub limit: f64,
}

/// Epoch-length threshold and rate bound for `eta = 1 / (2 l mu2 m)`.
pub fn corollary_check(kappa_b: f64, kappa_h: f64, m: f64) -> CorollaryCheck {
    let kk = kappa_b * kappa_h;
    let threshold = 8.0 * kk + 4.0 * kappa_b;
    let rate_bound = ((m + 2.0) * kk + kappa_b) / ((m - 2.0) * kk - kappa_b + m / 2.0);
    CorollaryCheck {
        threshold,
        threshold_ok: m > threshold,
        rate_bound,
        limit: kk / (kk + 0.5),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeBounds {
    /// Positive root of `2 l^2 mu1 mu2^2 tau (4l + mu tau) eta^2 + 8 l^2 mu2^2 eta - mu mu1`.
    pub log_eta_root: f64,
    /// `1 / (sqrt(2) l mu2 tau)`
    pub log_eta_delay_bound: f64,
    /// `1 / (2 l mu2 m)`
    pub log_eta_default: f64,
    pub root_within_delay_bound: bool,
}

impl StepSizeBounds {
    pub fn eta_root(&self) -> f64 {
        self.log_eta_root.exp()
    }
    pub fn eta_delay_bound(&self) -> f64 {
        self.log_eta_delay_bound.exp()
    }
    pub fn eta_default(&self) -> f64 {
        self.log_eta_default.exp()
    }
}

pub fn step_size_bounds(c: &ProblemConstants, h: &InverseHessianBounds) -> Result<StepSizeBounds> {
    c.validate()?;
    let ln_l = c.l.ln();
    let log_a = std::f64::consts::LN_2
        + 2.0 * ln_l
        + h.log_mu1
        + 2.0 * h.log_mu2
        + c.tau.ln()
        + (4.0 * c.l + c.mu * c.tau).ln();
    let log_b = 8f64.ln() + 2.0 * ln_l + 2.0 * h.log_mu2;
    let log_c = c.mu.ln() + h.log_mu1;
    // root = 2c / (b + sqrt(b^2 + 4ac))
    let log_disc = log_add_exp(2.0 * log_b, 4f64.ln() + log_a + log_c);
    let log_eta_root = std::f64::consts::LN_2 + log_c - log_add_exp(log_b, 0.5 * log_disc);
    let log_eta_delay_bound = delay_bound_log(c, h);
    let log_eta_default = -(std::f64::consts::LN_2 + ln_l + h.log_mu2 + c.m.ln());
    Ok(StepSizeBounds {
        log_eta_root,
        log_eta_delay_bound,
        log_eta_default,
        root_within_delay_bound: log_eta_root < log_eta_delay_bound,
    })
}

/// Whole-dataset visits per epoch.
pub fn datapass_per_epoch(algorithm: Algorithm, b: u64, b_h: u64, l: u64, p: u64, n: u64) -> Ratio<u64> {
    match algorithm {
        Algorithm::Svrg | Algorithm::AsySvrg => Ratio::from_integer(2),
        Algorithm::SqnVr | Algorithm::AsySqn => Ratio::from_integer(2) + Ratio::new(b_h, b * l * p),
        Algorithm::Sgd => Ratio::new(b * l * p, n),
    }
}

/// Strong convexity and smoothness constants of the full objective.
pub fn estimate_mu_l(model: &LossModel, data: &Dataset) -> Result<(f64, f64)> {
    match model.kind {
        LossKind::LeastSquares => {
            let (lo, hi) = if data.d() <= DENSE_SOLVE_MAX_D {
                let eig = SymmetricEigen::new(gram_matrix(data));
                (eig.eigenvalues.min(), eig.eigenvalues.max())
            } else {
                power_extremes(data)?
            };
            Ok((lo + 2.0 * model.lambda, hi + 2.0 * model.lambda))
        }
        LossKind::Logistic => {
            let max_sq = (0..data.n()).map(|i| data.row(i).norm_sq()).fold(0.0, f64::max);
            Ok((2.0 * model.lambda, 0.25 * max_sq + 2.0 * model.lambda))
        }
        LossKind::Hinge => Err(Error::Unsupported("nonsmooth hinge")),
    }
}

/// Extreme eigenvalues of `(2/n) Z'Z` by power iteration on `G` and on
/// `hi I - G`, relative tolerance `1e-8`.
fn power_extremes(data: &Dataset) -> Result<(f64, f64)> {
    let model = LossModel::least_squares();
    let all: Vec<usize> = (0..data.n()).collect();
    let zero = vec![0.0; data.d()];
    let apply = |v: &[f64]| model.hessian_vector_product(data, &all, &zero, v);
    let iterate = |shift: f64| -> Result<f64> {
        let mut v: Vec<f64> = (0..data.d()).map(|j| 1.0 + (j % 7) as f64 * 0.1).collect();
        let nv = norm(&v);
        scale(1.0 / nv, &mut v);
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let mut w = apply(&v)?;
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi = shift * vi - *wi * if shift > 0.0 { 1.0 } else { -1.0 };
            }
            let next = dot(&v, &w);
            let nw = norm(&w);
            if nw == 0.0 {
                return Ok(0.0);
            }
            scale(1.0 / nw, &mut w);
            v = w;
            if (next - lambda).abs() <= 1e-8 * next.abs().max(1e-300) {
                return Ok(next);
            }
            lambda = next;
        }
        Ok(lambda)
    };
    let hi = iterate(0.0)?;
    let lo = hi - iterate(hi)?;
    Ok((lo.max(0.0), hi))
}

/// Smoothness scale used to build the step-size grid. For the nonsmooth
/// hinge loss this is `max |z_i|^2 + 2 lambda`.
pub fn step_scale(model: &LossModel, data: &Dataset) -> Result<f64> {
    match model.kind {
        LossKind::Hinge => {
            let max_sq = (0..data.n()).map(|i| data.row(i).norm_sq()).fold(0.0, f64::max);
            Ok(max_sq + 2.0 * model.lambda)
        }
        _ => Ok(estimate_mu_l(model, data)?.1),
    }
}

/// Plain-text report of every diagnostic for the given constants.
pub fn theory_report(c: &ProblemConstants) -> Result<String> {
    let mut out = String::new();
    let lemma = lemma2_bounds(c)?;
    let h = lemma.bounds;
    let kappa_b = c.kappa_b();
    let w = &mut out;
    writeln!(w, "mu              {:.6e}", c.mu).unwrap();
    writeln!(w, "l               {:.6e}", c.l).unwrap();
    writeln!(w, "kappa(B)        {:.6e}", kappa_b).unwrap();
    writeln!(w, "d + M           {}", c.d + c.memory).unwrap();
    writeln!(w, "ln mu1          {:.6e}", h.log_mu1).unwrap();
    writeln!(w, "ln mu2          {:.6e}", h.log_mu2).unwrap();
    writeln!(w, "ln kappa(H)     {:.6e}", lemma.log_kappa_h).unwrap();
    let cor = corollary_check(kappa_b, lemma.log_kappa_h.exp(), c.m);
    writeln!(w, "m threshold     {:.6e} (m = {}, {})", cor.threshold, c.m, if cor.threshold_ok { "ok" } else { "not met" }).unwrap();
    if cor.threshold_ok {
        writeln!(w, "rate bound      {:.6e}", cor.rate_bound).unwrap();
    }
    let steps = step_size_bounds(c, &h)?;
    writeln!(w, "ln eta root     {:.6e}", steps.log_eta_root).unwrap();
    writeln!(w, "ln eta delay    {:.6e}", steps.log_eta_delay_bound).unwrap();
    writeln!(w, "ln eta default  {:.6e}", steps.log_eta_default).unwrap();
    writeln!(w, "eta             {:.6e}", c.eta).unwrap();
    match theta_rate(c, &h) {
        Ok(t) => {
            writeln!(w, "ln C            {:.6e}", t.log_c).unwrap();
            writeln!(w, "theta           {:.6e} ({})", t.theta, if t.contracts { "contracts" } else { "no contraction" }).unwrap();
        }
        Err(Error::DelayBound { .. }) => {
            writeln!(w, "theta           VIOLATION: eta >= delay bound exp({:.6e})", steps.log_eta_delay_bound).unwrap();
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(tau: f64) -> ProblemConstants {
        ProblemConstants { mu: 1.0, l: 1.0, d: 1, memory: 1, m: 100.0, tau, eta: 0.001 }
    }

    #[test]
    fn lemma2_small_case() {
        let c = ProblemConstants { mu: 2.0, l: 2.0, d: 1, memory: 1, m: 100.0, tau: 1.0, eta: 0.01 };
        let b = lemma2_bounds(&c).unwrap();
        assert!((b.bounds.mu1() - 0.25).abs() < 1e-15);
        assert!((b.bounds.mu2() - 1.0).abs() < 1e-15);
        assert!((b.log_kappa_h.exp() - 4.0).abs() < 1e-14);
        assert!(b.identity_residual <= 1e-10);
    }

    #[test]
    fn lemma2_kappa_independent_of_l() {
        for l in [0.1, 1.0, 37.0] {
            let c = ProblemConstants { mu: l, l, d: 1, memory: 1, m: 1.0, tau: 1.0, eta: 0.1 };
            assert!((lemma2_bounds(&c).unwrap().log_kappa_h - 4f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn lemma2_large_dimension_is_finite() {
        let c = ProblemConstants { mu: 1e-3, l: 10.0, d: 200, memory: 10, m: 5.0, tau: 400.0, eta: 0.01 };
        let b = lemma2_bounds(&c).unwrap();
        assert!(b.bounds.log_mu2.is_finite() && b.bounds.log_mu1.is_finite());
        assert!(b.bounds.mu2().is_infinite());
        assert!(b.identity_residual <= 1e-10);
    }

    #[test]
    fn quadratic_root_unit_case() {
        let c = unit(1.0);
        let s = step_size_bounds(&c, &InverseHessianBounds::explicit(1.0, 1.0)).unwrap();
        let root = (-8.0 + 104f64.sqrt()) / 20.0;
        assert!((s.eta_root() - root).abs() < 1e-15);
        assert!((s.eta_root() - 0.1099).abs() < 1e-4);
        assert!(s.eta_root() < 1.0 / 2f64.sqrt());
        assert!(s.root_within_delay_bound);
    }

    #[test]
    fn default_step() {
        let c = ProblemConstants { m: 100.0, ..unit(1.0) };
        let s = step_size_bounds(&c, &InverseHessianBounds::explicit(1.0, 1.0)).unwrap();
        assert!((s.eta_default() - 0.005).abs() < 1e-17);
    }

    #[test]
    fn theta_without_delay() {
        let c = ProblemConstants { tau: 0.0, eta: 0.01, ..unit(0.0) };
        let h = InverseHessianBounds::explicit(0.5, 2.0);
        let t = theta_rate(&c, &h).unwrap();
        let cc = 4.0 * 100.0 * 1e-4 * 4.0;
        assert!((t.c - cc).abs() < 1e-15);
        let b = 100.0 * 0.01 * 0.5;
        assert!((t.theta - (1.0 + cc) / (1.0 + b - cc)).abs() < 1e-14);
    }

    #[test]
    fn theta_tends_to_one_as_eta_vanishes() {
        let mut c = unit(1.0);
        let h = InverseHessianBounds::explicit(1.0, 1.0);
        c.eta = 0.0;
        let t = theta_rate(&c, &h).unwrap();
        assert_eq!(t.c, 0.0);
        assert_eq!(t.theta, 1.0);
        assert_eq!(t.one_minus_theta, 0.0);
    }

    #[test]
    fn delay_violation_is_an_error() {
        let c = ProblemConstants { eta: 1.0, tau: 10.0, ..unit(10.0) };
        let err = theta_rate(&c, &InverseHessianBounds::explicit(1.0, 1.0)).unwrap_err();
        match err {
            Error::DelayBound { bound } => assert!((bound - 1.0 / (2f64.sqrt() * 10.0)).abs() < 1e-15),
            e => panic!("{:?}", e),
        }
        assert!(theory_report(&c).unwrap().contains("VIOLATION"));
    }

    #[test]
    fn corollary_examples() {
        let r = corollary_check(1.0, 4.0, 37.0);
        assert_eq!(r.threshold, 36.0);
        assert!(r.threshold_ok);
        assert!(!corollary_check(1.0, 4.0, 36.0).threshold_ok);
        assert!((corollary_check(1.0, 1.0, 1e12).rate_bound - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(corollary_check(1.0, 1.0, 1.0).limit, 2.0 / 3.0);
    }

    #[test]
    fn datapass_formulas() {
        assert_eq!(datapass_per_epoch(Algorithm::AsySqn, 10, 100, 25, 8, 10_000), Ratio::new(41, 20));
        assert_eq!(datapass_per_epoch(Algorithm::Svrg, 10, 100, 25, 8, 10_000), Ratio::from_integer(2));
        assert_eq!(datapass_per_epoch(Algorithm::Sgd, 10, 100, 25, 8, 10_000), Ratio::new(1, 5));
    }

    #[test]
    fn mu_l_examples() {
        let one = Dataset::from_dense(vec![vec![1.0]], vec![0.0]).unwrap();
        let (mu, l) = estimate_mu_l(&LossModel::least_squares(), &one).unwrap();
        assert!((mu - 2.0).abs() < 1e-14 && (l - 2.0).abs() < 1e-14);
        let eye = Dataset::from_dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let (mu, l) = estimate_mu_l(&LossModel::least_squares(), &eye).unwrap();
        assert!((mu - 1.0).abs() < 1e-14 && (l - 1.0).abs() < 1e-14);
        let unit_rows = Dataset::from_dense(vec![vec![0.6, 0.8], vec![1.0, 0.0]], vec![1.0, -1.0]).unwrap();
        let (mu, l) = estimate_mu_l(&LossModel::logistic(1e-3), &unit_rows).unwrap();
        assert!((mu - 0.002).abs() < 1e-18 && (l - 0.252).abs() < 1e-15);
        assert!(matches!(estimate_mu_l(&LossModel::hinge(1e-3), &one), Err(Error::Unsupported(_))));
    }

    #[test]
    fn power_iteration_matches_dense() {
        let ds = crate::data::gen_sim2(400, 8, 50.0, 2).unwrap();
        let eig = SymmetricEigen::new(gram_matrix(&ds));
        let (lo, hi) = power_extremes(&ds).unwrap();
        assert!((hi - eig.eigenvalues.max()).abs() <= 1e-6 * hi);
        assert!((lo - eig.eigenvalues.min()).abs() <= 1e-3 * hi, "{} vs {}", lo, eig.eigenvalues.min());
    }

    #[test]
    fn invalid_constants() {
        let c = ProblemConstants { mu: 2.0, l: 1.0, ..unit(1.0) };
        assert!(lemma2_bounds(&c).is_err());
    }
}
