//! Optimizer drivers.
//!
//! Every algorithm runs the same epoch skeleton:
//!
//! 1. refresh the variance-reduction anchor when `k mod m == 0`;
//! 2. `P` workers each perform `L` iterations against one shared parameter
//!    cell: sample `S`, read a consistent `(x, version)` snapshot, compute a
//!    direction from the snapshot, then commit `x <- x + eta * direction`
//!    to the *current* cell contents;
//! 3. barrier;
//! 4. the coordinator forms `x_k` (average of all committed iterates, or the
//!    latest cell value), `s_k = x_k - x_{k-1}` and `y_k` from a fresh
//!    Hessian sample `T`, and pushes the pair (quasi-Newton variants only);
//! 5. one trace record is appended.
//!
//! Staleness of a commit is the number of commits by other workers between
//! its read and its commit; the barrier bounds it by `L * P - 1`.
//!
//! The inner loop either runs on OS threads or replays a scripted
//! interleaving from [`crate::simsched`]; both paths share [`WorkerKernel`]
//! and [`apply_step`], so a sequential script reproduces a one-worker run
//! exactly.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lbfgs::{CorrectionHistory, PushOutcome};
use crate::model::{LossKind, LossModel};
use crate::simsched::InterleavingScript;
use crate::vecops::{self, all_finite, norm};
use crate::vr::{self, VrAnchor};

pub use crate::reference::{compute_reference_optimum, ReferenceOptimum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    AsySqn,
    /// Sequential stochastic L-BFGS with variance reduction (`P = 1`).
    SqnVr,
    Svrg,
    AsySvrg,
    Sgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::AsySqn => "asysqn",
            Algorithm::SqnVr => "sqnvr",
            Algorithm::Svrg => "svrg",
            Algorithm::AsySvrg => "asysvrg",
            Algorithm::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "asysqn" => Algorithm::AsySqn,
            "sqnvr" => Algorithm::SqnVr,
            "svrg" => Algorithm::Svrg,
            "asysvrg" => Algorithm::AsySvrg,
            "sgd" => Algorithm::Sgd,
            _ => return None,
        })
    }

    pub fn uses_curvature(&self) -> bool {
        matches!(self, Algorithm::AsySqn | Algorithm::SqnVr)
    }

    pub fn uses_anchor(&self) -> bool {
        !matches!(self, Algorithm::Sgd)
    }

    /// Sequential variants always run a single worker.
    pub fn is_sequential(&self) -> bool {
        matches!(self, Algorithm::SqnVr | Algorithm::Svrg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YOption {
    /// `y = grad f_T(x_k) - grad f_T(x_{k-1})`
    GradientDifference,
    /// `y = hess f_T(x_k) s`
    HessianVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IterateMode {
    #[default]
    Average,
    Latest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub eta: f64,
    /// Gradient sample size `|S|`.
    pub b: usize,
    /// Hessian sample size `|T|`.
    pub b_h: usize,
    /// Correction-pair memory.
    pub memory: usize,
    /// Iterations per worker per epoch.
    pub inner_iters: usize,
    pub workers: usize,
    pub epochs: usize,
    /// Anchor refresh period; `None` means `max(1, n / (b L P))`.
    pub snapshot_period: Option<usize>,
    /// `None` picks the per-loss default.
    pub y_option: Option<YOption>,
    pub iterate_mode: IterateMode,
    pub warm_start_epochs: usize,
    pub seed: u64,
    pub target_gap: Option<f64>,
    /// SGD only: `eta_k = eta / (1 + decay * k)`.
    pub step_decay: f64,
    /// Starting point; zeros when `None`.
    pub x0: Option<Vec<f64>>,
    /// Reference optimum value; computed when `None`.
    pub f_star: Option<f64>,
    /// Keep the full commit log in the trace.
    pub log_writes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eta: 0.05,
            b: 10,
            b_h: 100,
            memory: 10,
            inner_iters: 50,
            workers: 1,
            epochs: 50,
            snapshot_period: None,
            y_option: None,
            iterate_mode: IterateMode::Average,
            warm_start_epochs: 2,
            seed: 0,
            target_gap: None,
            step_decay: 0.0,
            x0: None,
            f_star: None,
            log_writes: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad("eta must be finite and >= 0");
        }
        if self.b == 0 || self.b_h == 0 {
            return bad("sample sizes b and b_h must be at least 1");
        }
        if self.memory == 0 {
            return bad("memory M must be at least 1");
        }
        if self.inner_iters == 0 || self.workers == 0 {
            return bad("L and P must be at least 1");
        }
        if self.warm_start_epochs < 2 {
            return bad("warm_start_epochs must be at least 2");
        }
        if self.snapshot_period == Some(0) {
            return bad("snapshot period m must be at least 1");
        }
        if !(self.step_decay >= 0.0) {
            return bad("step_decay must be >= 0");
        }
        Ok(())
    }

    pub fn snapshot_period_for(&self, n: usize, workers: usize) -> usize {
        self.snapshot_period
            .unwrap_or_else(|| (n / (self.b * self.inner_iters * workers)).max(1))
    }

    pub fn y_option_for(&self, kind: LossKind) -> YOption {
        self.y_option.unwrap_or(match kind {
            LossKind::Hinge => YOption::GradientDifference,
            _ => YOption::HessianVector,
        })
    }
}

/// One committed write to the shared cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteRecord {
    /// Version number created by this commit (1-based within the run).
    pub t: u64,
    pub writer: usize,
    pub version_read: u64,
}

impl WriteRecord {
    /// Commits by other workers between this worker's read and its commit.
    pub fn staleness(&self) -> u64 {
        self.t - 1 - self.version_read
    }
}

/// The parameter vector with its monotone version counter.
#[derive(Debug, Clone)]
pub struct SharedState {
    pub x: Vec<f64>,
    pub t: u64,
    pub write_log: Option<Vec<WriteRecord>>,
}

impl SharedState {
    pub fn new(x: Vec<f64>, log_writes: bool) -> Self {
        SharedState { x, t: 0, write_log: log_writes.then(Vec::new) }
    }

    /// Apply a step computed from the snapshot taken at `version_read`.
    /// Returns the commit's staleness.
    pub fn commit(&mut self, writer: usize, version_read: u64, direction: &[f64], eta: f64) -> u64 {
        debug_assert!(version_read <= self.t);
        apply_step(&mut self.x, direction, eta);
        let staleness = self.t - version_read;
        self.t += 1;
        if let Some(log) = &mut self.write_log {
            log.push(WriteRecord { t: self.t, writer, version_read });
        }
        staleness
    }
}

/// `x <- x + eta * direction`.
#[inline]
pub fn apply_step(x: &mut [f64], direction: &[f64], eta: f64) {
    vecops::axpy(eta, direction, x);
}

/// Seed for the random stream of `(worker, epoch)`.
pub fn stream_seed(seed: u64, worker: u64, epoch: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    seed ^ mix(mix(worker) ^ epoch)
}

pub(crate) fn worker_rng(seed: u64, worker: usize, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, worker as u64, epoch as u64))
}

const COORDINATOR: u64 = u64::MAX;

/// Uniform sample with replacement.
pub fn sample_indices<R: Rng>(rng: &mut R, n: usize, size: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..size).map(|_| rng.gen_range(0..n)));
}

/// Everything one worker iteration needs; read-only during an epoch.
pub(crate) struct WorkerKernel<'a> {
    pub model: &'a LossModel,
    pub data: &'a Dataset,
    pub anchor: Option<&'a VrAnchor>,
    pub history: Option<&'a CorrectionHistory>,
    pub b: usize,
    pub eta: f64,
}

impl WorkerKernel<'_> {
    /// Sample `S` and return the search direction evaluated at `x_read`.
    pub fn direction(&self, rng: &mut ChaCha8Rng, x_read: &[f64], sample: &mut Vec<usize>) -> Result<Vec<f64>> {
        sample_indices(rng, self.data.n(), self.b, sample);
        let mut g = vec![0.0; x_read.len()];
        match self.anchor {
            Some(anchor) => vr::vr_gradient_into(self.model, self.data, sample, x_read, anchor, &mut g),
            None => self.model.gradient_into(self.data, sample.iter().copied(), sample.len(), x_read, &mut g),
        }
        if !all_finite(&g) {
            return Err(Error::Diverged);
        }
        match self.history {
            Some(h) if !h.is_empty() => h.two_loop_direction(&g).map_err(|_| Error::Diverged),
            _ => {
                vecops::scale(-1.0, &mut g);
                Ok(g)
            }
        }
    }
}

/// What the inner loop of one epoch produced.
#[derive(Debug, Default)]
pub(crate) struct InnerOutcome {
    /// Post-commit iterates per worker, in commit order.
    pub iterates: Vec<Vec<Vec<f64>>>,
    pub max_staleness: u64,
    pub samples_visited: u64,
}

fn threaded_inner(
    kernel: &WorkerKernel<'_>,
    shared: &Mutex<SharedState>,
    workers: usize,
    inner_iters: usize,
    seed: u64,
    epoch: usize,
) -> Result<InnerOutcome> {
    let run_worker = |p: usize| -> Result<(Vec<Vec<f64>>, u64)> {
        let mut rng = worker_rng(seed, p, epoch);
        let mut sample = Vec::with_capacity(kernel.b);
        let mut iterates = Vec::with_capacity(inner_iters);
        let mut max_stale = 0;
        for _ in 0..inner_iters {
            let (x_read, version) = {
                let cell = shared.lock().expect("shared cell poisoned");
                (cell.x.clone(), cell.t)
            };
            let dir = kernel.direction(&mut rng, &x_read, &mut sample)?;
            let mut cell = shared.lock().expect("shared cell poisoned");
            max_stale = max_stale.max(cell.commit(p, version, &dir, kernel.eta));
            iterates.push(cell.x.clone());
        }
        Ok((iterates, max_stale))
    };

    let results: Vec<Result<(Vec<Vec<f64>>, u64)>> = if workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers).map(|p| scope.spawn(move || run_worker(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };

    let mut out = InnerOutcome::default();
    for r in results {
        let (iterates, stale) = r?;
        out.max_staleness = out.max_staleness.max(stale);
        out.iterates.push(iterates);
    }
    out.samples_visited = (workers * inner_iters * kernel.b) as u64;
    Ok(out)
}

/// Mean of all iterates, summed worker by worker in commit order.
pub fn average_iterates<'a>(iterates: impl IntoIterator<Item = &'a Vec<f64>>, d: usize) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for x in iterates {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        vecops::axpy(1.0, x, &mut sum);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Config("no iterates to average".into()));
    }
    vecops::scale(1.0 / count as f64, &mut sum);
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalizeOutcome {
    pub x_k: Vec<f64>,
    pub s: Vec<f64>,
    /// `None` when the step was zero.
    pub y: Option<Vec<f64>>,
    pub push: Option<PushOutcome>,
}

/// End-of-epoch curvature update: form `x_k`, `s_k`, `y_k` and push the pair.
#[allow(clippy::too_many_arguments)]
pub fn epoch_finalize(
    prev_xk: &[f64],
    iterates: &[Vec<f64>],
    shared_x: &[f64],
    mode: IterateMode,
    model: &LossModel,
    data: &Dataset,
    hessian_sample: &[usize],
    y_option: YOption,
    history: &mut CorrectionHistory,
) -> Result<FinalizeOutcome> {
    let d = prev_xk.len();
    let x_k = match mode {
        IterateMode::Average => average_iterates(iterates, d)?,
        IterateMode::Latest => shared_x.to_vec(),
    };
    let s = vecops::sub(&x_k, prev_xk);
    if norm(&s) == 0.0 {
        log::debug!("zero step; correction pair skipped");
        return Ok(FinalizeOutcome { x_k, s, y: None, push: None });
    }
    let y = match y_option {
        YOption::GradientDifference => {
            let g1 = model.sample_gradient(data, hessian_sample, &x_k)?;
            let g0 = model.sample_gradient(data, hessian_sample, prev_xk)?;
            vecops::sub(&g1, &g0)
        }
        YOption::HessianVector => model.hessian_vector_product(data, hessian_sample, &x_k, &s)?,
    };
    let push = history.push_pair(&s, &y)?;
    Ok(FinalizeOutcome { x_k, s, y: Some(y), push: Some(push) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative whole-dataset visits, exact.
    pub datapasses: Ratio<u64>,
    /// Cumulative optimizer wall time.
    pub wall_ms: f64,
    pub objective: f64,
    pub gap: f64,
    pub grad_norm: f64,
    pub max_staleness: u64,
    pub pair: Option<PushOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub workers: usize,
    pub f_star: f64,
    pub records: Vec<EpochRecord>,
    pub x: Vec<f64>,
    pub write_log: Option<Vec<WriteRecord>>,
    /// Curvature pairs held at the end of the run.
    pub pairs_held: usize,
}

impl RunTrace {
    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.gap)
    }

    pub fn reached(&self, target: f64) -> bool {
        self.records.iter().any(|r| r.gap <= target)
    }

    /// Gap of the last record at or below `datapasses`.
    pub fn gap_at_datapasses(&self, datapasses: f64) -> Option<f64> {
        self.records
            .iter()
            .take_while(|r| ratio_f64(r.datapasses) <= datapasses)
            .last()
            .map(|r| r.gap)
    }
}

pub fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub(crate) enum InnerLoop<'s> {
    Threads,
    Scripted(&'s mut dyn FnMut(usize, usize, usize) -> Result<InterleavingScript>),
}

pub fn run_asysqn(config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(Algorithm::AsySqn, config, model, data, InnerLoop::Threads)
}

/// Single-worker stochastic L-BFGS with variance reduction.
pub fn run_sqnvr(config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(Algorithm::SqnVr, config, model, data, InnerLoop::Threads)
}

pub fn run_svrg(config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(Algorithm::Svrg, config, model, data, InnerLoop::Threads)
}

pub fn run_asysvrg(config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(Algorithm::AsySvrg, config, model, data, InnerLoop::Threads)
}

pub fn run_sgd(config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(Algorithm::Sgd, config, model, data, InnerLoop::Threads)
}

pub fn run(algorithm: Algorithm, config: &RunConfig, model: &LossModel, data: &Dataset) -> Result<RunTrace> {
    drive(algorithm, config, model, data, InnerLoop::Threads)
}

pub(crate) fn drive(
    algorithm: Algorithm,
    config: &RunConfig,
    model: &LossModel,
    data: &Dataset,
    mut inner: InnerLoop<'_>,
) -> Result<RunTrace> {
    config.validate()?;
    let n = data.n();
    let d = data.d();
    let workers = if algorithm.is_sequential() { 1 } else { config.workers };
    if matches!(inner, InnerLoop::Threads) {
        if let Ok(avail) = std::thread::available_parallelism() {
            if workers > avail.get() {
                log::warn!("{} workers requested but only {} hardware threads available", workers, avail);
            }
        }
    }
    let x0 = match &config.x0 {
        Some(x) if x.len() != d => return Err(Error::DimensionMismatch { expected: d, got: x.len() }),
        Some(x) => x.clone(),
        None => vec![0.0; d],
    };
    let f_star = match config.f_star {
        Some(f) => f,
        None => compute_reference_optimum(model, data)?.f_star,
    };
    let m = config.snapshot_period_for(n, workers);
    let y_option = config.y_option_for(model.kind);

    let mut shared = SharedState::new(x0.clone(), config.log_writes);
    let mut history = CorrectionHistory::new(config.memory)?;
    let mut anchor: Option<Arc<VrAnchor>> = None;
    let mut prev_xk = x0;
    let mut visits: u64 = 0;
    let mut wall_ms = 0.0;
    let mut records = Vec::with_capacity(config.epochs);
    let mut sample = Vec::with_capacity(config.b_h);

    for k in 0..config.epochs {
        let started = Instant::now();
        if algorithm.uses_anchor() {
            let (a, taken) = vr::schedule_update(&shared.x, k, m, anchor.take(), model, data)?;
            if taken {
                visits += n as u64;
            }
            anchor = Some(a);
        }
        let use_curvature = algorithm.uses_curvature() && k >= config.warm_start_epochs;
        let eta = if algorithm == Algorithm::Sgd {
            config.eta / (1.0 + config.step_decay * k as f64)
        } else {
            config.eta
        };
        let kernel = WorkerKernel {
            model,
            data,
            anchor: anchor.as_deref(),
            history: use_curvature.then_some(&history),
            b: config.b,
            eta,
        };
        let outcome = match &mut inner {
            InnerLoop::Threads => {
                let cell = Mutex::new(std::mem::replace(&mut shared, SharedState::new(Vec::new(), false)));
                let result = threaded_inner(&kernel, &cell, workers, config.inner_iters, config.seed, k);
                shared = cell.into_inner().expect("shared cell poisoned");
                result?
            }
            InnerLoop::Scripted(make_script) => {
                let script = make_script(k, workers, config.inner_iters)?;
                crate::simsched::scripted_inner(&kernel, &mut shared, &script, config.seed, k)?
            }
        };
        visits += outcome.samples_visited;

        let mut pair = None;
        if algorithm.uses_curvature() {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, COORDINATOR, k as u64));
            sample_indices(&mut rng, n, config.b_h, &mut sample);
            let all: Vec<Vec<f64>> = outcome.iterates.into_iter().flatten().collect();
            let fin = epoch_finalize(
                &prev_xk,
                &all,
                &shared.x,
                config.iterate_mode,
                model,
                data,
                &sample,
                y_option,
                &mut history,
            );
            let fin = match fin {
                Err(Error::NonFinitePair) | Err(Error::NonFiniteVector) => return Err(Error::Diverged),
                other => other?,
            };
            pair = fin.push;
            prev_xk = fin.x_k;
            visits += config.b_h as u64;
        }
        wall_ms += started.elapsed().as_secs_f64() * 1e3;

        let objective = model.full_loss(data, &shared.x)?;
        if !objective.is_finite() || !all_finite(&shared.x) {
            return Err(Error::Diverged);
        }
        let grad_norm = norm(&model.full_gradient(data, &shared.x)?);
        let gap = objective - f_star;
        records.push(EpochRecord {
            epoch: k,
            datapasses: Ratio::new(visits, n as u64),
            wall_ms,
            objective,
            gap,
            grad_norm,
            max_staleness: outcome.max_staleness,
            pair,
        });
        if config.target_gap.is_some_and(|t| gap <= t) {
            break;
        }
    }

    Ok(RunTrace {
        algorithm,
        workers,
        f_star,
        records,
        x: shared.x,
        write_log: shared.write_log,
        pairs_held: history.len(),
    })
}

/// Candidate step sizes `2^-10 .. 2^0` times `1 / l_hat`.
pub fn eta_grid(l_hat: f64) -> Vec<f64> {
    (0..=10).rev().map(|e| 2f64.powi(-e) / l_hat).collect()
}

/// Run each grid step for the configured epochs and keep the one with the
/// smallest gap at `datapass_budget` (final gap when `None`). Divergent runs
/// are discarded. Returns the chosen step and its trace.
pub fn grid_search_eta(
    algorithm: Algorithm,
    config: &RunConfig,
    model: &LossModel,
    data: &Dataset,
    l_hat: f64,
    datapass_budget: Option<f64>,
) -> Result<(f64, RunTrace)> {
    let mut config = config.clone();
    if config.f_star.is_none() {
        config.f_star = Some(compute_reference_optimum(model, data)?.f_star);
    }
    let mut best: Option<(f64, f64, RunTrace)> = None;
    for eta in eta_grid(l_hat) {
        config.eta = eta;
        let trace = match run(algorithm, &config, model, data) {
            Ok(t) => t,
            Err(Error::Diverged) => continue,
            Err(e) => return Err(e),
        };
        let score = match datapass_budget {
            Some(budget) => trace.gap_at_datapasses(budget).unwrap_or(f64::INFINITY),
            None => trace.final_gap(),
        };
        let score = if score.is_finite() { score.max(0.0) } else { f64::INFINITY };
        // ties go to the run that got there in fewer datapasses
        let better = match &best {
            None => true,
            Some((_, s, t)) => {
                score < *s || (score == *s && trace.records.last().map(|r| r.datapasses) < t.records.last().map(|r| r.datapasses))
            }
        };
        if better {
            best = Some((eta, score, trace));
        }
    }
    best.map(|(eta, _, t)| (eta, t))
        .ok_or_else(|| Error::Config("every step size in the grid diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> Dataset {
        // f(x) = (0 - x)^2 = x^2
        Dataset::from_dense(vec![vec![1.0]], vec![0.0]).unwrap()
    }

    fn cfg() -> RunConfig {
        RunConfig {
            eta: 0.25,
            b: 1,
            b_h: 1,
            memory: 3,
            inner_iters: 1,
            workers: 1,
            epochs: 1,
            x0: Some(vec![1.0]),
            f_star: Some(0.0),
            ..Default::default()
        }
    }

    #[test]
    fn one_exact_gradient_step() {
        let t = run_asysqn(&cfg(), &LossModel::least_squares(), &quadratic()).unwrap();
        assert_eq!(t.x, vec![0.5]);
        assert_eq!(t.records.len(), 1);
        let s = run_svrg(&cfg(), &LossModel::least_squares(), &quadratic()).unwrap();
        assert_eq!(s.x, t.x);
    }

    #[test]
    fn trace_length_without_target() {
        let c = RunConfig { epochs: 7, target_gap: Some(f64::NEG_INFINITY), ..cfg() };
        let t = run_asysqn(&c, &LossModel::least_squares(), &quadratic()).unwrap();
        assert_eq!(t.records.len(), 7);
        let c = RunConfig { epochs: 7, target_gap: None, ..cfg() };
        assert_eq!(run_sgd(&c, &LossModel::least_squares(), &quadratic()).unwrap().records.len(), 7);
    }

    #[test]
    fn early_stop_on_target() {
        let c = RunConfig { epochs: 200, target_gap: Some(1e-12), ..cfg() };
        let t = run_asysqn(&c, &LossModel::least_squares(), &quadratic()).unwrap();
        assert!(t.records.len() < 200);
        assert!(t.final_gap() <= 1e-12);
    }

    #[test]
    fn sgd_zero_step_keeps_x() {
        let c = RunConfig { eta: 0.0, epochs: 3, ..cfg() };
        let t = run_sgd(&c, &LossModel::least_squares(), &quadratic()).unwrap();
        assert_eq!(t.x, vec![1.0]);
    }

    #[test]
    fn sgd_full_batch_is_gradient_descent() {
        // n = b = 1: every sample is the full batch
        let c = RunConfig { eta: 0.1, epochs: 5, inner_iters: 2, ..cfg() };
        let t = run_sgd(&c, &LossModel::least_squares(), &quadratic()).unwrap();
        let mut x = 1.0f64;
        for _ in 0..10 {
            x += 0.1 * -(2.0 * x);
        }
        assert_eq!(t.x, vec![x]);
    }

    #[test]
    fn divergence_is_reported() {
        let c = RunConfig { eta: 10.0, epochs: 200, ..cfg() };
        assert_eq!(run_svrg(&c, &LossModel::least_squares(), &quadratic()), Err(Error::Diverged));
    }

    #[test]
    fn config_validation() {
        let ds = quadratic();
        let m = LossModel::least_squares();
        for c in [
            RunConfig { b: 0, ..cfg() },
            RunConfig { memory: 0, ..cfg() },
            RunConfig { workers: 0, ..cfg() },
            RunConfig { warm_start_epochs: 1, ..cfg() },
            RunConfig { snapshot_period: Some(0), ..cfg() },
            RunConfig { eta: f64::NAN, ..cfg() },
        ] {
            assert!(matches!(run_asysqn(&c, &m, &ds), Err(Error::Config(_))));
        }
        let c = RunConfig { x0: Some(vec![0.0, 0.0]), ..cfg() };
        assert!(matches!(run_asysqn(&c, &m, &ds), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn finalize_hvp_pair() {
        let ds = Dataset::from_dense(vec![vec![1.0, 0.0]], vec![0.0]).unwrap();
        let mut h = CorrectionHistory::new(5).unwrap();
        let out = epoch_finalize(
            &[1.0, 0.0],
            &[vec![2.0, 0.0]],
            &[2.0, 0.0],
            IterateMode::Average,
            &LossModel::least_squares(),
            &ds,
            &[0],
            YOption::HessianVector,
            &mut h,
        )
        .unwrap();
        assert_eq!(out.s, vec![1.0, 0.0]);
        assert_eq!(out.y, Some(vec![2.0, 0.0]));
        assert_eq!(out.push, Some(PushOutcome::Accepted));
        assert_eq!(h.pairs().next().unwrap().rho, 0.5);
    }

    #[test]
    fn finalize_modes_and_zero_step() {
        let ds = Dataset::from_dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 1.0]).unwrap();
        let m = LossModel::least_squares();
        let mut h = CorrectionHistory::new(5).unwrap();
        let it = [vec![0.0, 0.0], vec![2.0, 2.0]];
        let out = epoch_finalize(&[0.0, 0.0], &it, &[5.0, 5.0], IterateMode::Average, &m, &ds, &[0, 1], YOption::HessianVector, &mut h).unwrap();
        assert_eq!(out.x_k, vec![1.0, 1.0]);
        let out = epoch_finalize(&[0.0, 0.0], &it, &[5.0, 5.0], IterateMode::Latest, &m, &ds, &[0, 1], YOption::HessianVector, &mut h).unwrap();
        assert_eq!(out.x_k, vec![5.0, 5.0]);
        let out = epoch_finalize(&[5.0, 5.0], &it, &[5.0, 5.0], IterateMode::Latest, &m, &ds, &[0, 1], YOption::HessianVector, &mut h).unwrap();
        assert_eq!(out.push, None);
        assert_eq!(out.y, None);
    }

    #[test]
    fn option_one_equals_option_two_on_quadratics() {
        let ds = Dataset::from_dense(
            vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.25]],
            vec![1.0, 0.0, 2.0],
        )
        .unwrap();
        let m = LossModel::least_squares();
        let mut h1 = CorrectionHistory::new(5).unwrap();
        let mut h2 = CorrectionHistory::new(5).unwrap();
        let it = [vec![1.0, -1.0]];
        let a = epoch_finalize(&[0.25, 0.5], &it, &it[0], IterateMode::Average, &m, &ds, &[0, 2, 1], YOption::GradientDifference, &mut h1).unwrap();
        let b = epoch_finalize(&[0.25, 0.5], &it, &it[0], IterateMode::Average, &m, &ds, &[0, 2, 1], YOption::HessianVector, &mut h2).unwrap();
        for (u, v) in a.y.unwrap().iter().zip(b.y.unwrap()) {
            assert!((u - v).abs() <= 1e-14 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(stream_seed(1, 0, 0), stream_seed(1, 1, 0));
        assert_ne!(stream_seed(1, 0, 0), stream_seed(1, 0, 1));
        assert_eq!(stream_seed(1, 2, 3), stream_seed(1, 2, 3));
    }

    #[test]
    fn default_snapshot_period() {
        let c = RunConfig { b: 5, inner_iters: 50, ..Default::default() };
        assert_eq!(c.snapshot_period_for(10_000, 8), 5);
        assert_eq!(c.snapshot_period_for(10, 8), 1);
    }
}
