//! Deterministic replay of asynchronous worker interleavings.
//!
//! A script is a sequence of `(worker, READ | COMMIT)` events. Replaying it
//! keeps a global version counter `t` (number of commits so far). A READ
//! remembers the version the worker saw; the matching COMMIT at new version
//! `t` records
//!
//! * `D'(t)`, the version its step was computed from,
//! * `nu = t - D'(t)`, its delay (1 for purely sequential execution),
//! * `tau(t) = max over all outstanding reads of t - D(t)`, so `nu <= tau`.
//!
//! Delays count shared-memory updates, not wall time.
//!
//! Scripts serialize as one event per line: `<worker-id> READ|COMMIT`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::engine::{self, Algorithm, InnerLoop, InnerOutcome, RunConfig, RunTrace, SharedState, WorkerKernel};
use crate::error::{Error, Result};
use crate::model::LossModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Read,
    Commit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub worker: usize,
    pub action: Action,
}

/// A validated interleaving. Reads left open at the end are abandoned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavingScript {
    workers: usize,
    events: Vec<Event>,
}

impl InterleavingScript {
    pub fn new(workers: usize, events: Vec<Event>) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Script("at least one worker required".into()));
        }
        let mut pending = vec![false; workers];
        for (pos, ev) in events.iter().enumerate() {
            if ev.worker >= workers {
                return Err(Error::Script(format!("event {}: worker {} >= P = {}", pos, ev.worker, workers)));
            }
            let open = &mut pending[ev.worker];
            match (ev.action, *open) {
                (Action::Read, true) => {
                    return Err(Error::Script(format!("event {}: worker {} reads twice without committing", pos, ev.worker)))
                }
                (Action::Commit, false) => {
                    return Err(Error::Script(format!("event {}: worker {} commits without a read", pos, ev.worker)))
                }
                (Action::Read, false) => *open = true,
                (Action::Commit, true) => *open = false,
            }
        }
        Ok(InterleavingScript { workers, events })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn commits(&self) -> usize {
        self.events.iter().filter(|e| e.action == Action::Commit).count()
    }

    /// Parse the line format. `P` is the largest worker id plus one unless
    /// given explicitly.
    pub fn parse(text: &str, workers: Option<usize>) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(w), Some(a), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Script(format!("line {}: expected `<worker-id> READ|COMMIT`", i + 1)));
            };
            let worker: usize = w
                .parse()
                .map_err(|_| Error::Script(format!("line {}: bad worker id {:?}", i + 1, w)))?;
            let action = match a {
                "READ" => Action::Read,
                "COMMIT" => Action::Commit,
                _ => return Err(Error::Script(format!("line {}: unknown action {:?}", i + 1, a))),
            };
            events.push(Event { worker, action });
        }
        let p = workers.unwrap_or_else(|| events.iter().map(|e| e.worker + 1).max().unwrap_or(1));
        Self::new(p, events)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let a = match e.action {
                Action::Read => "READ",
                Action::Commit => "COMMIT",
            };
            s.push_str(&format!("{} {}\n", e.worker, a));
        }
        s
    }

    /// Each worker runs all of its iterations back to back.
    pub fn sequential(workers: usize, iters: usize) -> Self {
        let mut ev = Vec::with_capacity(2 * workers * iters);
        for w in 0..workers {
            for _ in 0..iters {
                ev.push(Event { worker: w, action: Action::Read });
                ev.push(Event { worker: w, action: Action::Commit });
            }
        }
        InterleavingScript { workers, events: ev }
    }

    /// Rounds in which every worker reads, then every worker commits in id
    /// order. Delays within a round are `1, 2, .., P`.
    pub fn round_robin(workers: usize, iters: usize) -> Self {
        let mut ev = Vec::with_capacity(2 * workers * iters);
        for _ in 0..iters {
            ev.extend((0..workers).map(|w| Event { worker: w, action: Action::Read }));
            ev.extend((0..workers).map(|w| Event { worker: w, action: Action::Commit }));
        }
        InterleavingScript { workers, events: ev }
    }

    /// Every worker reads once, then workers take turns committing and
    /// immediately re-reading. After the first round each commit applies a
    /// step from a read `P` versions old, so `nu = P` in steady state.
    pub fn pipelined(workers: usize, iters: usize) -> Self {
        let mut ev = Vec::with_capacity(2 * workers * iters);
        if iters == 0 {
            return InterleavingScript { workers, events: ev };
        }
        ev.extend((0..workers).map(|w| Event { worker: w, action: Action::Read }));
        for round in 0..iters {
            for w in 0..workers {
                ev.push(Event { worker: w, action: Action::Commit });
                if round + 1 < iters {
                    ev.push(Event { worker: w, action: Action::Read });
                }
            }
        }
        InterleavingScript { workers, events: ev }
    }

    /// Worker 0 reads, every other worker runs all its iterations, then
    /// worker 0 commits; repeated. The first commit of worker 0 sees the
    /// largest delay an epoch allows, `(P - 1) L + 1`.
    pub fn adversarial(workers: usize, iters: usize) -> Self {
        let mut ev = Vec::with_capacity(2 * workers * iters);
        ev.push(Event { worker: 0, action: Action::Read });
        for w in 1..workers {
            for _ in 0..iters {
                ev.push(Event { worker: w, action: Action::Read });
                ev.push(Event { worker: w, action: Action::Commit });
            }
        }
        ev.push(Event { worker: 0, action: Action::Commit });
        for _ in 1..iters {
            ev.push(Event { worker: 0, action: Action::Read });
            ev.push(Event { worker: 0, action: Action::Commit });
        }
        InterleavingScript { workers, events: ev }
    }

    /// Uniformly random legal interleaving with `iters` commits per worker.
    pub fn random(workers: usize, iters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pending = vec![false; workers];
        let mut left = vec![iters; workers];
        let mut ev = Vec::with_capacity(2 * workers * iters);
        loop {
            let active: Vec<usize> = (0..workers).filter(|&w| left[w] > 0).collect();
            if active.is_empty() {
                break;
            }
            let w = active[rng.gen_range(0..active.len())];
            if pending[w] {
                ev.push(Event { worker: w, action: Action::Commit });
                pending[w] = false;
                left[w] -= 1;
            } else {
                ev.push(Event { worker: w, action: Action::Read });
                pending[w] = true;
            }
        }
        InterleavingScript { workers, events: ev }
    }

    /// The three-thread example: threads read versions 0, 0, 0; thread 0
    /// commits and reads version 1; thread 1 then commits at `t = 2` with a
    /// step computed from version 0.
    pub fn three_thread_example() -> Self {
        use Action::*;
        let ev = [(0, Read), (1, Read), (2, Read), (0, Commit), (0, Read), (1, Commit)];
        InterleavingScript::new(3, ev.iter().map(|&(worker, action)| Event { worker, action }).collect())
            .expect("valid script")
    }
}

/// Script families used for whole runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptKind {
    Sequential,
    RoundRobin,
    Pipelined,
    Adversarial,
    Random { seed: u64 },
}

impl ScriptKind {
    pub fn generate(&self, workers: usize, iters: usize, epoch: usize) -> InterleavingScript {
        match *self {
            ScriptKind::Sequential => InterleavingScript::sequential(workers, iters),
            ScriptKind::RoundRobin => InterleavingScript::round_robin(workers, iters),
            ScriptKind::Pipelined => InterleavingScript::pipelined(workers, iters),
            ScriptKind::Adversarial => InterleavingScript::adversarial(workers, iters),
            ScriptKind::Random { seed } => {
                InterleavingScript::random(workers, iters, engine::stream_seed(seed, 0x5c41_7eed, epoch as u64))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitEvent {
    /// Version created by this commit.
    pub t: u64,
    pub writer: usize,
    /// `D'(t)`
    pub read_version: u64,
    /// `t - D'(t)`
    pub nu: u64,
    /// Largest `t - D(t)` over all reads outstanding at this commit.
    pub tau: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub commits: Vec<CommitEvent>,
    /// `versions[t]` is the parameter after `t` commits.
    pub versions: Vec<Vec<f64>>,
}

/// Replay `script` from `x0`. `step(writer, x_current, x_stale)` returns the
/// new parameter for each commit, where `x_stale` is the version that writer
/// read.
pub fn simulate_epoch<F>(script: &InterleavingScript, x0: &[f64], mut step: F) -> Result<Timeline>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<Vec<f64>>,
{
    let mut pending: Vec<Option<u64>> = vec![None; script.workers];
    let mut versions = vec![x0.to_vec()];
    let mut commits = Vec::with_capacity(script.commits());
    for ev in &script.events {
        let t = (versions.len() - 1) as u64;
        match ev.action {
            Action::Read => pending[ev.worker] = Some(t),
            Action::Commit => {
                let read = pending[ev.worker]
                    .take()
                    .ok_or_else(|| Error::Script(format!("worker {} commits without a read", ev.worker)))?;
                let new_t = t + 1;
                let tau = pending.iter().flatten().map(|&r| new_t - r).max().unwrap_or(0).max(new_t - read);
                let next = step(ev.worker, &versions[t as usize], &versions[read as usize])?;
                versions.push(next);
                commits.push(CommitEvent { t: new_t, writer: ev.worker, read_version: read, nu: new_t - read, tau });
            }
        }
    }
    Ok(Timeline { commits, versions })
}

/// Largest delay `nu` over all commits (0 for a timeline without commits).
pub fn max_staleness(timeline: &Timeline) -> u64 {
    timeline.commits.iter().map(|c| c.nu).max().unwrap_or(0)
}

/// Inner loop of one engine epoch driven by a script instead of threads.
pub(crate) fn scripted_inner(
    kernel: &WorkerKernel<'_>,
    shared: &mut SharedState,
    script: &InterleavingScript,
    seed: u64,
    epoch: usize,
) -> Result<InnerOutcome> {
    let p = script.workers();
    let mut rngs: Vec<ChaCha8Rng> = (0..p).map(|w| engine::worker_rng(seed, w, epoch)).collect();
    let mut iterates: Vec<Vec<Vec<f64>>> = vec![Vec::new(); p];
    let mut sample = Vec::with_capacity(kernel.b);
    let timeline = simulate_epoch(script, &shared.x, |w, current, stale| {
        let dir = kernel.direction(&mut rngs[w], stale, &mut sample)?;
        let mut next = current.to_vec();
        engine::apply_step(&mut next, &dir, kernel.eta);
        iterates[w].push(next.clone());
        Ok(next)
    })?;
    let base = shared.t;
    for c in &timeline.commits {
        shared.t += 1;
        if let Some(log) = &mut shared.write_log {
            log.push(engine::WriteRecord { t: base + c.t, writer: c.writer, version_read: base + c.read_version });
        }
    }
    let commits = timeline.commits.len();
    let max_nu = max_staleness(&timeline);
    if let Some(last) = timeline.versions.into_iter().last() {
        shared.x = last;
    }
    Ok(InnerOutcome {
        iterates,
        max_staleness: max_nu.saturating_sub(1),
        samples_visited: (commits * kernel.b) as u64,
    })
}

/// Run an engine algorithm with every epoch's inner loop replayed from
/// `scripts(epoch, P, L)`.
pub fn run_scripted<F>(
    algorithm: Algorithm,
    config: &RunConfig,
    model: &LossModel,
    data: &Dataset,
    mut scripts: F,
) -> Result<RunTrace>
where
    F: FnMut(usize, usize, usize) -> Result<InterleavingScript>,
{
    engine::drive(algorithm, config, model, data, InnerLoop::Scripted(&mut scripts))
}
