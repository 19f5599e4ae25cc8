//! Command-line harness: dataset generation, optimizer runs, thread sweeps
//! and theory reports.

mod cache;
mod settings;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asysqn::data::{gen_sim1, gen_sim2, parse_libsvm, Dataset, ParseOptions};
use asysqn::diagnostics::{estimate_mu_l, lemma2_bounds, step_scale, step_size_bounds, theory_report, ProblemConstants};
use asysqn::engine::{self, compute_reference_optimum, grid_search_eta, ratio_f64, RunTrace};
use asysqn::model::LossKind;
use clap::{Parser, Subcommand, ValueEnum};

use settings::{default_out_dir, parse_labels, parse_model, FStarPolicy, RunArgs, Settings};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable input; exit 2.
    Usage(String),
    /// Optimizer divergence; exit 3.
    Diverged(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Diverged(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<asysqn::Error> for CliError {
    fn from(e: asysqn::Error) -> Self {
        match e {
            asysqn::Error::Diverged => CliError::Diverged(e.to_string()),
            asysqn::Error::Config(_) | asysqn::Error::Parse { .. } | asysqn::Error::Dataset(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "asysqn", version, about = "Asynchronous stochastic quasi-Newton optimization harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset in LibSVM format.
    Gen(GenArgs),
    /// Run one optimizer and write its per-epoch trace as CSV.
    Run(RunArgs),
    /// Time runs to a target gap over a thread sweep.
    Bench(BenchArgs),
    /// Print the closed-form convergence diagnostics for a dataset.
    Diag(DiagArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    /// Two uniform features, y = a z1 + b z2 + noise.
    Sim1,
    /// Geometrically scaled uniform features, y = sum(z) + noise.
    Sim2,
}

#[derive(Debug, clap::Args)]
struct GenArgs {
    generator: Generator,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 1000.0)]
    cond: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `<ASYSQN_OUT_DIR>/<generator>.svm` when unset.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated thread counts; must include 1.
    #[arg(long, value_delimiter = ',')]
    threads: Option<Vec<usize>>,
}

#[derive(Debug, clap::Args)]
struct DiagArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ls")]
    model: String,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "keep")]
    labels: String,
    #[arg(long, default_value_t = false)]
    normalize: bool,
    /// Correction-pair memory.
    #[arg(long = "M", default_value_t = 10)]
    memory: usize,
    /// Anchor period; n / (b L P) when unset.
    #[arg(long)]
    m: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Step size; 1 / (2 l mu2 m), capped at half the delay bound, when unset.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 10)]
    b: usize,
    #[arg(long = "L", default_value_t = 50)]
    inner_iters: usize,
    #[arg(long = "P", default_value_t = 1)]
    workers: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Diag(a) => cmd_diag(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let (ds, name) = match a.generator {
        Generator::Sim1 => (gen_sim1(a.n, a.a, a.b, a.seed), "sim1"),
        Generator::Sim2 => {
            if a.d < 2 || !(a.cond >= 1.0) {
                return Err(CliError::Usage("sim2 needs --d >= 2 and --cond >= 1".into()));
            }
            (gen_sim2(a.n, a.d, a.cond, a.seed), "sim2")
        }
    };
    let ds = ds.map_err(|e| CliError::Usage(e.to_string()))?;
    let path = a.out.clone().unwrap_or_else(|| default_out_dir().join(format!("{}.svm", name)));
    let file = File::create(&path).map_err(|e| CliError::Usage(format!("cannot create {}: {}", path.display(), e)))?;
    let mut w = BufWriter::new(file);
    ds.write_libsvm(&mut w)?;
    w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
    let (mu, l) = estimate_mu_l(&asysqn::model::LossModel::least_squares(), &ds)?;
    println!("wrote {}", path.display());
    println!("n = {}", ds.n());
    println!("d = {}", ds.d());
    println!("condition number = {:.6e}", if mu > 0.0 { l / mu } else { f64::INFINITY });
    Ok(())
}

/// Raw bytes and parsed dataset.
fn load(path: &Path, labels: asysqn::data::LabelMap, normalize: bool) -> Result<(Vec<u8>, Dataset), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {}", path.display(), e)))?;
    let ds = parse_libsvm(BufReader::new(&bytes[..]), ParseOptions { d: None, labels })
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
    Ok((bytes, if normalize { ds.row_normalize() } else { ds }))
}

fn reference_value(s: &Settings, bytes: &[u8], ds: &Dataset) -> Result<f64, CliError> {
    let key = format!("{}:{:e}:{:?}:{}", s.model.kind.name(), s.model.lambda, s.labels, s.normalize);
    let hash = cache::content_hash(bytes);
    let path = cache::cache_path(&s.data);
    if s.fstar == FStarPolicy::Cache {
        if let Some(f) = cache::lookup(&path, &hash, &key) {
            log::info!("f* from {}", path.display());
            return Ok(f);
        }
    }
    let r = compute_reference_optimum(&s.model, ds)?;
    log::info!("f* = {:e} by {} (gradient norm {:e})", r.f_star, r.method, r.grad_norm);
    if let Err(e) = cache::store(&path, &hash, &key, r.f_star) {
        log::warn!("cannot write f* cache {}: {}", path.display(), e);
    }
    Ok(r.f_star)
}

fn open_output(out: &Option<PathBuf>, default_name: &str) -> Result<Box<dyn Write>, CliError> {
    let path = out.clone().unwrap_or_else(|| default_out_dir().join(default_name));
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdout().lock()));
    }
    let f = File::create(&path).map_err(|e| CliError::Usage(format!("cannot create {}: {}", path.display(), e)))?;
    Ok(Box::new(BufWriter::new(f)))
}

/// `#`-prefixed provenance lines describing the resolved run.
fn config_header(s: &Settings) -> Vec<String> {
    let c = &s.config;
    let mut lines = vec![
        format!("algo = {}", s.algorithm.name()),
        format!("data = {}", s.data.display()),
        format!("model = {}", s.model.kind.name()),
        format!("lambda = {:e}", s.model.lambda),
        format!("labels = {:?}", s.labels),
        format!("normalize = {}", s.normalize),
        format!("b = {}", c.b),
        format!("bh = {}", c.b_h),
        format!("M = {}", c.memory),
        format!("L = {}", c.inner_iters),
        format!("P = {}", c.workers),
        format!("eta = {:e}", c.eta),
        format!("epochs = {}", c.epochs),
        format!("seed = {}", c.seed),
        format!("warm-start = {}", c.warm_start_epochs),
        format!("iterate = {:?}", c.iterate_mode),
    ];
    if let Some(m) = c.snapshot_period {
        lines.push(format!("snapshot-period = {}", m));
    }
    if let Some(y) = c.y_option {
        lines.push(format!("y-option = {:?}", y));
    }
    if let Some(t) = c.target_gap {
        lines.push(format!("target-gap = {:e}", t));
    }
    if c.step_decay != 0.0 {
        lines.push(format!("step-decay = {:e}", c.step_decay));
    }
    lines
}

fn write_trace(out: Box<dyn Write>, header: &[String], trace: &RunTrace) -> Result<(), CliError> {
    let mut out = out;
    for line in header {
        writeln!(out, "# {}", line).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| CliError::Failed(e.to_string());
    w.write_record(["algo", "threads", "epoch", "datapasses", "wall_ms", "objective", "gap", "grad_norm", "max_staleness"])
        .map_err(fail)?;
    for r in &trace.records {
        w.write_record([
            trace.algorithm.name().to_string(),
            trace.workers.to_string(),
            r.epoch.to_string(),
            ratio_f64(r.datapasses).to_string(),
            format!("{:.3}", r.wall_ms),
            r.objective.to_string(),
            r.gap.to_string(),
            r.grad_norm.to_string(),
            r.max_staleness.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))
}

/// Fill in f* and, when not given, the grid-searched step size.
fn prepare(s: &mut Settings, bytes: &[u8], ds: &Dataset) -> Result<Option<RunTrace>, CliError> {
    s.config.f_star = Some(reference_value(s, bytes, ds)?);
    if s.eta_given {
        return Ok(None);
    }
    let l_hat = step_scale(&s.model, ds)?;
    let (eta, trace) = grid_search_eta(s.algorithm, &s.config, &s.model, ds, l_hat, None)?;
    eprintln!("grid-searched eta = {:e}", eta);
    s.config.eta = eta;
    Ok(Some(trace))
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let (mut s, _) = a.resolve()?;
    let (bytes, ds) = load(&s.data, s.labels, s.normalize)?;
    let trace = match prepare(&mut s, &bytes, &ds)? {
        Some(t) => t,
        None => engine::run(s.algorithm, &s.config, &s.model, &ds)?,
    };
    let name = format!("{}-p{}.csv", s.algorithm.name(), s.config.workers);
    write_trace(open_output(&s.out, &name)?, &config_header(&s), &trace)?;
    if let Some(last) = trace.records.last() {
        eprintln!("{} epochs, final gap {:e}", trace.records.len(), last.gap);
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let (mut s, file) = a.run.resolve()?;
    let threads = match &a.threads {
        Some(t) => t.clone(),
        None => match file.get("threads") {
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<Result<Vec<usize>, _>>()
                .map_err(|_| CliError::Usage(format!("invalid thread list `{}`", v)))?,
            None => vec![1, 2, 4, 8],
        },
    };
    if threads.is_empty() || !threads.contains(&1) || threads.contains(&0) {
        return Err(CliError::Usage("--threads must be a nonempty list of positive counts including 1".into()));
    }
    let target = *s.config.target_gap.get_or_insert(1e-10);
    let (bytes, ds) = load(&s.data, s.labels, s.normalize)?;
    let base_workers = s.config.workers;
    s.config.workers = 1;
    prepare(&mut s, &bytes, &ds)?;
    s.config.workers = base_workers;

    let mut walls = Vec::with_capacity(threads.len());
    for &p in &threads {
        let mut config = s.config.clone();
        config.workers = p;
        let wall = match engine::run(s.algorithm, &config, &s.model, &ds) {
            Ok(t) if t.reached(target) => t.records.last().map(|r| r.wall_ms),
            Ok(_) => None,
            Err(asysqn::Error::Diverged) => None,
            Err(e) => return Err(e.into()),
        };
        eprintln!("P = {}: {}", p, wall.map_or("DNF".to_string(), |w| format!("{:.1} ms", w)));
        walls.push((p, wall));
    }
    let base = walls.iter().find(|(p, _)| *p == 1).and_then(|(_, w)| *w);

    let mut out = open_output(&s.out, &format!("bench-{}.csv", s.algorithm.name()))?;
    for line in config_header(&s) {
        writeln!(out, "# {}", line).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    writeln!(out, "# threads = {}", threads.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","))
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| CliError::Failed(e.to_string());
    w.write_record(["threads", "wall_ms", "speedup"]).map_err(fail)?;
    for (p, wall) in walls {
        let (wall_s, speed_s) = match (wall, base) {
            (Some(wp), Some(w1)) => (format!("{:.3}", wp), if p == 1 { "1.0".to_string() } else { format!("{:.4}", w1 / wp) }),
            (Some(wp), None) => (format!("{:.3}", wp), "DNF".to_string()),
            (None, _) => ("DNF".to_string(), "DNF".to_string()),
        };
        w.write_record([p.to_string(), wall_s, speed_s]).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))
}

fn cmd_diag(a: &DiagArgs) -> Result<(), CliError> {
    let model = parse_model(&a.model, a.lambda)?;
    if model.kind == LossKind::Hinge {
        return Err(CliError::Usage("diagnostics unavailable for nonsmooth loss".into()));
    }
    let (_, ds) = load(&a.data, parse_labels(&a.labels)?, a.normalize)?;
    let (mu, l) = estimate_mu_l(&model, &ds)?;
    if !(mu > 0.0) {
        return Err(CliError::Usage("objective is not strongly convex (mu = 0); add --lambda".into()));
    }
    let per_epoch = (a.b * a.inner_iters * a.workers).max(1);
    let m = a.m.unwrap_or_else(|| (ds.n() / per_epoch).max(1) as f64);
    let mut c = ProblemConstants { mu, l, d: ds.d(), memory: a.memory, m, tau: a.tau, eta: 0.0 };
    c.eta = match a.eta {
        Some(e) => e,
        None => {
            let s = step_size_bounds(&c, &lemma2_bounds(&c)?.bounds)?;
            s.log_eta_default.min(s.log_eta_delay_bound - std::f64::consts::LN_2).exp()
        }
    };
    print!("{}", theory_report(&c)?);
    Ok(())
}
