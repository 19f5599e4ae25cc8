//! Run settings resolved from flags, an optional `key = value` config file,
//! and defaults, in that order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asysqn::data::LabelMap;
use asysqn::engine::{Algorithm, IterateMode, RunConfig, YOption};
use asysqn::model::{LossKind, LossModel};
use clap::Args;

use crate::CliError;

/// Options shared by `run` and `bench`. Every field is optional so that a
/// config file can fill what the command line leaves out.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Line-oriented `key = value` file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// asysqn, sqnvr, svrg, asysvrg or sgd.
    #[arg(long)]
    pub algo: Option<String>,
    /// LibSVM dataset file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// ls, logistic or hinge.
    #[arg(long)]
    pub model: Option<String>,
    /// Ridge weight; 0 for ls and 1e-3 otherwise when unset.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Gradient sample size.
    #[arg(long)]
    pub b: Option<usize>,
    /// Hessian sample size; 10 b when unset.
    #[arg(long)]
    pub bh: Option<usize>,
    /// Correction-pair memory.
    #[arg(long = "M")]
    pub memory: Option<usize>,
    /// Iterations per worker per epoch.
    #[arg(long = "L")]
    pub inner_iters: Option<usize>,
    /// Worker threads.
    #[arg(long = "P")]
    pub workers: Option<usize>,
    /// Step size; grid-searched over 2^-10..2^0 / l when unset.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once f(x) - f* falls to this value.
    #[arg(long = "target-gap")]
    pub target_gap: Option<f64>,
    /// Epochs of plain variance-reduced steps before curvature is used.
    #[arg(long = "warm-start")]
    pub warm_start: Option<usize>,
    /// Anchor refresh period in epochs; n / (b L P) when unset.
    #[arg(long = "snapshot-period")]
    pub snapshot_period: Option<usize>,
    /// grad (gradient difference) or hvp (Hessian-vector product).
    #[arg(long = "y-option")]
    pub y_option: Option<String>,
    /// average or latest.
    #[arg(long)]
    pub iterate: Option<String>,
    /// SGD step decay: eta / (1 + decay k).
    #[arg(long = "step-decay")]
    pub step_decay: Option<f64>,
    /// Label mapping: keep, zero-neg or even-odd.
    #[arg(long)]
    pub labels: Option<String>,
    /// Scale every row to unit norm after loading.
    #[arg(long)]
    pub normalize: Option<bool>,
    /// f* policy: cache (reuse the file next to the dataset) or compute.
    #[arg(long)]
    pub fstar: Option<String>,
    /// Output CSV path, or `-` for stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FStarPolicy {
    Cache,
    Compute,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub algorithm: Algorithm,
    pub data: PathBuf,
    pub model: LossModel,
    pub labels: LabelMap,
    pub normalize: bool,
    pub config: RunConfig,
    /// Step size was given rather than grid-searched.
    pub eta_given: bool,
    pub fstar: FStarPolicy,
    pub out: Option<PathBuf>,
}

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", path.display(), e)))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{}`", i + 1, key)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "algo", "data", "model", "lambda", "b", "bh", "M", "L", "P", "eta", "epochs", "seed", "target-gap", "warm-start",
    "snapshot-period", "y-option", "iterate", "step-decay", "labels", "normalize", "fstar", "out", "threads",
];

/// Flag value, else config-file value, else `None`.
pub fn pick<T: FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("invalid value `{}` for `{}`", v, key))),
        None => Ok(None),
    }
}

pub fn parse_model(name: &str, lambda: Option<f64>) -> Result<LossModel, CliError> {
    let kind = match name {
        "ls" | "least-squares" => LossKind::LeastSquares,
        "logistic" => LossKind::Logistic,
        "hinge" => LossKind::Hinge,
        other => return Err(CliError::Usage(format!("unknown model `{}`", other))),
    };
    let lambda = lambda.unwrap_or(if kind == LossKind::LeastSquares { 0.0 } else { 1e-3 });
    LossModel::new(kind, lambda).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn parse_labels(name: &str) -> Result<LabelMap, CliError> {
    match name {
        "keep" => Ok(LabelMap::Keep),
        "zero-neg" => Ok(LabelMap::ZeroToNegative),
        "even-odd" => Ok(LabelMap::EvenOdd),
        other => Err(CliError::Usage(format!("unknown label mapping `{}`", other))),
    }
}

impl RunArgs {
    pub fn resolve(&self) -> Result<(Settings, BTreeMap<String, String>), CliError> {
        let file = match &self.config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let algo_name: String = pick(self.algo.clone(), &file, "algo")?.unwrap_or_else(|| "asysqn".into());
        let algorithm =
            Algorithm::parse(&algo_name).ok_or_else(|| CliError::Usage(format!("unknown algorithm `{}`", algo_name)))?;
        let data: PathBuf = pick(self.data.clone(), &file, "data")?.ok_or_else(|| CliError::Usage("--data is required".into()))?;
        let model_name: String = pick(self.model.clone(), &file, "model")?.unwrap_or_else(|| "ls".into());
        let model = parse_model(&model_name, pick(self.lambda, &file, "lambda")?)?;
        let labels = parse_labels(&pick(self.labels.clone(), &file, "labels")?.unwrap_or_else(|| "keep".into()))?;
        let normalize = pick(self.normalize, &file, "normalize")?.unwrap_or(false);
        let fstar = match pick(self.fstar.clone(), &file, "fstar")?.as_deref() {
            None | Some("cache") => FStarPolicy::Cache,
            Some("compute") => FStarPolicy::Compute,
            Some(other) => return Err(CliError::Usage(format!("unknown f* policy `{}`", other))),
        };

        let d = RunConfig::default();
        let b = pick(self.b, &file, "b")?.unwrap_or(d.b);
        let eta = pick(self.eta, &file, "eta")?;
        let y_option = match pick(self.y_option.clone(), &file, "y-option")?.as_deref() {
            None => None,
            Some("grad") => Some(YOption::GradientDifference),
            Some("hvp") => Some(YOption::HessianVector),
            Some(other) => return Err(CliError::Usage(format!("unknown y option `{}`", other))),
        };
        let iterate_mode = match pick(self.iterate.clone(), &file, "iterate")?.as_deref() {
            None | Some("average") => IterateMode::Average,
            Some("latest") => IterateMode::Latest,
            Some(other) => return Err(CliError::Usage(format!("unknown iterate mode `{}`", other))),
        };
        let config = RunConfig {
            eta: eta.unwrap_or(d.eta),
            b,
            b_h: pick(self.bh, &file, "bh")?.unwrap_or(10 * b),
            memory: pick(self.memory, &file, "M")?.unwrap_or(d.memory),
            inner_iters: pick(self.inner_iters, &file, "L")?.unwrap_or(d.inner_iters),
            workers: pick(self.workers, &file, "P")?.unwrap_or(d.workers),
            epochs: pick(self.epochs, &file, "epochs")?.unwrap_or(d.epochs),
            snapshot_period: pick(self.snapshot_period, &file, "snapshot-period")?,
            y_option,
            iterate_mode,
            warm_start_epochs: pick(self.warm_start, &file, "warm-start")?.unwrap_or(d.warm_start_epochs),
            seed: pick(self.seed, &file, "seed")?.unwrap_or(d.seed),
            target_gap: pick(self.target_gap, &file, "target-gap")?,
            step_decay: pick(self.step_decay, &file, "step-decay")?.unwrap_or(d.step_decay),
            ..d
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let out = pick(self.out.clone(), &file, "out")?;
        Ok((
            Settings { algorithm, data, model, labels, normalize, config, eta_given: eta.is_some(), fstar, out },
            file,
        ))
    }
}

/// `ASYSQN_OUT_DIR`, or the working directory.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("ASYSQN_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}
