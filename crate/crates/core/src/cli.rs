//! Command-line harness: `run`, `compare` and `bounds`.
//!
//! Settings come from an optional flat `key = value` file and from flags of
//! the same name (`--noise-sigma` or `--noise_sigma` for `noise_sigma`);
//! flags win. Exit codes: 0 success, 2 configuration error, 3 divergence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Arg, ArgAction, Command};

use crate::bounds::{estimate_constants, optimal_epsilon, BoundReport, Region};
use crate::error::Error;
use crate::model::{
    Algorithm, ProblemConstants, SolverConfig, TimeVaryingCost, TrajectoryRecord, Vector,
};
use crate::oracle::NewtonOracle;
use crate::problems::mpc::{
    mpc_constants, simulate, MpcConfig, ReferencePath, SinePath, TabulatedPath, UnicycleState,
};
use crate::problems::streaming_ls::{load_stream, StreamingLs, StreamingLsConfig};
use crate::problems::synthetic::{QuadraticDrift, SyntheticCost};
use crate::solvers::{run, RunOptions, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub const CSV_HEADER: &str =
    "k,t,algorithm,f_val,f_star,gap,grad_norm,x_err,pred_active,grad_evals";

/// Every recognized setting with its help text.
pub const KEYS: &[(&str, &str)] = &[
    (
        "problem",
        "synthetic | quadratic | mpc | streaming-ls | custom-file",
    ),
    (
        "algorithm",
        "gd | alg1 | alg2 | nesterov-v1 | nesterov-v2 | nlcg",
    ),
    ("algorithms", "comma-separated algorithms for compare"),
    ("alpha", "step size, or 'auto' for 1/(2M)"),
    ("delta", "sampling interval"),
    (
        "epsilon",
        "gradient-norm threshold below which prediction is skipped",
    ),
    ("steps", "number of tracking steps"),
    ("t0", "time of the first sample"),
    ("seed", "seed for generated data and constant estimation"),
    ("output", "CSV output path (stdout when absent)"),
    ("x0", "comma-separated initial point"),
    (
        "thresholds",
        "comma-separated gap levels for steps-to-threshold",
    ),
    (
        "rank_ranges",
        "inclusive step ranges ranked by compare, e.g. 100-240,350-540",
    ),
    ("dimension", "problem dimension (quadratic, streaming-ls)"),
    ("jump_time", "switch time of the synthetic cost"),
    ("window", "sliding window length"),
    ("noise_sigma", "observation noise of generated streams"),
    (
        "jump_indices",
        "comma-separated steps where the ground truth jumps",
    ),
    ("data_file", "rows a1,...,an,b for custom-file"),
    ("horizon", "MPC prediction horizon"),
    ("control_horizon", "MPC control horizon"),
    ("lambda", "MPC control weight"),
    ("start_x", "initial unicycle x"),
    ("start_y", "initial unicycle y"),
    ("theta0", "initial unicycle heading"),
    ("head_offset", "distance from axle to head point"),
    (
        "initial_control",
        "entries of the initial MPC control sequence",
    ),
    (
        "reference_file",
        "rows rx,ry replacing the default sine path",
    ),
    ("m", "strong convexity constant"),
    ("big_m", "gradient Lipschitz constant M"),
    ("k1", "bound on |df/dt|"),
    ("k2", "bound on the mixed derivative norm"),
    ("k3", "bound on |d2f/dt2|"),
    ("region", "half-width of the box used to estimate constants"),
    ("t_max", "end of the time range used to estimate constants"),
    ("samples", "samples for constant estimation"),
    ("eps_lo", "lower end of the threshold search"),
    ("eps_hi", "upper end of the threshold search"),
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Diverged { algorithm: Algorithm, k: usize },
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Diverged { .. } => EXIT_DIVERGED,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Diverged { algorithm, k } => write!(f, "{algorithm} diverged at k = {k}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Input(_)
            | Error::Domain(_)
            | Error::MissingTimeDerivative
            | Error::MissingConstants(_)
            | Error::MissingHessian(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Merged settings: file values overridden by flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ))
            })?;
            let key = normalize_key(key);
            if !is_known(&key) {
                return Err(CliError::Config(format!(
                    "unknown key '{key}' (line {})",
                    lineno + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = normalize_key(key);
        if !is_known(&key) {
            return Err(CliError::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn real(&self, key: &str) -> CliResult<Option<f64>> {
        self.get(key).map(|v| parse_real(key, v)).transpose()
    }

    fn real_or(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn count_or(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CliError::Config(format!("{key}: expected a nonnegative integer, got '{v}'"))
            }),
        }
    }

    fn reals(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| v.split(',').map(|s| parse_real(key, s.trim())).collect())
            .transpose()
    }

    fn counts(&self, key: &str) -> CliResult<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            CliError::Config(format!("{key}: expected integers, got '{s}'"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

fn parse_real(key: &str, v: &str) -> CliResult<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: expected a number, got '{v}'")))?;
    if !x.is_finite() {
        return Err(CliError::Config(format!(
            "{key}: value must be finite, got '{v}'"
        )));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Synthetic,
    Quadratic,
    Mpc,
    StreamingLs,
    CustomFile,
}

impl ProblemKind {
    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "quadratic" => Ok(Self::Quadratic),
            "mpc" => Ok(Self::Mpc),
            "streaming-ls" | "streaming_ls" => Ok(Self::StreamingLs),
            "custom-file" | "custom_file" => Ok(Self::CustomFile),
            other => Err(CliError::Config(format!(
                "problem: unknown problem '{other}'"
            ))),
        }
    }
}

/// A fully configured experiment.
pub struct Experiment {
    pub kind: ProblemKind,
    pub solver: SolverConfig,
    pub x0: Vector,
    pub thresholds: Vec<f64>,
    pub constants: Option<ProblemConstants>,
    problem: Problem,
}

enum Problem {
    Cost(Box<dyn TimeVaryingCost>),
    Mpc(MpcConfig, Arc<dyn ReferencePath>),
}

struct Defaults {
    alpha: f64,
    delta: f64,
    epsilon: f64,
    steps: usize,
}

fn defaults(kind: ProblemKind) -> Defaults {
    match kind {
        ProblemKind::Synthetic => Defaults {
            alpha: 0.04,
            delta: 0.1,
            epsilon: 0.03,
            steps: 900,
        },
        ProblemKind::Quadratic => Defaults {
            alpha: 0.25,
            delta: 0.1,
            epsilon: 1e-6,
            steps: 200,
        },
        ProblemKind::Mpc => Defaults {
            alpha: 0.01,
            delta: 0.1,
            epsilon: 0.1,
            steps: 1000,
        },
        ProblemKind::StreamingLs | ProblemKind::CustomFile => Defaults {
            alpha: f64::NAN,
            delta: 0.1,
            epsilon: 0.01,
            steps: 949,
        },
    }
}

fn read_path_table(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("reference_file {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| {
            CliError::Config(format!("reference_file line {}: expected 'rx,ry'", i + 1))
        })?;
        points.push((
            parse_real("reference_file", a.trim())?,
            parse_real("reference_file", b.trim())?,
        ));
    }
    Ok(points)
}

impl Experiment {
    pub fn from_settings(s: &Settings, algorithm: Algorithm) -> CliResult<Self> {
        let kind = ProblemKind::parse(s.get("problem").unwrap_or("synthetic"))?;
        let d = defaults(kind);
        let delta = s.real_or("delta", d.delta)?;
        let epsilon = s.real_or("epsilon", d.epsilon)?;
        let steps = s.count_or("steps", d.steps)?;
        let seed = s.count_or("seed", 1)? as u64;
        let t0 = s.real_or("t0", 0.0)?;

        let (problem, constants, x0_default) = match kind {
            ProblemKind::Synthetic => {
                let cost = SyntheticCost {
                    jump_time: s.real_or("jump_time", 45.0)?,
                    horizon: t0 + delta * steps as f64,
                };
                let c = SyntheticCost::analytic_constants(2.0, 2.0)?;
                (
                    Problem::Cost(Box::new(cost)),
                    Some(c),
                    Vector::from_vec(vec![0.1, 1.2]),
                )
            }
            ProblemKind::Quadratic => {
                let mut cost = QuadraticDrift::new(s.count_or("dimension", 1)?)?;
                cost.horizon = t0 + delta * steps as f64;
                let c = cost.exact_constants(s.real_or("region", 2.0)?)?;
                let n = cost.dimension;
                (Problem::Cost(Box::new(cost)), Some(c), Vector::zeros(n))
            }
            ProblemKind::StreamingLs | ProblemKind::CustomFile => {
                let window = s.count_or("window", 50)?;
                let jumps = s.counts("jump_indices")?.unwrap_or_else(|| vec![250, 550]);
                let ls = if kind == ProblemKind::StreamingLs {
                    StreamingLs::generate(&StreamingLsConfig {
                        dimension: s.count_or("dimension", 50)?,
                        window,
                        steps: (steps + 1).max(window + 1),
                        jump_indices: jumps,
                        noise_sigma: s.real_or("noise_sigma", 0.01)?,
                        seed,
                        delta,
                    })?
                } else {
                    let path = s
                        .get("data_file")
                        .ok_or_else(|| CliError::Config("custom-file needs data_file".into()))?;
                    load_stream(Path::new(path), window, steps + 1, jumps, delta)?
                };
                let needs_curvature = algorithm == Algorithm::NesterovV2
                    || s.get("alpha").is_none_or(|a| a == "auto");
                let c = if needs_curvature {
                    Some(ls.curvature_constants()?)
                } else {
                    None
                };
                let n = ls.dimension();
                (Problem::Cost(Box::new(ls)), c, Vector::zeros(n))
            }
            ProblemKind::Mpc => {
                let hp = s.count_or("horizon", 10)?;
                let config = MpcConfig {
                    prediction_horizon: hp,
                    control_horizon: s.count_or("control_horizon", hp)?,
                    lambda: s.real_or("lambda", 0.1)?,
                    delta,
                    alpha: 0.0,
                    epsilon,
                    steps,
                    start: UnicycleState {
                        x: s.real_or("start_x", -100.0)?,
                        y: s.real_or("start_y", -100.0)?,
                        theta: s.real_or("theta0", 0.0)?,
                        b: s.real_or("head_offset", 0.2)?,
                    },
                    initial_control: s.real_or("initial_control", 1.0)?,
                };
                let path: Arc<dyn ReferencePath> = match s.get("reference_file") {
                    Some(p) => Arc::new(TabulatedPath {
                        points: read_path_table(Path::new(p))?,
                    }),
                    None => Arc::new(SinePath { delta }),
                };
                let c = mpc_constants(&config)?;
                let x0 = Vector::from_element(config.control_horizon, config.initial_control);
                (Problem::Mpc(config, path), Some(c), x0)
            }
        };

        let alpha = match s.get("alpha") {
            Some("auto") => None,
            Some(v) => Some(parse_real("alpha", v)?),
            None if d.alpha.is_nan() => None,
            None => Some(d.alpha),
        };
        let alpha = match alpha {
            Some(a) => a,
            None => constants
                .as_ref()
                .map(ProblemConstants::max_bound_step)
                .ok_or_else(|| CliError::Config("alpha = auto needs known constants".into()))?,
        };

        let x0 = match s.reals("x0")? {
            Some(v) => Vector::from_vec(v),
            None => x0_default,
        };
        let thresholds = s
            .reals("thresholds")?
            .unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);

        let mut solver = SolverConfig::new(algorithm, alpha, delta, epsilon, steps);
        solver.t0 = t0;
        solver.validate()?;
        let problem = match problem {
            Problem::Mpc(mut config, path) => {
                if t0 != 0.0 {
                    return Err(CliError::Config(
                        "t0: the mpc problem starts at t = 0".into(),
                    ));
                }
                config.alpha = alpha;
                if x0.len() != config.control_horizon {
                    return Err(CliError::Config(format!(
                        "x0: expected {} entries",
                        config.control_horizon
                    )));
                }
                Problem::Mpc(config, path)
            }
            other => other,
        };
        Ok(Self {
            kind,
            solver,
            x0,
            thresholds,
            constants,
            problem,
        })
    }

    /// Runs one algorithm, returning its records and summary.
    pub fn execute(&self) -> CliResult<(Vec<TrajectoryRecord>, RunSummary)> {
        match &self.problem {
            Problem::Cost(cost) => {
                let mut oracle = NewtonOracle::new(cost.as_ref(), self.x0.clone());
                let options = RunOptions {
                    constants: self.constants,
                    thresholds: self.thresholds.clone(),
                };
                let mut records = Vec::with_capacity(self.solver.steps);
                let summary = run(
                    cost.as_ref(),
                    &self.solver,
                    self.x0.clone(),
                    &options,
                    Some(&mut oracle),
                    &mut |r| records.push(r.clone()),
                )?;
                Ok((records, summary))
            }
            Problem::Mpc(config, path) => {
                let (records, diverged) =
                    simulate_from(config, &self.x0, self.solver.algorithm, path.clone())?;
                let summary = summarize(
                    self.solver.algorithm,
                    self.solver.steps,
                    &records,
                    &self.thresholds,
                    diverged,
                );
                Ok((records, summary))
            }
        }
    }
}

fn simulate_from(
    config: &MpcConfig,
    u0: &Vector,
    algorithm: Algorithm,
    path: Arc<dyn ReferencePath>,
) -> CliResult<(Vec<TrajectoryRecord>, bool)> {
    let uniform = u0.iter().all(|&v| v == u0[0]);
    if !uniform {
        return Err(CliError::Config(
            "x0: mpc needs a uniform initial control; use initial_control".into(),
        ));
    }
    let config = MpcConfig {
        initial_control: u0[0],
        ..config.clone()
    };
    let run = simulate(&config, algorithm, path)?;
    Ok((run.records, run.diverged))
}

fn summarize(
    algorithm: Algorithm,
    steps: usize,
    records: &[TrajectoryRecord],
    thresholds: &[f64],
    diverged: bool,
) -> RunSummary {
    let gaps: Vec<f64> = records.iter().filter_map(|r| r.gap).collect();
    RunSummary {
        algorithm,
        steps,
        initial_gap: None,
        final_gap: gaps.last().copied(),
        min_gap: gaps.iter().copied().reduce(f64::min),
        steps_to_threshold: thresholds
            .iter()
            .map(|&th| {
                (
                    th,
                    records
                        .iter()
                        .find(|r| r.gap.is_some_and(|g| g <= th))
                        .map(|r| r.k),
                )
            })
            .collect(),
        diverged,
        last_k: records.last().map_or(0, |r| r.k),
        grad_evals: records.iter().map(|r| r.grad_evals).sum(),
    }
}

fn real_field(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:.16e}");
    }
}

/// One CSV row; reals carry 17 significant digits.
pub fn csv_row(algorithm: Algorithm, r: &TrajectoryRecord) -> String {
    let mut out = String::with_capacity(200);
    let _ = write!(out, "{},", r.k);
    real_field(&mut out, Some(r.t));
    let _ = write!(out, ",{},", algorithm.name());
    real_field(&mut out, Some(r.f_val));
    out.push(',');
    real_field(&mut out, r.f_star);
    out.push(',');
    real_field(&mut out, r.gap);
    out.push(',');
    real_field(&mut out, Some(r.grad_norm));
    out.push(',');
    real_field(&mut out, r.x_err);
    let _ = write!(out, ",{},{}", u8::from(r.pred_active), r.grad_evals);
    out
}

fn write_csv(output: Option<&str>, body: &str) -> CliResult<()> {
    match output {
        Some(path) if path != "-" => {
            std::fs::write(path, body).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
        }
        _ => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn csv_body(runs: &[(Algorithm, Vec<TrajectoryRecord>)]) -> String {
    let mut body = String::from(CSV_HEADER);
    body.push('\n');
    for (alg, records) in runs {
        for r in records {
            body.push_str(&csv_row(*alg, r));
            body.push('\n');
        }
    }
    body
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.6e}"))
}

pub fn format_summary(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "algorithm = {}", s.algorithm);
    let _ = writeln!(out, "steps = {}", s.last_k);
    for (th, hit) in &s.steps_to_threshold {
        let hit = hit.map_or_else(|| "never".to_string(), |k| k.to_string());
        let _ = writeln!(out, "steps_to_{th:e} = {hit}");
    }
    let _ = writeln!(out, "final_gap = {}", format_opt(s.final_gap));
    let _ = writeln!(out, "min_gap = {}", format_opt(s.min_gap));
    let _ = writeln!(out, "grad_evals = {}", s.grad_evals);
    let _ = writeln!(out, "diverged = {}", s.diverged);
    out
}

/// Prints reports to stdout, or stderr when the CSV goes to stdout.
fn report(output: Option<&str>, text: &str) {
    match output {
        Some(p) if p != "-" => print!("{text}"),
        _ => eprint!("{text}"),
    }
}

fn algorithm_setting(s: &Settings) -> CliResult<Algorithm> {
    s.get("algorithm")
        .unwrap_or("alg1")
        .parse()
        .map_err(|e: Error| CliError::Config(format!("algorithm: {e}")))
}

pub fn cmd_run(s: &Settings) -> CliResult<()> {
    let algorithm = algorithm_setting(s)?;
    let experiment = Experiment::from_settings(s, algorithm)?;
    let (records, summary) = experiment.execute()?;
    let output = s.get("output");
    write_csv(output, &csv_body(&[(algorithm, records)]))?;
    report(output, &format_summary(&summary));
    if summary.diverged {
        return Err(CliError::Diverged {
            algorithm,
            k: summary.last_k,
        });
    }
    Ok(())
}

/// Inclusive step ranges such as `100-240,350-540`.
pub fn parse_ranges(text: &str) -> CliResult<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let bad = || CliError::Config(format!("rank_ranges: bad range '{part}'"));
            let (a, b) = part.trim().split_once('-').ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a, b))
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median gap of the records whose step lies in one of `ranges`.
pub fn median_gap(records: &[TrajectoryRecord], ranges: &[(usize, usize)]) -> Option<f64> {
    let mut gaps: Vec<f64> = records
        .iter()
        .filter(|r| ranges.iter().any(|&(a, b)| a <= r.k && r.k <= b))
        .filter_map(|r| r.gap)
        .collect();
    median(&mut gaps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub algorithm: Algorithm,
    pub median_gap: Option<f64>,
    pub diverged: bool,
}

/// Converged runs by increasing median gap, then runs without a median.
pub fn rank(entries: &mut [RankEntry]) {
    entries.sort_by(|a, b| {
        let key = |e: &RankEntry| {
            (
                e.diverged || e.median_gap.is_none(),
                e.median_gap.unwrap_or(f64::INFINITY),
            )
        };
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.algorithm.name().cmp(b.algorithm.name()))
    });
}

pub fn cmd_compare(s: &Settings) -> CliResult<()> {
    let list = s
        .get("algorithms")
        .ok_or_else(|| CliError::Config("compare needs algorithms".into()))?;
    let mut algorithms = list
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse::<Algorithm>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(format!("algorithms: {e}")))?;
    if algorithms.len() < 2 {
        return Err(CliError::Config(
            "algorithms: compare needs at least two".into(),
        ));
    }
    algorithms.sort_by_key(|a| a.name());

    let experiments = algorithms
        .iter()
        .map(|&a| Experiment::from_settings(s, a))
        .collect::<CliResult<Vec<_>>>()?;
    let results: Vec<CliResult<(Vec<TrajectoryRecord>, RunSummary)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = experiments
                .iter()
                .map(|e| scope.spawn(move || e.execute()))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(CliError::Runtime("worker panicked".into())))
                })
                .collect()
        });

    let steps = experiments[0].solver.steps;
    let ranges = match s.get("rank_ranges") {
        Some(text) => parse_ranges(text)?,
        None => vec![(1, steps.max(1))],
    };
    let mut runs = Vec::new();
    let mut entries = Vec::new();
    let mut summaries = String::new();
    let mut first_failure = None;
    for (alg, result) in algorithms.iter().zip(results) {
        match result {
            Ok((records, summary)) => {
                entries.push(RankEntry {
                    algorithm: *alg,
                    median_gap: median_gap(&records, &ranges),
                    diverged: summary.diverged,
                });
                summaries.push_str(&format_summary(&summary));
                summaries.push('\n');
                if summary.diverged && first_failure.is_none() {
                    first_failure = Some(CliError::Diverged {
                        algorithm: *alg,
                        k: summary.last_k,
                    });
                }
                runs.push((*alg, records));
            }
            Err(e) => {
                let _ = writeln!(summaries, "algorithm = {alg}\nerror = {e}\n");
                entries.push(RankEntry {
                    algorithm: *alg,
                    median_gap: None,
                    diverged: true,
                });
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
            }
        }
    }
    let output = s.get("output");
    write_csv(output, &csv_body(&runs))?;

    rank(&mut entries);
    let mut table = String::from("rank,algorithm,median_gap,diverged\n");
    for (i, e) in entries.iter().enumerate() {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            i + 1,
            e.algorithm,
            format_opt(e.median_gap),
            e.diverged
        );
    }
    report(output, &format!("{summaries}{table}"));
    first_failure.map_or(Ok(()), Err)
}

/// Constants given explicitly, or estimated for the analytic problems.
fn bound_constants(s: &Settings) -> CliResult<ProblemConstants> {
    let keys = ["m", "big_m", "k1", "k2", "k3"];
    let given: Vec<Option<f64>> = keys.iter().map(|k| s.real(k)).collect::<CliResult<_>>()?;
    if given.iter().all(Option::is_some) {
        let v: Vec<f64> = given.into_iter().flatten().collect();
        return Ok(ProblemConstants::new(v[0], v[1], v[2], v[3], v[4])?);
    }
    if let Some(i) = given.iter().position(Option::is_some) {
        return Err(CliError::Config(format!(
            "{}: give all of m, big_m, k1, k2, k3 or none",
            keys[i]
        )));
    }
    let region = s.real_or("region", 2.0)?;
    let samples = s.count_or("samples", 1000)?;
    let seed = s.count_or("seed", 1)? as u64;
    let t0 = s.real_or("t0", 0.0)?;
    let t_max = s.real_or("t_max", 10.0)?;
    let cost: Box<dyn TimeVaryingCost> =
        match ProblemKind::parse(s.get("problem").unwrap_or("synthetic"))? {
            ProblemKind::Synthetic => Box::new(SyntheticCost {
                jump_time: s.real_or("jump_time", 45.0)?,
                horizon: t_max,
            }),
            ProblemKind::Quadratic => Box::new(QuadraticDrift::new(s.count_or("dimension", 1)?)?),
            _ => {
                return Err(CliError::Config(
                    "problem: constants for this problem must be given as m, big_m, k1, k2, k3"
                        .into(),
                ))
            }
        };
    let region = Region::cube(cost.dimension(), region)?;
    Ok(estimate_constants(
        cost.as_ref(),
        &region,
        (t0, t_max),
        samples,
        seed,
    )?)
}

pub fn bounds_report(s: &Settings) -> CliResult<String> {
    let c = bound_constants(s)?;
    let alpha = match s.get("alpha") {
        None | Some("auto") => c.max_bound_step(),
        Some(v) => parse_real("alpha", v)?,
    };
    if alpha > c.max_bound_step() {
        return Err(CliError::Config(format!(
            "alpha: step size {alpha} violates the tracking bound's condition alpha <= 1/(2M) = {}",
            c.max_bound_step()
        )));
    }
    let delta = s.real_or("delta", 0.1)?;
    let epsilon = s.real_or("epsilon", 0.1)?;
    let r = BoundReport::new(&c, alpha, delta, epsilon)?;
    let lo = s.real_or("eps_lo", 1e-4)?;
    let hi = s.real_or("eps_hi", 10.0)?;
    let eps = optimal_epsilon(&c, delta, (lo, hi))?;

    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("m", format!("{:.16e}", c.m));
    kv("big_m", format!("{:.16e}", c.big_m));
    kv("k1", format!("{:.16e}", c.k1));
    kv("k2", format!("{:.16e}", c.k2));
    kv("k3", format!("{:.16e}", c.k3));
    kv("empirical", c.empirical.to_string());
    kv("alpha", format!("{alpha:.16e}"));
    kv("delta", format!("{delta:.16e}"));
    kv("epsilon", format!("{epsilon:.16e}"));
    kv("psi", format!("{:.16e}", r.psi));
    kv("gamma", format!("{:.16e}", r.gamma));
    kv("gamma_prime", format!("{:.16e}", r.gamma_prime));
    kv("mu", format!("{:.16e}", r.mu));
    kv("kappa", format!("{:.16e}", r.kappa));
    kv("contraction", format!("{:.16e}", r.contraction));
    kv("ultimate_alg1", format!("{:.16e}", r.ultimate_alg1));
    kv("ultimate_alg2", format!("{:.16e}", r.ultimate_alg2));
    kv(
        "epsilon_root",
        eps.root
            .map_or_else(|| "none".to_string(), |v| format!("{v:.16e}")),
    );
    kv("epsilon_fallback", format!("{:.16e}", eps.fallback));
    Ok(out)
}

pub fn cmd_bounds(s: &Settings) -> CliResult<()> {
    print!("{}", bounds_report(s)?);
    Ok(())
}

fn command() -> Command {
    let mut args: Vec<Arg> = vec![Arg::new("config")
        .help("settings file with 'key = value' lines")
        .value_name("FILE")];
    for (key, help) in KEYS {
        let kebab = key.replace('_', "-");
        let mut arg = Arg::new(*key)
            .long(kebab.clone())
            .value_name("VALUE")
            .help(*help);
        if kebab != *key {
            arg = arg.alias(*key);
        }
        args.push(arg);
    }
    args.push(
        Arg::new("set")
            .long("set")
            .value_name("KEY=VALUE")
            .action(ArgAction::Append)
            .help("set any key; may be repeated"),
    );
    Command::new("tvopt")
        .about("Prediction-correction tracking of time-varying convex costs")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("run")
                .about("run one algorithm and write its trajectory CSV")
                .args(args.clone()),
        )
        .subcommand(
            Command::new("compare")
                .about("run several algorithms on the same instance and rank them")
                .args(args.clone()),
        )
        .subcommand(
            Command::new("bounds")
                .about("print tracking-bound constants")
                .args(args),
        )
}

fn settings_from(m: &clap::ArgMatches) -> CliResult<Settings> {
    let mut settings = match m.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(PathBuf::from(path))
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            Settings::parse(&text)?
        }
        None => Settings::default(),
    };
    if let Some(pairs) = m.get_many::<String>("set") {
        for pair in pairs {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
            })?;
            settings.set(k, v)?;
        }
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            settings.set(key, v)?;
        }
    }
    Ok(settings)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = settings_from(sub).and_then(|s| match name {
        "run" => cmd_run(&s),
        "compare" => cmd_compare(&s),
        "bounds" => cmd_bounds(&s),
        _ => unreachable!("unknown subcommand"),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
