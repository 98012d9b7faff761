//! The `mtlgrad` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or input
//! error, 3 numeric abort.

pub mod config;
pub mod output;
pub mod stats;
pub mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::combiners::{build_combiner, Method, MuMode, ObjectiveVariant};
use crate::error::Error;
use crate::runner::{run_trajectory, OptimizerKind, ToyObjective, TrajectoryTrace};
use crate::toybench::{
    default_grid_oracle, format_oracle_fixtures, grid_oracle, init_points, weight_presets, Bounds, GridOracleResult,
    ToyWeighting,
};

pub use config::RunConfig;
use output::{fmt_g9, write_trace_csv, MATRIX_HEADER};

/// A toy cell counts as converged when its final loss is this close to the oracle.
pub const CONVERGENCE_GAP: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "mtlgrad", version, about = "Multi-task gradient combiners on a synthetic two-task benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one toy trajectory and write its trace CSV plus a JSON sidecar.
    ToyRun(ToyRunArgs),
    /// Run methods × weightings × initial points and write one CSV row per cell.
    ToyMatrix(ToyMatrixArgs),
    /// Run a named invariant suite.
    Verify(VerifyArgs),
    /// Histograms and progress series over trace CSVs.
    Stats(StatsArgs),
    /// Write grid-oracle optima for the preset weightings.
    Oracle(OracleArgs),
}

/// Flags that override fields of the JSON config.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub mu_mode: Option<MuMode>,
    #[arg(long)]
    pub objective_variant: Option<ObjectiveVariant>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub update_every: Option<usize>,
    /// Task weighting `a1,a2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    /// Initial point `theta1,theta2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub init: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(method, c, mu_mode, objective_variant, optimizer, lr, steps, update_every, seed);
        if let Some(w) = &self.weights {
            cfg.weights = pair(w, "weights")?;
        }
        if let Some(p) = &self.init {
            cfg.init = pair(p, "init")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pair(v: &[f64], what: &str) -> Result<[f64; 2], Error> {
    <[f64; 2]>::try_from(v).map_err(|_| Error::InvalidConfig(format!("--{what} takes two comma-separated values")))
}

#[derive(Debug, Args)]
pub struct ToyRunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Trace CSV path; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyMatrixArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Comma-separated methods, in output order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: logical CPUs).
    #[arg(long, env = "MTLGRAD_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub suite: verify::Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Verify(String),
    Config(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Config(m) => write!(f, "error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric abort: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(|e| io(path, e))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ToyRun(a) => toy_run(a),
        Command::ToyMatrix(a) => toy_matrix(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
    }
}

fn trajectory(cfg: &RunConfig) -> Result<TrajectoryTrace, CliError> {
    let mut comb = build_combiner(cfg.method, &cfg.combiner(), &cfg.solver())?;
    Ok(run_trajectory(&ToyObjective, comb.as_mut(), &cfg.optimizer_config(), &cfg.init, &cfg.weights)?)
}

#[derive(Debug, Serialize)]
struct RunSidecar<'a> {
    config: &'a RunConfig,
    combiner: String,
    records: usize,
    final_theta: Vec<f64>,
    final_loss: f64,
    oracle_theta: [f64; 2],
    oracle_loss: f64,
    oracle_gap: f64,
    converged: bool,
    abort: Option<String>,
}

fn toy_run(a: ToyRunArgs) -> Result<(), CliError> {
    let mut cfg = a.overrides.resolve()?;
    let out = a.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("trace.csv"));
    cfg.output = Some(out.clone());
    let trace = trajectory(&cfg)?;
    let mut f = create(&out)?;
    write_trace_csv(&trace, &mut f)?;
    f.flush().map_err(|e| io(&out, e))?;

    let oracle = default_grid_oracle(&cfg.weighting()?);
    let final_loss = trace.final_weighted_loss();
    let gap = final_loss - oracle.loss_star;
    let sidecar = RunSidecar {
        config: &cfg,
        combiner: trace.method.clone(),
        records: trace.records.len(),
        final_theta: trace.final_record().theta.clone(),
        final_loss,
        oracle_theta: oracle.theta_star.0,
        oracle_loss: oracle.loss_star,
        oracle_gap: gap,
        converged: gap <= CONVERGENCE_GAP,
        abort: trace.abort.clone(),
    };
    write_json(&out.with_extension("json"), &sidecar)?;
    println!(
        "{}: {} records, final loss {}, oracle {}, gap {}",
        trace.method,
        trace.records.len(),
        fmt_g9(final_loss),
        fmt_g9(oracle.loss_star),
        fmt_g9(gap)
    );
    match trace.abort {
        Some(why) => Err(CliError::Numeric(why)),
        None => Ok(()),
    }
}

/// One cell of the toy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub method: Method,
    pub weighting: ToyWeighting,
    pub init: [f64; 2],
    pub final_loss: f64,
    pub oracle_loss: f64,
    pub abort: Option<String>,
}

impl MatrixCell {
    pub fn gap(&self) -> f64 {
        self.final_loss - self.oracle_loss
    }

    pub fn converged(&self) -> bool {
        self.abort.is_none() && self.gap() <= CONVERGENCE_GAP
    }
}

/// Every (method, weighting, init) cell in row order, run on `jobs` threads.
pub fn run_matrix(base: &RunConfig, methods: &[Method], jobs: usize) -> Result<Vec<MatrixCell>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| {
        let oracles: Vec<(ToyWeighting, GridOracleResult)> =
            weight_presets().into_iter().map(|w| (w, default_grid_oracle(&w))).collect();
        let jobs: Vec<(Method, usize, [f64; 2])> = methods
            .iter()
            .flat_map(|&m| (0..oracles.len()).flat_map(move |wi| init_points().into_iter().map(move |p| (m, wi, p.0))))
            .collect();
        jobs.par_iter()
            .map(|&(method, wi, init)| {
                let (w, oracle) = &oracles[wi];
                let cfg = RunConfig { method, weights: w.as_array(), init, ..base.clone() };
                let trace = trajectory(&cfg)?;
                Ok(MatrixCell {
                    method,
                    weighting: *w,
                    init,
                    final_loss: trace.final_weighted_loss(),
                    oracle_loss: oracle.loss_star,
                    abort: trace.abort,
                })
            })
            .collect()
    })
}

pub fn write_matrix_csv<W: Write>(cells: &[MatrixCell], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(MATRIX_HEADER).map_err(e)?;
    for c in cells {
        w.write_record([
            c.method.to_string(),
            fmt_g9(c.weighting.a1),
            fmt_g9(c.weighting.a2),
            fmt_g9(c.init[0]),
            fmt_g9(c.init[1]),
            fmt_g9(c.final_loss),
            fmt_g9(c.oracle_loss),
            fmt_g9(c.gap()),
            c.converged().to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| CliError::Config(err.to_string()))
}

fn toy_matrix(a: ToyMatrixArgs) -> Result<(), CliError> {
    let base = a.overrides.resolve()?;
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cells = run_matrix(&base, &a.methods, jobs)?;
    let mut f = create(&a.out)?;
    write_matrix_csv(&cells, &mut f)?;
    f.flush().map_err(|e| io(&a.out, e))?;
    for &m in &a.methods {
        let mine: Vec<_> = cells.iter().filter(|c| c.method == m).collect();
        let ok = mine.iter().filter(|c| c.converged()).count();
        println!("{m}: {ok}/{} cells converged", mine.len());
    }
    match cells.iter().find_map(|c| c.abort.clone()) {
        Some(why) => Err(CliError::Numeric(why)),
        None => Ok(()),
    }
}

fn verify_cmd(a: VerifyArgs) -> Result<(), CliError> {
    let report = verify::run_suite(a.suite, a.seed)?;
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.summary);
        for f in &c.failures {
            println!("    {f}");
        }
    }
    if let Some(counts) = &report.census {
        for c in counts {
            println!(
                "    {}: {} pareto failures over {} steps ({} skipped, {} failures on skipped steps)",
                c.combiner, c.pareto_failures, c.steps, c.skipped, c.failures_on_skipped
            );
        }
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verify(format!("suite {}", report.suite)))
    }
}

fn stats_cmd(a: StatsArgs) -> Result<(), CliError> {
    if a.bins == 0 {
        return Err(CliError::Config("--bins must be >= 1".into()));
    }
    let mut all = Vec::new();
    let mut steps = Vec::new();
    for path in &a.traces {
        let f = File::open(path).map_err(|e| io(path, e))?;
        let rows = output::read_trace_csv(f).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        all.push(stats::trace_stats(&name, &rows, a.bins)?);
        steps.push(rows.iter().map(|r| r.step).collect::<Vec<_>>());
    }
    for which in ["imbalance", "mu", "similarity"] {
        let path = a.out_dir.join(format!("{which}_hist.csv"));
        let mut f = create(&path)?;
        stats::write_histograms(&all, which, &mut f)?;
        f.flush().map_err(|e| io(&path, e))?;
    }
    let path = a.out_dir.join("progress.csv");
    let mut f = create(&path)?;
    stats::write_progress(&all, &steps, &mut f)?;
    f.flush().map_err(|e| io(&path, e))?;
    println!("wrote histograms and progress for {} trace(s) to {}", all.len(), a.out_dir.display());
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> Result<(), CliError> {
    let results = weight_presets()
        .into_iter()
        .map(|w| grid_oracle(&w, &Bounds::default(), a.step).map(|r| (w, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut f = create(&a.out)?;
    f.write_all(format_oracle_fixtures(&results).as_bytes()).and_then(|_| f.flush()).map_err(|e| io(&a.out, e))?;
    for (w, r) in &results {
        println!(
            "({}, {}): loss {} at ({}, {})",
            w.a1,
            w.a2,
            fmt_g9(r.loss_star),
            fmt_g9(r.theta_star.0[0]),
            fmt_g9(r.theta_star.0[1])
        );
    }
    Ok(())
}
