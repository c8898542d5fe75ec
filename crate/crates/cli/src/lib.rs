//! Command-line front end for `mlta`.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when estimation
//! fails numerically.

use std::ffi::OsString;
use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mlta::data::infer_response_count;
use mlta::inference::{bootstrap_se, write_bootstrap, BootstrapConfig};
use mlta::metrics::{ari_table_csv, evaluate, mse_table_csv, replicate_study, write_report};
use mlta::selection::{select_model, write_bic_table, GridSpec};
use mlta::simulate::{read_truth, simulate_network, write_truth, SimSpec};
use mlta::{fit_multistart, load_network, read_model, write_model, write_network};
use mlta::{FitConfig, MltaError, ModelDims, NetworkData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "MLTA_THREADS";

#[derive(Parser, Debug, Serialize)]
#[command(name = "mlta", version, about = "Multilevel mixtures of latent trait analyzers")]
pub struct Cli {
    /// Worker threads; falls back to $MLTA_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Simulate a multi-layer network with known memberships.
    Simulate(SimulateArgs),
    /// Fit one model.
    Fit(FitArgs),
    /// Fit a grid of models and pick the smallest BIC.
    Select(SelectArgs),
    /// Bootstrap standard errors for a fitted model.
    Bootstrap(BootstrapArgs),
    /// Compare a fitted model with the simulation truth.
    Evaluate(EvaluateArgs),
    /// Run a simulation study and write recovery tables.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long = "N")]
    pub n: usize,
    #[arg(long = "R")]
    pub r: usize,
    #[arg(long = "H", default_value_t = 20)]
    pub h: usize,
    #[arg(long = "G", default_value_t = 3)]
    pub g: usize,
    #[arg(long = "Q", default_value_t = 2)]
    pub q: usize,
    #[arg(long = "D", default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

/// Estimation settings shared by every fitting subcommand.
#[derive(Args, Debug, Serialize)]
pub struct EstimationArgs {
    /// One loading matrix shared by all groups.
    #[arg(long, conflicts_with = "full_loadings")]
    pub parsimonious: bool,
    /// A loading matrix per group (the default).
    #[arg(long)]
    pub full_loadings: bool,
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    /// Relative change of the approximate log-likelihood that ends a fit.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long = "inner-iters", default_value_t = 100)]
    pub inner_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EstimationArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            n_starts: self.starts,
            max_outer_iters: self.max_iter,
            outer_tol: self.tol,
            inner_iters: self.inner_iters,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct InputArgs {
    /// Network file with header `layer,y1..yR,<covariates>`.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of response columns; read from the header when omitted.
    #[arg(long = "R")]
    pub r: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> mlta::Result<NetworkData> {
        let r = match self.r {
            Some(r) => r,
            None => infer_response_count(&self.input)?,
        };
        load_network(&self.input, r)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long = "G")]
    pub g: usize,
    #[arg(long = "D")]
    pub d: usize,
    #[arg(long = "Q")]
    pub q: usize,
    #[command(flatten)]
    pub est: EstimationArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Range `a..b` (inclusive) or a single value.
    #[arg(long = "G", value_parser = parse_range)]
    pub g: RangeInclusive<usize>,
    #[arg(long = "D", value_parser = parse_range)]
    pub d: RangeInclusive<usize>,
    #[arg(long = "Q", value_parser = parse_range)]
    pub q: RangeInclusive<usize>,
    #[command(flatten)]
    pub est: EstimationArgs,
    /// BIC table.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the selected model.
    #[arg(long)]
    pub best: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fitted model to assess.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
    /// Refit every replicate from random starts instead of the estimate.
    #[arg(long)]
    pub multistart: bool,
    #[command(flatten)]
    pub est: EstimationArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplicateArgs {
    /// Comma-separated node counts.
    #[arg(long = "N", value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long = "R", value_delimiter = ',', required = true)]
    pub r: Vec<usize>,
    #[arg(long = "Q", value_delimiter = ',', default_value = "2")]
    pub q: Vec<usize>,
    /// Replicates per scenario.
    #[arg(long = "B", default_value_t = 10)]
    pub b: usize,
    #[command(flatten)]
    pub est: EstimationArgs,
    /// Receives `ari.csv` and `mse.csv`.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

/// Parse `a..b` (inclusive) or `a`.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{s}` is not a range of the form a..b"))
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("range `{s}` must satisfy 1 <= a <= b"));
    }
    Ok(lo..=hi)
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("{THREADS_ENV}={v} is not a thread count")),
        _ => Ok(None),
    }
}

impl EstimationArgs {
    fn validate(&self) -> mlta::Result<()> {
        self.config().validate()
    }
}

fn exit_code(e: &MltaError) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    eprintln!(
        "config: {}",
        serde_json::to_string(&cli).unwrap_or_else(|_| format!("{cli:?}"))
    );
    match mlta::par::with_threads(threads, || execute(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cmd: &Command) -> mlta::Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Replicate(a) => replicate(a),
    }
}

fn simulate(a: &SimulateArgs) -> mlta::Result<()> {
    let spec = SimSpec {
        h: a.h,
        g: a.g,
        d: a.d,
        ..SimSpec::standard(a.n, a.r, a.q, a.seed)
    };
    let (data, truth) = simulate_network(&spec)?;
    write_network(&data, &a.out)?;
    write_truth(&truth, &a.truth)?;
    println!(
        "simulated {} nodes in {} layers with {} responses",
        data.n_nodes(),
        data.n_layers(),
        data.n_responses()
    );
    Ok(())
}

fn fit(a: &FitArgs) -> mlta::Result<()> {
    a.est.validate()?;
    let data = a.input.load()?;
    let dims = ModelDims::new(a.g, a.d, a.q, a.est.parsimonious);
    dims.validate(&data)?;
    let res = fit_multistart(&data, &dims, &a.est.config())?;
    write_model(&res, &a.out)?;
    println!(
        "loglik {} bic {} converged {} iterations {} start {}",
        res.loglik, res.bic, res.converged, res.n_iterations, res.start_index
    );
    Ok(())
}

fn select(a: &SelectArgs) -> mlta::Result<()> {
    a.est.validate()?;
    let grid = GridSpec {
        g: a.g.clone(),
        d: a.d.clone(),
        q: a.q.clone(),
        parsimonious: a.est.parsimonious,
    };
    grid.validate()?;
    let data = a.input.load()?;
    let sel = select_model(&data, &grid, &a.est.config())?;
    write_bic_table(&sel.table, &a.out)?;
    write_model(&sel.best, &a.best)?;
    let d = sel.best.dims;
    println!("selected G={} D={} Q={} bic {}", d.g, d.d, d.q, sel.best.bic);
    Ok(())
}

fn bootstrap(a: &BootstrapArgs) -> mlta::Result<()> {
    a.est.validate()?;
    let data = a.input.load()?;
    let fitted = read_model(&a.model)?;
    fitted.dims.validate(&data)?;
    fitted
        .params
        .check_shape(&fitted.dims, data.n_covariates(), data.n_responses())?;
    if !fitted.converged {
        eprintln!("warning: the model being bootstrapped did not converge");
    }
    let boot = BootstrapConfig {
        replicates: a.boot,
        multistart: a.multistart,
    };
    let res = bootstrap_se(&data, &fitted.dims, &fitted, boot, &a.est.config())?;
    write_bootstrap(&res, &a.out)?;
    println!(
        "{} replicates, {} failed",
        res.replicates(),
        res.n_failed
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> mlta::Result<()> {
    let fit = read_model(&a.model)?;
    let truth = read_truth(&a.truth)?;
    let report = evaluate(&fit, &truth)?;
    write_report(&report, &a.out)?;
    println!(
        "ARI nodes {} layers {}",
        report.ari_nodes, report.ari_layers
    );
    Ok(())
}

fn replicate(a: &ReplicateArgs) -> mlta::Result<()> {
    a.est.validate()?;
    if a.b == 0 {
        return Err(MltaError::InvalidInput("--B must be at least 1".into()));
    }
    let cfg = a.est.config();
    let mut rows = Vec::new();
    for &n in &a.n {
        for &r in &a.r {
            for &q in &a.q {
                let spec = SimSpec::standard(n, r, q, a.est.seed);
                let study = replicate_study(&spec, a.b, &cfg)?;
                println!(
                    "N={n} R={r} Q={q}: ARI nodes {:.3} layers {:.3} ({} failed)",
                    study.mean_ari_nodes(),
                    study.mean_ari_layers(),
                    study.failures.len()
                );
                rows.push((spec, study));
            }
        }
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| MltaError::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    mlta::atomic::write_atomic(&a.out_dir.join("ari.csv"), ari_table_csv(&rows).as_bytes())?;
    mlta::atomic::write_atomic(&a.out_dir.join("mse.csv"), mse_table_csv(&rows).as_bytes())?;
    Ok(())
}
