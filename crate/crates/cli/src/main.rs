mod config;
mod io;

use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dplr_core::acov::{acov_gauss_legendre_reference, acov_hybrid};
use dplr_core::dense::{dense_covariance, dense_nll};
use dplr_core::fit::{estimator_study, fit, fmt_float, FitConfig, Method, StudyConfig};
use dplr_core::likelihood::{
    assemble_correction, assemble_with_derivatives, fisher_exact, fisher_exact_from, fisher_stochastic,
    gradient_factored, nll, AssemblyConfig,
};
use dplr_core::models::{builtin, SpectralModel};
use dplr_core::simulate::circulant_embedding_sample;
use dplr_core::whittle::{debiased_whittle_nll, whittle_nll};
use faer::Mat;
use serde_json::{json, Value};

use config::Config;
use io::{json_float, read_series, write_output};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(dplr_core::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Core(e) => e.kind(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Core(e) if e.is_usage() || matches!(e, dplr_core::Error::Capability(_)) => 2,
            CliError::Core(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

impl From<dplr_core::Error> for CliError {
    fn from(e: dplr_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dplr", version, about = "Diagonal-plus-low-rank Gaussian likelihoods for stationary time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Autocovariances h_0..h_{n-1} of a spectral model as CSV.
    Acov(AcovArgs),
    /// Negative log-likelihood of a series.
    Loglik(LikArgs),
    /// Gradient of the negative log-likelihood as CSV.
    Grad(LikArgs),
    /// Expected Fisher information as a CSV matrix.
    Fisher(FisherArgs),
    /// Exact Gaussian samples as CSV, one series per column.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of a series; JSON on stdout.
    Fit(FitArgs),
    /// Monte Carlo comparison of estimators.
    Study(StudyArgs),
    /// Timing sweep over a dyadic grid of n as CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file ("schema": 1); flags take precedence.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Built-in model: ar1, expdecay or white.
    #[arg(long)]
    model: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct Assembly {
    /// Rank of the low-rank correction.
    #[arg(long, short = 'r')]
    rank: Option<usize>,
    /// Rangefinder oversampling.
    #[arg(long)]
    oversampling: Option<usize>,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Lags above this use the asymptotic expansion.
    #[arg(long)]
    crossover_lag: Option<usize>,
    /// Do not split quadrature at the model's rough points.
    #[arg(long)]
    no_split: bool,
    /// Relative eigenvalue truncation of the correction.
    #[arg(long)]
    trunc_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct AcovArgs {
    #[command(flatten)]
    common: Common,
    /// Parameters, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Use the Gauss–Legendre reference instead of the hybrid scheme.
    #[arg(long)]
    reference: bool,
    #[command(flatten)]
    assembly: Assembly,
}

#[derive(Args, Debug)]
struct LikArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Expected length of the series.
    #[arg(long)]
    n: Option<usize>,
    /// Data: one real per line, or CSV with one series per column.
    #[arg(long)]
    y_file: Option<String>,
    /// Column of the y-file to use.
    #[arg(long)]
    column: Option<usize>,
    /// dplr, whittle, debiased or dense.
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    assembly: Assembly,
}

#[derive(Args, Debug)]
struct FisherArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Estimate with this many Rademacher probes instead of exactly.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    assembly: Assembly,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Number of series.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Starting point.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<String>,
    #[arg(long)]
    y_file: Option<String>,
    #[arg(long)]
    column: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    /// Report inverse-Fisher standard errors.
    #[arg(long)]
    se: bool,
    #[command(flatten)]
    assembly: Assembly,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    theta_true: Option<String>,
    /// Starting point of every fit (default: the truth).
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated methods (default: all four).
    #[arg(long)]
    methods: Option<String>,
    #[command(flatten)]
    assembly: Assembly,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// Smallest n is 2^min_exp.
    #[arg(long, default_value_t = 10)]
    min_exp: u32,
    /// Largest n is 2^max_exp.
    #[arg(long, default_value_t = 14)]
    max_exp: u32,
    /// Repetitions per point; the median is reported.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Skip the gradient and Fisher timings.
    #[arg(long)]
    nll_only: bool,
    #[command(flatten)]
    assembly: Assembly,
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| CliError::Usage(format!("bad {what} entry '{t}'"))))
        .collect()
}

struct Ctx {
    cfg: Config,
}

impl Ctx {
    fn new(common: &Common) -> CliResult<Self> {
        let cfg = match &common.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(k) = common.threads.or(cfg.threads) {
            if k == 0 {
                return Err(CliError::Usage("--threads must be positive".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        }
        Ok(Ctx { cfg })
    }

    fn model(&self, common: &Common) -> CliResult<std::sync::Arc<dyn SpectralModel>> {
        let name = common
            .model
            .clone()
            .or_else(|| self.cfg.model.clone())
            .ok_or_else(|| CliError::Usage("--model is required".into()))?;
        Ok(builtin(&name)?)
    }

    fn theta(&self, flag: &Option<String>, from_cfg: &Option<Vec<f64>>, what: &str) -> CliResult<Vec<f64>> {
        match flag {
            Some(s) => parse_list(s, what),
            None => from_cfg.clone().ok_or_else(|| CliError::Usage(format!("--{what} is required"))),
        }
    }

    fn n(&self, flag: Option<usize>) -> CliResult<usize> {
        flag.or(self.cfg.n).ok_or_else(|| CliError::Usage("--n is required".into()))
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.seed).unwrap_or(0)
    }

    fn method(&self, flag: &Option<String>) -> CliResult<Method> {
        Ok(flag.clone().or_else(|| self.cfg.method.clone()).unwrap_or_else(|| "dplr".into()).parse()?)
    }

    /// Settings for series of length n. Without an explicit rank the default
    /// is lowered to fit short series.
    fn assembly(&self, a: &Assembly, n: usize) -> AssemblyConfig {
        let mut cfg = AssemblyConfig::default();
        if let Some(p) = a.oversampling.or(self.cfg.oversampling) {
            cfg.oversampling = p;
        }
        match a.rank.or(self.cfg.r) {
            Some(r) => cfg.rank = r,
            None => cfg.rank = cfg.rank.min(n.saturating_sub(cfg.oversampling)),
        }
        cfg.seed = self.seed(a.seed);
        if let Some(k) = a.crossover_lag.or(self.cfg.crossover_lag) {
            cfg.quadrature.crossover_lag = k;
        }
        if a.no_split || self.cfg.split == Some(false) {
            cfg.quadrature.split_rough_points = false;
        }
        if let Some(t) = a.trunc_tol.or(self.cfg.trunc_tol) {
            cfg.trunc_tol = t;
        }
        cfg
    }

    fn series(&self, path: &Option<String>, column: Option<usize>, n: Option<usize>) -> CliResult<Vec<f64>> {
        let path = path
            .clone()
            .or_else(|| self.cfg.y_file.clone())
            .ok_or_else(|| CliError::Usage("--y-file is required".into()))?;
        let y = read_series(&path, column.unwrap_or(0))?;
        if let Some(n) = n.or(self.cfg.n) {
            if n != y.len() {
                return Err(CliError::Usage(format!("n = {n} but {path} holds {} values", y.len())));
            }
        }
        Ok(y)
    }

    fn out(&self, common: &Common) -> Option<String> {
        common.out.clone().or_else(|| self.cfg.out.clone())
    }
}

fn csv_matrix(m: &Mat<f64>) -> String {
    let p = m.ncols();
    let mut s = (0..p).map(|j| format!("theta{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..p).map(|j| fmt_float(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn objective_value(method: Method, model: &dyn SpectralModel, theta: &[f64], y: &[f64], cfg: &AssemblyConfig) -> CliResult<f64> {
    Ok(match method {
        Method::Dplr => nll(&assemble_correction(model, theta, y.len(), cfg)?, y)?,
        Method::Whittle => whittle_nll(model, theta, y)?,
        Method::Debiased => debiased_whittle_nll(y, &acov_hybrid(model, theta, y.len(), &cfg.quadrature)?)?,
        Method::Dense => {
            let h = acov_hybrid(model, theta, y.len(), &cfg.quadrature)?;
            dense_nll(dense_covariance(&h.values, y.len())?.as_ref(), y)?
        }
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Acov(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            let n = ctx.n(a.n)?;
            let cfg = ctx.assembly(&a.assembly, n);
            let table = if a.reference {
                acov_gauss_legendre_reference(model.as_ref(), &theta, n, 32, (4 * n).max(64))?
            } else {
                acov_hybrid(model.as_ref(), &theta, n, &cfg.quadrature)?
            };
            let mut s = String::from("lag,value\n");
            for (k, v) in table.values.iter().enumerate() {
                s.push_str(&format!("{k},{}\n", fmt_float(*v)));
            }
            write_output(&ctx.out(&a.common), &s)
        }
        Command::Loglik(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            let y = ctx.series(&a.y_file, a.column, a.n)?;
            let v = objective_value(ctx.method(&a.method)?, model.as_ref(), &theta, &y, &ctx.assembly(&a.assembly, y.len()))?;
            write_output(&ctx.out(&a.common), &format!("{}\n", fmt_float(v)))
        }
        Command::Grad(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            let y = ctx.series(&a.y_file, a.column, a.n)?;
            let method = ctx.method(&a.method)?;
            let fc = FitConfig { assembly: ctx.assembly(&a.assembly, y.len()), ..Default::default() };
            let (_, g) = dplr_core::fit::objective(method, model.as_ref(), &theta, &y, &fc)?;
            let mut s = String::from("param,value\n");
            for (j, v) in g.iter().enumerate() {
                s.push_str(&format!("{j},{}\n", fmt_float(*v)));
            }
            write_output(&ctx.out(&a.common), &s)
        }
        Command::Fisher(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            let n = ctx.n(a.n)?;
            let cfg = ctx.assembly(&a.assembly, n);
            let m = match a.samples.or(ctx.cfg.samples) {
                Some(l) => fisher_stochastic(model.as_ref(), &theta, n, l, cfg.seed, &cfg)?,
                None => fisher_exact(model.as_ref(), &theta, n, &cfg)?,
            };
            write_output(&ctx.out(&a.common), &csv_matrix(&m))
        }
        Command::Simulate(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            let n = ctx.n(a.n)?;
            let count = a.count.or(ctx.cfg.count).unwrap_or(1);
            if count == 0 {
                return Err(CliError::Usage("--count must be positive".into()));
            }
            let h = acov_hybrid(model.as_ref(), &theta, n, &AssemblyConfig::default().quadrature)?;
            let ys = circulant_embedding_sample(&h.values, n, count, ctx.seed(a.seed))?;
            let mut s = (0..count).map(|c| format!("series{c}")).collect::<Vec<_>>().join(",");
            s.push('\n');
            for t in 0..n {
                let row: Vec<String> = ys.iter().map(|y| fmt_float(y[t])).collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            write_output(&ctx.out(&a.common), &s)
        }
        Command::Fit(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta0 = ctx.theta(&a.theta0, &ctx.cfg.theta0.clone().or(ctx.cfg.theta.clone()), "theta0")?;
            let y = ctx.series(&a.y_file, a.column, None)?;
            let method = ctx.method(&a.method)?;
            let fc = FitConfig {
                assembly: ctx.assembly(&a.assembly, y.len()),
                standard_errors: a.se || ctx.cfg.standard_errors == Some(true),
                ..Default::default()
            };
            let t = Instant::now();
            let r = fit(method, model.as_ref(), &y, &theta0, &fc)?;
            let out = json!({
                "method": method.name(),
                "model": model.name(),
                "n": y.len(),
                "theta": r.theta.iter().map(|v| json_float(*v)).collect::<Vec<Value>>(),
                "nll": json_float(r.nll),
                "iterations": r.iterations,
                "evaluations": r.evaluations,
                "converged": r.converged,
                "grad_norm": json_float(r.grad_norm),
                "standard_errors": r.standard_errors.map(|s| s.iter().map(|v| json_float(*v)).collect::<Vec<Value>>()),
                "seconds": json_float(t.elapsed().as_secs_f64()),
            });
            write_output(&ctx.out(&a.common), &format!("{}\n", serde_json::to_string_pretty(&out).unwrap()))
        }
        Command::Study(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let truth = ctx.theta(&a.theta_true, &ctx.cfg.theta_true.clone().or(ctx.cfg.theta.clone()), "theta-true")?;
            let theta0 = match &a.theta0 {
                Some(s) => Some(parse_list(s, "theta0")?),
                None => ctx.cfg.theta0.clone(),
            };
            let n = ctx.n(a.n)?;
            let trials = a.trials.or(ctx.cfg.trials).unwrap_or(1);
            let methods: Vec<Method> = match a.methods.clone().or_else(|| ctx.cfg.methods.clone().map(|m| m.join(","))) {
                Some(s) => parse_list(&s, "method")?,
                None => Method::ALL.to_vec(),
            };
            let cfg = StudyConfig {
                fit: FitConfig { assembly: ctx.assembly(&a.assembly, n), ..Default::default() },
                theta0,
            };
            let table = estimator_study(model.as_ref(), &truth, n, trials, &methods, ctx.seed(a.assembly.seed), &cfg)?;
            match ctx.out(&a.common) {
                Some(prefix) => {
                    io::write_file(&format!("{prefix}_trials.csv"), &table.trials_csv())?;
                    io::write_file(&format!("{prefix}_summary.csv"), &table.summary_csv())?;
                    io::write_output(&None, &table.summary_csv())
                }
                None => io::write_output(&None, &format!("{}\n{}", table.trials_csv(), table.summary_csv())),
            }
        }
        Command::Bench(a) => {
            let ctx = Ctx::new(&a.common)?;
            let model = ctx.model(&a.common)?;
            let theta = ctx.theta(&a.theta, &ctx.cfg.theta, "theta")?;
            if a.min_exp > a.max_exp || a.max_exp > 24 || a.reps == 0 {
                return Err(CliError::Usage("need min-exp <= max-exp <= 24 and reps >= 1".into()));
            }
            let rank = ctx.assembly(&a.assembly, 1 << a.max_exp).rank;
            let mut s = String::from("n,r,assemble_ms,nll_ms,grad_ms,fisher_ms\n");
            for e in a.min_exp..=a.max_exp {
                let n = 1usize << e;
                let cfg = AssemblyConfig { rank, ..ctx.assembly(&a.assembly, n) };
                let h = acov_hybrid(model.as_ref(), &theta, n, &cfg.quadrature)?;
                let y = circulant_embedding_sample(&h.values, n, 1, cfg.seed)?.remove(0);
                let mut cols = vec![Vec::new(); 4];
                for _ in 0..a.reps {
                    let t = Instant::now();
                    let op = assemble_correction(model.as_ref(), &theta, n, &cfg)?;
                    cols[0].push(t.elapsed().as_secs_f64() * 1e3);
                    let t = Instant::now();
                    std::hint::black_box(nll(&op, &y)?);
                    cols[1].push(t.elapsed().as_secs_f64() * 1e3);
                    if !a.nll_only {
                        let t = Instant::now();
                        let ld = assemble_with_derivatives(model.as_ref(), &theta, n, &cfg)?;
                        std::hint::black_box(gradient_factored(&ld, &y)?);
                        cols[2].push(t.elapsed().as_secs_f64() * 1e3);
                        let t = Instant::now();
                        std::hint::black_box(fisher_exact_from(&ld, &cfg)?);
                        cols[3].push(t.elapsed().as_secs_f64() * 1e3);
                    }
                }
                let med = |v: &mut Vec<f64>| -> String {
                    if v.is_empty() {
                        return "NaN".into();
                    }
                    v.sort_by(f64::total_cmp);
                    fmt_float(v[v.len() / 2])
                };
                let row: Vec<String> = cols.iter_mut().map(med).collect();
                s.push_str(&format!("{n},{},{}\n", cfg.rank, row.join(",")));
            }
            write_output(&ctx.out(&a.common), &s)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::from(if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", json!({"error": err.kind(), "message": err.message()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.message()}));
            ExitCode::from(e.exit_code())
        }
    }
}
