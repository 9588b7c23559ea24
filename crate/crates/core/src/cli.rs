//! Command-line front end: `fit`, `gof`, `rank` and `simulate`.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when a fit stopped at the
//! iteration limit without converging (its results are still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::canonical::{center, CanonicalFit};
use crate::engine::{dmf_fit, ModelSpec, DEFAULT_JITTER, DEFAULT_MAX_ITER, DEFAULT_REL_TOL};
use crate::error::{DmfError, Result};
use crate::family::{
    estimate_dispersion_mom, estimate_gamma_dispersion_mom, Family, FamilyKind, Link, MomNumerator,
};
use crate::gof::{ghl_test, GhlOptions};
use crate::io::{read_data, read_fit, write_fit, FitMeta, MatrixFormat, StoredFit};
use crate::rank::{default_q_max, eigen_profile, estimate_rank, ProfileMode, WINDOW};
use crate::simlab::{
    dispersion_sensitivity_case, rank_cases, run_power_grid, run_rank_cases, run_significance, significance_cases,
    PowerGrid, ResultTable,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dmf", version, about = "Deviance matrix factorization")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DMF_THREADS")]
    pub threads: Option<usize>,

    /// Print progress and warnings from the library.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a factorization and write it to a directory.
    Fit(FitArgs),
    /// Family and link test for a fitted directory.
    Gof(GofArgs),
    /// Rank selection from a high-rank fitted directory.
    Rank(RankArgs),
    /// Run a simulation experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispersionArg {
    Value(f64),
    Mom,
}

impl FromStr for DispersionArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("mom") {
            return Ok(Self::Mom);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Self::Value(v)),
            _ => Err(format!("expected a positive number or `mom`, got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Data matrix (CSV, or MatrixMarket with a .mtx extension).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Entry weights, same shape as the data.
    #[arg(short, long)]
    pub weights: Option<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Give MatrixMarket entries absent from the file weight zero.
    #[arg(long)]
    pub missing_as_holdout: bool,
    /// gaussian, poisson, gamma, binomial (bernoulli) or negbin.
    #[arg(long)]
    pub family: String,
    /// Link name; the family default when omitted.
    #[arg(long)]
    pub link: Option<String>,
    /// Factorization rank.
    #[arg(short, long)]
    pub q: usize,
    /// Dispersion: a positive number, or `mom` for a moment estimate
    /// (negbin size, gamma dispersion, gaussian variance).
    #[arg(long)]
    pub dispersion: Option<DispersionArg>,
    /// Use the mean of X^2 instead of the squared mean in the negbin moment estimate.
    #[arg(long)]
    pub mom_mean_of_squares: bool,
    /// Binomial trials per entry.
    #[arg(long, default_value_t = 1.0)]
    pub trials: f64,
    /// Split off a column-mean structure (prior row factor of ones).
    #[arg(long)]
    pub center: bool,
    /// Rank of the fit before centering (default q); the centered residual keeps rank q.
    #[arg(long, requires = "center")]
    pub fit_rank: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    /// Directory written by `dmf fit`.
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Number of quantile groups (default max(15, N/50), at most 200).
    #[arg(short = 'G', long = "groups")]
    pub groups: Option<usize>,
    /// Also test the lowest group.
    #[arg(long)]
    pub include_first_group: bool,
    /// Data to test against instead of the input recorded with the fit.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Report path (default: gof.json in the fit directory).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Covariance,
    Gram,
}

impl From<ModeArg> for ProfileMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Covariance => ProfileMode::Covariance,
            ModeArg::Gram => ProfileMode::Gram,
        }
    }
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Directory written by `dmf fit` at high rank.
    #[arg(long)]
    pub fit_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Covariance)]
    pub mode: ModeArg,
    /// Largest rank considered (default p - 5).
    #[arg(long)]
    pub q_max: Option<usize>,
    /// Output directory for rank.json and profile.tsv (default: the fit directory).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Family significance cases.
    Significance,
    /// Negative binomial fits with true and estimated dispersion against Poisson.
    Sensitivity,
    /// Rejection rates over sizes and effect scales.
    Power,
    /// Rank recovery cases.
    #[value(name = "rank-table3")]
    RankTable3,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Case numbers to run, e.g. 1,3 (default: all).
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator family for rank cases.
    #[arg(long, default_value = "poisson")]
    pub family: String,
    /// Generator link for rank cases.
    #[arg(long)]
    pub link: Option<String>,
    /// Binomial trials for the binomial significance case.
    #[arg(long, default_value_t = 90.0)]
    pub trials: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Covariance)]
    pub mode: ModeArg,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.verbose {
        init_logger();
    }
    if let Some(threads) = cli.threads {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Gof(a) => cmd_gof(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn parse_family(name: &str, dispersion: f64, trials: f64) -> Result<Family> {
    let kind = FamilyKind::from_str(name)?;
    Family::try_new(kind, dispersion, trials)
}

fn parse_link(name: Option<&str>, family: &Family) -> Result<Link> {
    let link = match name {
        Some(name) => Link::from_name(name, family)?,
        None => family.default_link(),
    };
    if !link.compatible_with(family) {
        return Err(DmfError::InvalidArgument(format!(
            "the {link} link cannot be used with the {} family",
            family.kind().name()
        )));
    }
    Ok(link)
}

fn sample_variance(data: &crate::engine::DataMatrix) -> Result<f64> {
    let vals: Vec<f64> = data.entries().filter(|&(_, w)| w > 0.0).map(|(x, _)| x).collect();
    if vals.len() < 2 {
        return Err(DmfError::InvalidArgument("need at least two observed entries".into()));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    if !(var > 0.0) {
        return Err(DmfError::InvalidArgument("data are constant".into()));
    }
    Ok(var)
}

pub fn cmd_fit(a: &FitArgs) -> Result<i32> {
    // validate family and link before touching the data
    let family = parse_family(&a.family, 1.0, a.trials)?;
    let link = parse_link(a.link.as_deref(), &family)?;
    if family.kind() == FamilyKind::NegativeBinomial && a.dispersion.is_none() {
        return Err(DmfError::InvalidArgument(
            "the negbin family needs --dispersion VALUE or --dispersion mom".into(),
        ));
    }
    if a.dispersion.is_some() && !family.is_dispersed() {
        return Err(DmfError::InvalidArgument(format!(
            "the {} family has no dispersion parameter",
            family.kind().name()
        )));
    }
    let fit_rank = a.fit_rank.unwrap_or(a.q);
    if fit_rank < a.q {
        return Err(DmfError::InvalidArgument("--fit-rank must be at least q".into()));
    }
    let format = a.format.as_deref().map(MatrixFormat::from_str).transpose()?;

    let data = read_data(&a.input, a.weights.as_deref(), format, a.missing_as_holdout)?;
    let (family, source) = match &a.dispersion {
        None => (family, "fixed"),
        Some(DispersionArg::Value(v)) => (family.with_dispersion(*v)?, "fixed"),
        Some(DispersionArg::Mom) => {
            let phi = match family.kind() {
                FamilyKind::NegativeBinomial => {
                    let numerator = if a.mom_mean_of_squares {
                        MomNumerator::MeanOfSquares
                    } else {
                        MomNumerator::SquaredMean
                    };
                    let est = estimate_dispersion_mom(data.entries(), numerator)?;
                    if est.underdispersed {
                        eprintln!("warning: data are not overdispersed; using the floor {}", est.value);
                    }
                    est.value
                }
                FamilyKind::Gamma => estimate_gamma_dispersion_mom(data.entries())?,
                FamilyKind::Gaussian => sample_variance(&data)?,
                _ => unreachable!("checked above"),
            };
            (family.with_dispersion(phi)?, "mom")
        }
    };

    let spec = ModelSpec::new(family, link, fit_rank)
        .max_iter(a.max_iter)
        .rel_tol(a.rel_tol)
        .jitter(a.jitter)
        .seed(a.seed);
    let raw = dmf_fit(&data, &spec)?;
    let canonical = CanonicalFit::from_raw(&raw);
    if let Some(w) = canonical.rank_warning() {
        eprintln!("warning: {w}");
    }
    let mut meta = FitMeta::new(&spec, &canonical, data.nrows(), data.ncols());
    meta.dispersion_source = source.into();
    meta.input = Some(absolute(&a.input));
    meta.weights = a.weights.as_deref().map(absolute);
    meta.missing_as_holdout = a.missing_as_holdout;
    let stored = if a.center {
        let ones = DMatrix::from_element(data.nrows(), 1, 1.0);
        let centered = center(&raw, &ones, Some(a.q))?;
        meta.rank = a.q;
        meta.effective_rank = centered.residual.effective_rank;
        StoredFit::from_centered(meta, &centered)
    } else {
        StoredFit::from_canonical(meta, &canonical)
    };
    write_fit(&stored, &a.output)?;
    println!(
        "deviance {:.6e} after {} iterations{}",
        raw.deviance(),
        raw.iterations,
        if raw.converged { "" } else { " (not converged)" }
    );
    Ok(if raw.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn cmd_gof(a: &GofArgs) -> Result<i32> {
    let stored = read_fit(&a.fit_dir)?;
    let meta = &stored.meta;
    let data = match &a.input {
        Some(input) => read_data(input, None, None, false)?,
        None => {
            let input = meta.input.as_deref().ok_or_else(|| {
                DmfError::InvalidArgument("the fit records no input; pass --input".into())
            })?;
            read_data(input, meta.weights.as_deref(), None, meta.missing_as_holdout)?
        }
    };
    let options = GhlOptions {
        groups: a.groups,
        include_first_group: a.include_first_group,
    };
    let report = ghl_test(&data, &stored.eta(), &meta.family, &meta.link, &options)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = a.output.clone().unwrap_or_else(|| a.fit_dir.join("gof.json"));
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&out, text)?;
    let mut resid = String::from("group,residual\n");
    for (k, r) in report.standardized.iter().enumerate() {
        resid.push_str(&format!("{},{}\n", k + 1, crate::io::format_f64(*r)));
    }
    fs::write(out.with_file_name("group_residuals.csv"), resid)?;
    println!("statistic {:.6e} on {} df, p-value {:.4e}", report.statistic, report.df, report.p_value);
    Ok(EXIT_OK)
}

pub fn cmd_rank(a: &RankArgs) -> Result<i32> {
    let stored = read_fit(&a.fit_dir)?;
    let p = stored.meta.p;
    let q_max = a.q_max.unwrap_or_else(|| default_q_max(p));
    let fit_rank = stored.d.len() + stored.lambda0.as_ref().map_or(0, |l| l.ncols());
    if fit_rank < q_max + WINDOW {
        return Err(DmfError::InvalidArgument(format!(
            "rank selection with q_max = {q_max} needs a fit of rank at least {}, but {} has rank {fit_rank}; refit with a higher -q",
            q_max + WINDOW,
            a.fit_dir.display()
        )));
    }
    let eig = eigen_profile(&stored.eta(), a.mode.into());
    let report = estimate_rank(&eig, q_max)?;
    let out = a.output.clone().unwrap_or_else(|| a.fit_dir.clone());
    fs::create_dir_all(&out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(out.join("rank.json"), text)?;
    fs::write(out.join("profile.tsv"), report.profile_text())?;
    if report.no_signal {
        println!("no eigengap clears delta = {:.6e}; estimated rank 0", report.delta);
    } else {
        println!("estimated rank {} (delta = {:.6e})", report.q_hat, report.delta);
    }
    Ok(EXIT_OK)
}

fn select<T: Clone>(all: Vec<T>, cases: &[usize]) -> Result<Vec<T>> {
    if cases.is_empty() {
        return Ok(all);
    }
    cases
        .iter()
        .map(|&c| {
            all.get(c.wrapping_sub(1))
                .cloned()
                .ok_or_else(|| DmfError::InvalidArgument(format!("no case {c}; cases run from 1 to {}", all.len())))
        })
        .collect()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    fs::create_dir_all(&a.output)?;
    let (name, table): (&str, ResultTable) = match a.experiment {
        Experiment::Significance => {
            let cases = select(significance_cases(a.replicates.unwrap_or(20), a.trials, a.seed), &a.cases)?;
            let table = run_significance(&cases)?;
            for case in &cases {
                for fit in &case.fits {
                    let metric = format!("{}.p_value", fit.label);
                    println!(
                        "{} {}: median p {:?}",
                        case.design.name,
                        fit.label,
                        table.median(&case.design.name, &metric)
                    );
                }
            }
            ("significance", table)
        }
        Experiment::Sensitivity => {
            let case = dispersion_sensitivity_case(a.replicates.unwrap_or(50), a.seed);
            let table = run_significance(std::slice::from_ref(&case))?;
            for fit in &case.fits {
                let metric = format!("{}.p_value", fit.label);
                println!("{}: median p {:?}", fit.label, table.median(&case.design.name, &metric));
            }
            ("sensitivity", table)
        }
        Experiment::Power => {
            let mut grid = PowerGrid::full();
            grid.seed = a.seed;
            if let Some(r) = a.replicates {
                grid.replicates = r;
            }
            let (table, entries) = run_power_grid(&grid)?;
            let mut power = String::from("generator,fit,n,p,sigma,power,completed\n");
            for e in &entries {
                let value = e.power.map_or_else(|| "NA".to_string(), crate::io::format_f64);
                power.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    e.generator, e.fit, e.n, e.p, e.sigma, value, e.completed
                ));
            }
            fs::write(a.output.join("power_summary.csv"), power)?;
            ("power", table)
        }
        Experiment::RankTable3 => {
            let family = parse_family(&a.family, 1.0, a.trials)?;
            let link = parse_link(a.link.as_deref(), &family)?;
            let designs = select(rank_cases(family, link, a.replicates.unwrap_or(100), a.seed), &a.cases)?;
            let table = run_rank_cases(&designs, a.mode.into())?;
            for d in &designs {
                println!(
                    "{} (true rank {}): recovered in {:?} of replicates",
                    d.name,
                    d.q,
                    table.rate(&d.name, "correct", |v| v == 1.0)
                );
            }
            ("rank-table3", table)
        }
    };
    let path = a.output.join(format!("{name}.csv"));
    table.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        eprintln!("[{}] {}", record.level(), record.args());
    }

    fn flush(&self) {}
}

fn init_logger() {
    static LOGGER: StderrLogger = StderrLogger;
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Debug);
    }
}
