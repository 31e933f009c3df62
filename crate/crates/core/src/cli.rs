//! Command-line interface. Every subcommand reads and writes plain text:
//! CSV for data and tables, JSON for models.

use crate::ecm::{multi_start_fit, FitConfig};
use crate::error::{Error, Result};
use crate::io::{num, read_dataset, read_designs, write_csv, ModelFile, Schema};
use crate::model::{Constraints, Family};
use crate::predict::{map_partition, predict_band};
use crate::select::select_k;
use crate::sim::{consistency_experiment, reference_truth, robustness_experiment, simulate, SimConfig};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "STMOE_SEED";

#[derive(Debug, Parser)]
#[command(name = "stmoe", version, about = "Skew-t and normal mixtures of experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a mixture of experts to a CSV file.
    Fit(FitArgs),
    /// Predictive mean and band on a grid of covariates.
    Predict(PredictArgs),
    /// MAP cluster labels and responsibilities.
    Cluster(ClusterArgs),
    /// Information criteria over a range of K.
    Select(SelectArgs),
    /// Draw a synthetic data set.
    Simulate(SimulateArgs),
    /// Simulation studies of estimation error.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct SchemaArgs {
    /// Response column.
    #[arg(long, default_value = "y")]
    response: String,
    /// Comma-separated expert covariate columns.
    #[arg(long, value_delimiter = ',', default_value = "x")]
    covariates: Vec<String>,
    /// Comma-separated gating covariate columns (default: the expert covariates).
    #[arg(long, value_delimiter = ',')]
    gating: Option<Vec<String>>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    no_intercept: bool,
}

impl SchemaArgs {
    fn schema(&self) -> Schema {
        Schema {
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            gating: self.gating.clone(),
            intercept: !self.no_intercept,
        }
    }
}

#[derive(Debug, Args)]
struct FitOptions {
    /// Model family: nmoe or stmoe.
    #[arg(long, default_value = "stmoe")]
    family: String,
    /// Independent starts; the highest log-likelihood wins.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// Relative log-likelihood tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// ECM iteration cap per start.
    #[arg(long, default_value_t = 1500)]
    max_iter: usize,
    /// Random seed (falls back to the STMOE_SEED environment variable, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Hold every skewness at zero.
    #[arg(long)]
    fix_lambda_zero: bool,
    /// Hold every degrees of freedom at this value.
    #[arg(long)]
    fix_nu: Option<f64>,
}

impl FitOptions {
    fn family(&self) -> Result<Family> {
        parse_family(&self.family)
    }

    fn config(&self) -> Result<FitConfig> {
        let cfg = FitConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            n_starts: self.starts,
            seed: resolve_seed(self.seed)?,
            constraints: Constraints {
                fix_lambda_zero: self.fix_lambda_zero,
                fix_nu: self.fix_nu,
            },
            ..FitConfig::default()
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Number of experts.
    #[arg(long, short = 'k', default_value_t = 2)]
    k: usize,
    #[command(flatten)]
    fit: FitOptions,
    /// Directory receiving model.json, tau.csv and loglik_trace.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Fitted model written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// CSV of covariates; columns follow the schema stored in the model.
    #[arg(long)]
    grid: PathBuf,
    /// Output CSV: row, mean, lower, upper.
    #[arg(long)]
    out: PathBuf,
    /// Band half-width in predictive standard deviations.
    #[arg(long, default_value_t = 2.0)]
    band_width: f64,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV: row, label (1-based).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value_t = 1)]
    kmin: usize,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[command(flatten)]
    fit: FitOptions,
    /// Output CSV with one row of criteria per K.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Family of the built-in two-expert truth (ignored with --truth).
    #[arg(long, default_value = "stmoe")]
    family: String,
    /// Model file to simulate from instead of the built-in truth.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Outlier probability in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    /// Random seed (falls back to STMOE_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Experiment {
    Consistency,
    Robustness,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    /// Family of the built-in truth (default: stmoe for consistency, nmoe for robustness).
    #[arg(long)]
    family: Option<String>,
    /// Replications per sample size or outlier rate.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_family(name: &str) -> Result<Family> {
    Family::parse(name).map_err(|e| Error::Usage(e.to_string()))
}

/// `--seed` if given, else `STMOE_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn cmd_fit(a: &FitArgs) -> Result<String> {
    let (family, cfg) = (a.fit.family()?, a.fit.config()?);
    let schema = a.schema.schema();
    let data = read_dataset(&a.data, &schema)?;
    let fit = multi_start_fit(&data, a.k, family, &cfg)?;
    ensure_dir(&a.out_dir)?;
    ModelFile::from_fit(&fit, Some(schema)).save(a.out_dir.join("model.json"))?;
    let k = fit.params.k();
    let header: Vec<String> = std::iter::once("row".to_string()).chain((1..=k).map(|c| format!("tau{c}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| std::iter::once((i + 1).to_string()).chain((0..k).map(|c| num(fit.tau[(i, c)]))).collect())
        .collect();
    write_csv(a.out_dir.join("tau.csv"), &header, &rows)?;
    let trace: Vec<Vec<String>> = fit.loglik_trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect();
    write_csv(a.out_dir.join("loglik_trace.csv"), &["iteration", "loglik"], &trace)?;
    Ok(format!(
        "fitted {} with K={k}: loglik {} after {} iterations (converged: {}, start {})",
        fit.params.family.name(),
        fit.loglik,
        fit.n_iter,
        fit.converged,
        fit.start_index
    ))
}

fn stored_schema(mf: &ModelFile) -> Result<Schema> {
    mf.schema
        .clone()
        .ok_or_else(|| Error::ModelFile("the model file does not record a data schema".into()))
}

fn cmd_predict(a: &PredictArgs) -> Result<String> {
    let mf = ModelFile::load(&a.model)?;
    let psi = mf.to_params()?;
    let (x, r) = read_designs(&a.grid, &stored_schema(&mf)?)?;
    let bands = predict_band(&x, &r, &psi, a.band_width)?;
    let rows: Vec<Vec<String>> = bands
        .iter()
        .enumerate()
        .map(|(i, b)| vec![(i + 1).to_string(), num(b.mean), num(b.lower), num(b.upper)])
        .collect();
    write_csv(&a.out, &["row", "mean", "lower", "upper"], &rows)?;
    Ok(format!("wrote {} predictions to {}", rows.len(), a.out.display()))
}

fn cmd_cluster(a: &ClusterArgs) -> Result<String> {
    let mf = ModelFile::load(&a.model)?;
    let psi = mf.to_params()?;
    let data = read_dataset(&a.data, &stored_schema(&mf)?)?;
    let tau = crate::estep::posterior_tau(&data, &psi)?;
    let labels = map_partition(&tau);
    let rows: Vec<Vec<String>> = labels.iter().enumerate().map(|(i, z)| vec![(i + 1).to_string(), (z + 1).to_string()]).collect();
    write_csv(&a.out, &["row", "label"], &rows)?;
    Ok(format!("wrote {} labels to {}", rows.len(), a.out.display()))
}

fn cmd_select(a: &SelectArgs) -> Result<String> {
    if a.kmin == 0 || a.kmin > a.kmax {
        return Err(Error::Usage(format!("invalid K range {}..={}", a.kmin, a.kmax)));
    }
    let (family, cfg) = (a.fit.family()?, a.fit.config()?);
    let data = read_dataset(&a.data, &a.schema.schema())?;
    let sel = select_k(&data, family, a.kmin..=a.kmax, &cfg)?;
    let rows: Vec<Vec<String>> = sel
        .rows
        .iter()
        .map(|r| {
            let chosen: Vec<&str> = [("aic", sel.best_aic), ("bic", sel.best_bic), ("icl", sel.best_icl)]
                .iter()
                .filter(|(_, k)| *k == r.k)
                .map(|(c, _)| *c)
                .collect();
            vec![
                r.k.to_string(),
                num(r.loglik),
                num(r.complete_loglik),
                r.eta.to_string(),
                num(r.aic),
                num(r.bic),
                num(r.icl),
                chosen.join(";"),
            ]
        })
        .collect();
    write_csv(&a.out, &["k", "loglik", "complete_loglik", "eta", "aic", "bic", "icl", "chosen_by"], &rows)?;
    let mut msg = format!("chosen K: aic {}, bic {}, icl {}", sel.best_aic, sel.best_bic, sel.best_icl);
    for (k, e) in &sel.failures {
        msg.push_str(&format!("\nK={k} failed: {e}"));
    }
    Ok(msg)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let truth = match &a.truth {
        Some(p) => ModelFile::load(p)?.to_params()?,
        None => reference_truth(parse_family(&a.family)?),
    };
    let cfg = SimConfig {
        truth,
        n: a.n,
        outlier_rate: a.outliers,
        seed: resolve_seed(a.seed)?,
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let sim = simulate(&cfg)?;
    let rows: Vec<Vec<String>> = (0..sim.data.n())
        .map(|i| {
            vec![
                num(sim.data.x()[(i, 1)]),
                num(sim.data.y()[i]),
                (sim.labels[i] + 1).to_string(),
                u8::from(sim.outliers[i]).to_string(),
            ]
        })
        .collect();
    write_csv(&a.out, &["x", "y", "label", "outlier"], &rows)?;
    Ok(format!("wrote {} rows to {}", rows.len(), a.out.display()))
}

/// Sample sizes of the consistency study.
pub const CONSISTENCY_SIZES: [usize; 5] = [50, 100, 200, 500, 1000];
/// Outlier rates of the robustness study.
pub const ROBUSTNESS_RATES: [f64; 6] = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<String> {
    let seed = resolve_seed(a.seed)?;
    let cfg = FitConfig {
        n_starts: a.starts,
        ..FitConfig::default()
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }
    match a.experiment {
        Experiment::Consistency => {
            let family = parse_family(a.family.as_deref().unwrap_or("stmoe"))?;
            let truth = reference_truth(family);
            let table = consistency_experiment(&truth, family, &CONSISTENCY_SIZES, a.trials, seed, &cfg)?;
            let names: Vec<String> = table[0].mean_sq_err.iter().map(|(n, _)| n.clone()).collect();
            let mut header = vec!["n"];
            header.extend(names.iter().map(String::as_str));
            header.extend(["trials", "failures"]);
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|r| {
                    std::iter::once(r.n.to_string())
                        .chain(r.mean_sq_err.iter().map(|(_, v)| num(*v)))
                        .chain([r.trials.to_string(), r.failures.to_string()])
                        .collect()
                })
                .collect();
            write_csv(&a.out, &header, &rows)?;
        }
        Experiment::Robustness => {
            let family = parse_family(a.family.as_deref().unwrap_or("nmoe"))?;
            let truth = reference_truth(family);
            let table = robustness_experiment(&truth, &ROBUSTNESS_RATES, 500, a.trials, seed, &cfg)?;
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|r| {
                    vec![
                        num(r.outlier_rate),
                        r.fit_family.name().to_string(),
                        num(r.mean()),
                        num(r.median()),
                        r.mse.len().to_string(),
                        r.failures().to_string(),
                    ]
                })
                .collect();
            write_csv(&a.out, &["outlier_rate", "fitted", "mean_mse", "median_mse", "trials", "failures"], &rows)?;
        }
    }
    Ok(format!("wrote {}", a.out.display()))
}

fn dispatch(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

/// Exit code of a failed command: 2 for usage errors, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

/// Runs the CLI on `argv` (program name first), printing results to stdout
/// and diagnostics to stderr. Returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
