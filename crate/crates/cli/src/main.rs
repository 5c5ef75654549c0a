//! `stsmooth`: fit, predict, simulate and benchmark spatiotemporal p-spline
//! models from the command line.
//!
//! Exit status: 0 success, 2 data error, 3 configuration error (including
//! invalid flags), 4 numerical failure.

mod artifact;
mod error;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stsmooth::bench::{run_benchmark, BenchConfig};
use stsmooth::data_model::{convex_hull_region, load_csv, write_csv, ColumnSpec, Range, Transform};
use stsmooth::predict::{linspace, predict_grid, predict_grid_with_sd};
use stsmooth::selection::{CvConfig, FitContext, LambdaGrid, LambdaPrior, Method, PriorConfig};
use stsmooth::simulate::{build_scenario, default_truth, GroundTruth, ScenarioSpec, DEFAULT_FLOW_SEED};
use stsmooth::splines::TensorBasisSpec;

use artifact::FitArtifact;
use error::CliError;
use output::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "stsmooth", version, about = "Tensor-product p-spline smoothing of spatiotemporal well data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a CSV of well samples and write a fit artifact.
    Fit(FitArgs),
    /// Evaluate a fit artifact on a regular grid.
    Predict(PredictArgs),
    /// Generate a synthetic scenario dataset from the reference plume.
    Simulate(SimulateArgs),
    /// Compare smoothing-parameter selection methods on simulated data.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Input CSV with well id, easting, northing, time and value columns.
    #[arg(long)]
    input: PathBuf,
    /// Basis functions per dimension as `s1,s2,t`, e.g. `14,8,5`.
    #[arg(long)]
    basis: String,
    /// B-spline degree.
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// Order of the difference penalty (1 or 2).
    #[arg(long, default_value_t = 1)]
    penalty_order: usize,
    /// aicc, gcv, bic, cv-obs, cv-well, map or bayes-avg.
    #[arg(long, default_value = "map")]
    method: String,
    /// Response transform: log1p or identity.
    #[arg(long, default_value = "log1p")]
    transform: String,
    /// Column names for well id, s1, s2, t and value.
    #[arg(long, default_value = "well_id,s1,s2,t,value")]
    columns: String,
    /// log10 λ grid as `lo,hi,n`.
    #[arg(long, default_value = "-8,8,101", allow_hyphen_values = true)]
    grid: String,
    /// Inverse-gamma shape of the error-variance prior.
    #[arg(long, default_value_t = 1e-4)]
    prior_a: f64,
    /// Inverse-gamma rate of the error-variance prior.
    #[arg(long, default_value_t = 1e-4)]
    prior_b: f64,
    /// Prior on λ: uniform-on-lambda or uniform-on-log-lambda.
    #[arg(long, default_value = "uniform-on-lambda")]
    lambda_prior: String,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Seed for cross-validation fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit artifact (JSON) to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-λ score trace CSV; defaults to the artifact path with extension
    /// `trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Fit artifact written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Grid nodes per axis as `n1,n2,nt`.
    #[arg(long, default_value = "50,50,10")]
    size: String,
    /// Easting range `lo,hi` (default: the basis range).
    #[arg(long, allow_hyphen_values = true)]
    s1: Option<String>,
    /// Northing range `lo,hi` (default: the basis range).
    #[arg(long, allow_hyphen_values = true)]
    s2: Option<String>,
    /// Time range `lo,hi` (default: the basis range).
    #[arg(long, allow_hyphen_values = true)]
    t: Option<String>,
    /// Snapshot times `t1,t2,...`, replacing the regular time axis.
    #[arg(long, allow_hyphen_values = true)]
    at_times: Option<String>,
    /// Add the posterior predictive standard deviation (single-λ fits only).
    #[arg(long)]
    sd: bool,
    /// Report predictions on the measurement scale instead of the working scale.
    #[arg(long)]
    back_transform: bool,
    /// Flag nodes inside the convex hull of the training wells and times.
    #[arg(long)]
    hull: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Design: 1 (29 wells, 1402 samples), 2 (280 wells), 3 (29 wells, 100 samples).
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth in the binary truth format.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Seed of the reference flow field.
    #[arg(long, default_value_t = DEFAULT_FLOW_SEED)]
    flow_seed: u64,
    /// Signal-to-noise ratio on the log scale.
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "1,2,3")]
    scenarios: String,
    #[arg(long, default_value = "aicc,gcv,cv-obs,cv-well,bic,map,bayes-avg")]
    methods: String,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for bench_results.csv and lambda_samples.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "14,8,5")]
    basis: String,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    penalty_order: usize,
    #[arg(long, default_value = "-8,8,101", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_FLOW_SEED)]
    flow_seed: u64,
    /// Read the ground truth from a binary truth file instead of solving.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| CliError::config(format!("cannot parse {what} from `{text}`")))
}

fn parse_triple(text: &str, what: &str) -> Result<[usize; 3], CliError> {
    let v: Vec<usize> = parse_list(text, what)?;
    v.try_into()
        .map_err(|_| CliError::config(format!("{what} needs exactly three values, got `{text}`")))
}

fn parse_range(text: &str, what: &str) -> Result<Range, CliError> {
    match parse_list::<f64>(text, what)?.as_slice() {
        &[lo, hi] if lo <= hi => Ok(Range { lo, hi }),
        _ => Err(CliError::config(format!("{what} must be `lo,hi` with lo <= hi, got `{text}`"))),
    }
}

fn parse_grid(text: &str) -> Result<LambdaGrid, CliError> {
    match parse_list::<f64>(text, "lambda grid")?.as_slice() {
        &[lo, hi, n] if n >= 1.0 && n.fract() == 0.0 => Ok(LambdaGrid::uniform(lo, hi, n as usize)?),
        _ => Err(CliError::config(format!("lambda grid must be `lo,hi,n`, got `{text}`"))),
    }
}

fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    text.split(',').map(|m| Ok(m.trim().parse::<Method>()?)).collect()
}

fn column_spec(text: &str) -> Result<ColumnSpec, CliError> {
    let names: Vec<String> = text.split(',').map(|s| s.trim().to_string()).collect();
    match <[String; 5]>::try_from(names) {
        Ok([well_id, s1, s2, t, value]) => Ok(ColumnSpec {
            well_id,
            s1,
            s2,
            t,
            value,
        }),
        Err(_) => Err(CliError::config(format!("--columns needs five names, got `{text}`"))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let method: Method = a.method.parse()?;
    let transform: Transform = a.transform.parse()?;
    let counts = parse_triple(&a.basis, "--basis")?;
    let grid = parse_grid(&a.grid)?;
    let prior = PriorConfig {
        a: a.prior_a,
        b: a.prior_b,
        lambda_prior: a.lambda_prior.parse::<LambdaPrior>()?,
    };
    prior.validate()?;
    let cv = CvConfig {
        folds: a.folds,
        seed: a.seed,
    };
    let columns = column_spec(&a.columns)?;

    let ds = load_csv(&a.input, &columns, transform)?;
    let spec = TensorBasisSpec::for_dataset(&ds, counts, a.degree, a.penalty_order)?;
    let ctx = FitContext::new(&ds, &spec)?;
    let mut fit = ctx.fit(method, &prior, &grid, &cv)?;
    if !method.is_cross_validation() {
        fit.trace = ctx.score_trace(&prior, &grid, None)?;
    }
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }

    let art = FitArtifact::new(&fit, &prior, &ds);
    write_text(&a.out, &art.to_json()?)?;
    let trace_path = a.trace.unwrap_or_else(|| a.out.with_extension("trace.csv"));
    write_atomic(&trace_path, |w| Ok(fit.trace.write_csv(w)?))?;
    match fit.lambda {
        Some(l) => println!("{method}: lambda = {l:e}, edf = {:.3}", fit.edf),
        None => println!(
            "{method}: averaged over {} lambda values, edf = {:.3}",
            fit.averaging.as_ref().map_or(0, |v| v.len()),
            fit.edf
        ),
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let art = FitArtifact::from_json(&fs::read_to_string(&a.fit)?)?;
    let fit = art.fit_result()?;
    if a.sd && fit.is_model_averaged() {
        return Err(CliError::config(
            "--sd is defined for a single lambda, not for a model-averaged fit",
        ));
    }
    let sizes = parse_triple(&a.size, "--size")?;
    let mut ranges = [fit.spec.dims[0].range, fit.spec.dims[1].range, fit.spec.dims[2].range];
    for (d, flag) in [&a.s1, &a.s2, &a.t].into_iter().enumerate() {
        if let Some(text) = flag {
            ranges[d] = parse_range(text, ["--s1", "--s2", "--t"][d])?;
        }
    }
    let axis_t = match &a.at_times {
        Some(text) => parse_list::<f64>(text, "--at-times")?,
        None => linspace(ranges[2], sizes[2]),
    };
    let axes = [linspace(ranges[0], sizes[0]), linspace(ranges[1], sizes[1]), axis_t];
    let axes_ref = [axes[0].as_slice(), axes[1].as_slice(), axes[2].as_slice()];

    let needs_data = a.sd || a.hull;
    let ds = if needs_data { Some(art.training_dataset()?) } else { None };
    let hull = match (&ds, a.hull) {
        (Some(ds), true) => Some(convex_hull_region(ds)?),
        _ => None,
    };
    let grid = if a.sd {
        let ds = ds.as_ref().expect("loaded for --sd");
        let ctx = FitContext::new(ds, &fit.spec)?;
        predict_grid_with_sd(&fit, ctx.model(), axes_ref, hull.as_ref(), &art.prior()?)?
    } else {
        predict_grid(&fit, axes_ref, hull.as_ref())?
    };
    let transform = a.back_transform.then_some(fit.transform);
    write_atomic(&a.out, |w| Ok(grid.write_csv(w, transform)?))?;
    println!("wrote {} grid nodes", grid.len());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let spec = ScenarioSpec {
        snr: a.snr,
        ..ScenarioSpec::new(a.scenario, a.seed)?
    };
    spec.validate()?;
    let truth = default_truth(a.flow_seed)?;
    let ds = build_scenario(&truth, &spec)?;
    write_atomic(&a.out, |w| Ok(write_csv(&ds, w)?))?;
    if let Some(path) = &a.truth {
        write_atomic(path, |w| Ok(truth.write_binary(w)?))?;
    }
    println!("scenario {}: {} observations at {} wells", spec.id, ds.len(), ds.wells().len());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        scenarios: parse_list(&a.scenarios, "--scenarios")?,
        methods: parse_methods(&a.methods)?,
        replicates: a.replicates,
        base_seed: a.seed,
        counts: parse_triple(&a.basis, "--basis")?,
        degree: a.degree,
        penalty_order: a.penalty_order,
        grid: parse_grid(&a.grid)?,
        cv_folds: a.folds,
        ..BenchConfig::default()
    };
    cfg.validate()?;
    let truth = match &a.truth {
        Some(path) => GroundTruth::read_binary(std::io::BufReader::new(fs::File::open(path)?))?,
        None => default_truth(a.flow_seed)?,
    };
    let res = run_benchmark(&cfg, &truth)?;
    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("bench_results.csv"), |w| Ok(res.write_results_csv(w)?))?;
    write_atomic(&a.out.join("lambda_samples.csv"), |w| Ok(res.write_lambda_samples_csv(w)?))?;
    for f in &res.failures {
        eprintln!(
            "warning: scenario {} replicate {} {} failed: {}",
            f.scenario, f.replicate, f.method, f.reason
        );
    }
    println!("{:>8} {:>10} {:>14} {:>12} {:>7}", "scenario", "method", "mean_ise", "stderr", "n");
    for row in res.summary() {
        println!(
            "{:>8} {:>10} {:>14.6} {:>12.6} {:>7}",
            row.scenario, row.method, row.mean_ise, row.stderr, row.n_valid
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::exit_code(stsmooth::ErrorKind::Config) } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
