//! Command-line interface: `simulate`, `aggregate`, `evaluate` and `report`.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::Value;

use crate::aggregation::{
    aggregate, estimate_vi_coefficients, AggMethod, EnsembleForecast, StoredCoefficients,
};
use crate::distributions::ForecastDist;
use crate::error::Error;
use crate::experiment::{self, stream_seed, RunConfig, RunMeta};
use crate::scoring::{evaluate_case, EvalReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "distagg", version, about = "Aggregate, evaluate and simulate deep-ensemble distribution forecasts")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug. `RUST_LOG` takes precedence.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulation study and write its result files.
    Simulate {
        /// JSON run configuration; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted `key=value` overrides applied after the file.
        #[arg(long, num_args = 1..)]
        overrides: Vec<String>,
        /// Sets both the scenario seed and the member seed base.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate one ensemble, or a list of ensembles, into single forecasts.
    Aggregate {
        /// Ensemble JSON: a list of members, `{"members": [...]}`, or a list of either.
        input: PathBuf,
        /// LP, V0eq, Vaeq, V0w or Vaw.
        #[arg(long)]
        method: AggMethod,
        /// Stored coefficients JSON for the estimated variants.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        /// Validation ensembles JSON used to estimate coefficients.
        #[arg(long, requires = "valid_obs")]
        valid_ensembles: Option<PathBuf>,
        /// Validation observations CSV with a `y` column.
        #[arg(long, requires = "valid_ensembles")]
        valid_obs: Option<PathBuf>,
        /// Where to store estimated coefficients.
        #[arg(long)]
        save_coeffs: Option<PathBuf>,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score forecasts against observations.
    Evaluate {
        /// Forecasts JSON: a list of distributions, one per observation.
        forecasts: PathBuf,
        /// Observations CSV with a `y` column.
        observations: PathBuf,
        /// Directory for `cases.csv` and `report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed of the sampling-based scores.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tidy table and chart of skill score against ensemble size.
    Report {
        /// Run directory containing `summary.json`, or the file itself.
        #[arg(long)]
        input: PathBuf,
        /// Output directory (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A fatal condition with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let outcome = match cli.threads {
        Some(0) => Err(Failure::usage("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::runtime(format!("cannot start worker pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate {
            config,
            overrides,
            seed,
            out,
        } => simulate(config.as_deref(), &overrides, seed, out),
        Command::Aggregate {
            input,
            method,
            coeffs,
            valid_ensembles,
            valid_obs,
            save_coeffs,
            out,
        } => run_aggregate(AggregateArgs {
            input,
            method,
            coeffs,
            validation: valid_ensembles.zip(valid_obs),
            save_coeffs,
            out,
        }),
        Command::Evaluate {
            forecasts,
            observations,
            out,
            seed,
        } => evaluate(&forecasts, &observations, out.as_deref(), seed),
        Command::Report { input, out } => report(&input, out.as_deref()),
    }
}

fn simulate(config: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let mut config = match config {
        Some(path) => RunConfig::load(path, overrides),
        None => RunConfig::from_json_str("{}", overrides),
    }
    .map_err(Failure::usage)?;
    if let Some(seed) = seed {
        config.scenario.seed = seed;
        config.net.seed = seed;
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    let start = Instant::now();
    let result = experiment::run(&config).map_err(Failure::runtime)?;
    for rep in &result.repetitions {
        for f in &rep.failures {
            warn!(
                "repetition {}: {} member {} (seed {}) failed: {}",
                rep.rep, f.variant, f.member, f.seed, f.message
            );
        }
    }
    let summary = experiment::summarize(&result).map_err(Failure::runtime)?;
    for cell in &summary.omitted {
        warn!("no successful repetition for {} {} n={}", cell.variant, cell.method, cell.n);
    }
    let meta = RunMeta::new(&result, start.elapsed().as_secs_f64());
    experiment::write_outputs(&result, &summary, &meta, &config.output_dir).map_err(Failure::runtime)?;
    info!("finished in {:.1} s", meta.elapsed_seconds);
    println!("{}", config.output_dir.display());
    Ok(())
}

fn read_json(path: &Path) -> CliResult<Value> {
    let file = File::open(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::usage(format!("{}: not valid JSON: {e}", path.display())))
}

fn parse_dist(value: Value, what: &str) -> CliResult<ForecastDist> {
    serde_json::from_value(value).map_err(|e| Failure::usage(format!("{what}: {e}")))
}

fn is_ensemble(value: &Value) -> bool {
    value.is_array() || value.get("members").is_some()
}

fn parse_ensemble(value: Value, what: &str) -> CliResult<EnsembleForecast> {
    let members = match value {
        Value::Object(mut o) if o.contains_key("members") => o.remove("members").unwrap_or(Value::Null),
        other => other,
    };
    let Value::Array(items) = members else {
        return Err(Failure::usage(format!("{what}: expected a list of members")));
    };
    let members = items
        .into_iter()
        .enumerate()
        .map(|(k, m)| parse_dist(m, &format!("{what}, member {k}")))
        .collect::<CliResult<Vec<_>>>()?;
    EnsembleForecast::new(members).map_err(|e| Failure::usage(format!("{what}: {e}")))
}

/// Reads one ensemble or a list of ensembles; the flag reports a list.
fn read_ensembles(path: &Path) -> CliResult<(Vec<EnsembleForecast>, bool)> {
    let value = read_json(path)?;
    let what = path.display().to_string();
    match value {
        Value::Array(items) if items.first().is_some_and(is_ensemble) => {
            let ensembles = items
                .into_iter()
                .enumerate()
                .map(|(i, e)| parse_ensemble(e, &format!("{what}, ensemble {i}")))
                .collect::<CliResult<Vec<_>>>()?;
            Ok((ensembles, true))
        }
        other => Ok((vec![parse_ensemble(other, &what)?], false)),
    }
}

/// Reads the `y` column of an observations CSV.
fn read_observations(path: &Path) -> CliResult<Vec<f64>> {
    let what = path.display();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::usage(format!("cannot read {what}: {e}")))?;
    let headers = reader.headers().map_err(|e| Failure::usage(format!("{what}: {e}")))?;
    let col = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Failure::usage(format!("{what}: no `y` column")))?;
    let mut ys = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::usage(format!("{what}: {e}")))?;
        let field = record.get(col).unwrap_or("").trim();
        let y: f64 = field
            .parse()
            .map_err(|_| Failure::usage(format!("{what}, row {}: `{field}` is not a number", row + 1)))?;
        if !y.is_finite() {
            return Err(Failure::usage(format!("{what}, row {}: observation is not finite", row + 1)));
        }
        ys.push(y);
    }
    Ok(ys)
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::runtime(format!("cannot write output: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::runtime(format!("cannot serialize: {e}")))
}

struct AggregateArgs {
    input: PathBuf,
    method: AggMethod,
    coeffs: Option<PathBuf>,
    validation: Option<(PathBuf, PathBuf)>,
    save_coeffs: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn run_aggregate(args: AggregateArgs) -> CliResult<()> {
    let (ensembles, many) = read_ensembles(&args.input)?;
    let n = ensembles[0].len();
    if let Some(e) = ensembles.iter().find(|e| e.len() != n || e.family() != ensembles[0].family()) {
        return Err(Failure::usage(format!(
            "ensembles differ in size or family ({} {:?} vs {} {:?} members)",
            n,
            ensembles[0].family(),
            e.len(),
            e.family()
        )));
    }
    let method = args.method;
    let coeffs = if !method.needs_estimation() {
        None
    } else if let Some(path) = &args.coeffs {
        let stored: StoredCoefficients = serde_json::from_value(read_json(path)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        if stored.variant != method || stored.n != n {
            return Err(Failure::usage(format!(
                "{}: coefficients are for {} with n = {}, not {method} with n = {n}",
                path.display(),
                stored.variant,
                stored.n
            )));
        }
        Some(stored.coefficients().map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?)
    } else if let Some((ens_path, obs_path)) = &args.validation {
        let (valid, _) = read_ensembles(ens_path)?;
        let obs = read_observations(obs_path)?;
        if valid.len() != obs.len() {
            return Err(Failure::usage(format!(
                "{} validation ensembles but {} observations",
                valid.len(),
                obs.len()
            )));
        }
        if let Some(e) = valid.iter().find(|e| e.len() != n || e.family() != ensembles[0].family()) {
            return Err(Failure::usage(format!(
                "validation ensembles must match the input ({n} {:?} members), found {} {:?}",
                ensembles[0].family(),
                e.len(),
                e.family()
            )));
        }
        let estimate = estimate_vi_coefficients(method, &valid, &obs).map_err(Failure::runtime)?;
        if !estimate.converged {
            warn!("coefficient search for {method} did not converge");
        }
        info!(
            "{method}: a = {}, w0 = {}, validation CRPS = {}",
            estimate.coeffs.a, estimate.coeffs.w0, estimate.validation_crps
        );
        if let Some(path) = &args.save_coeffs {
            let stored = StoredCoefficients::from_estimate(method, n, &estimate);
            let text = serde_json::to_string_pretty(&stored).map_err(|e| Failure::runtime(e.to_string()))? + "\n";
            write_text(Some(path), &text)?;
        }
        Some(estimate.coeffs)
    } else {
        return Err(Failure::usage(format!(
            "{method} needs --coeffs or --valid-ensembles with --valid-obs"
        )));
    };
    let dists = ensembles
        .iter()
        .map(|e| aggregate(e, method, coeffs))
        .collect::<Result<Vec<_>, Error>>()
        .map_err(Failure::runtime)?;
    let text = if many { to_json(&dists)? } else { to_json(&dists[0])? };
    write_text(args.out.as_deref(), &text)
}

#[derive(Serialize)]
struct CaseRow {
    case: usize,
    y: f64,
    crps: f64,
    pit: f64,
    lower: f64,
    upper: f64,
    median_error: f64,
    covered: bool,
}

#[derive(Serialize)]
struct SummaryLine {
    n_cases: usize,
    mean_crps: f64,
    coverage: f64,
    pi_length: f64,
    bias: f64,
}

fn csv_to_string<T: Serialize>(rows: &[T]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Failure::runtime(e.to_string()))
}

fn evaluate(forecasts: &Path, observations: &Path, out: Option<&Path>, seed: u64) -> CliResult<()> {
    let Value::Array(items) = read_json(forecasts)? else {
        return Err(Failure::usage(format!("{}: expected a list of distributions", forecasts.display())));
    };
    let dists = items
        .into_iter()
        .enumerate()
        .map(|(i, d)| parse_dist(d, &format!("{}, forecast {i}", forecasts.display())))
        .collect::<CliResult<Vec<_>>>()?;
    let ys = read_observations(observations)?;
    if dists.len() != ys.len() {
        return Err(Failure::usage(format!(
            "{} forecasts but {} observations",
            dists.len(),
            ys.len()
        )));
    }
    if ys.is_empty() {
        return Err(Failure::usage("no cases to evaluate"));
    }
    let cases = dists
        .iter()
        .zip(&ys)
        .enumerate()
        .map(|(i, (d, &y))| evaluate_case(d, y, stream_seed(&[seed, i as u64])))
        .collect::<Result<Vec<_>, Error>>()
        .map_err(Failure::runtime)?;
    let report = EvalReport::from_cases(&cases, None).map_err(Failure::runtime)?;
    let summary = csv_to_string(&[SummaryLine {
        n_cases: report.n_cases,
        mean_crps: report.mean_crps,
        coverage: report.pi_coverage,
        pi_length: report.pi_length,
        bias: report.bias,
    }])?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let rows: Vec<CaseRow> = cases
            .iter()
            .zip(&ys)
            .enumerate()
            .map(|(case, (c, &y))| CaseRow {
                case,
                y,
                crps: c.crps,
                pit: c.pit,
                lower: c.lower,
                upper: c.upper,
                median_error: c.median_error,
                covered: c.covered,
            })
            .collect();
        let mut w = BufWriter::new(
            File::create(dir.join("cases.csv")).map_err(|e| Failure::runtime(format!("cannot write cases.csv: {e}")))?,
        );
        w.write_all(csv_to_string(&rows)?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Failure::runtime(format!("cannot write cases.csv: {e}")))?;
        write_text(Some(&dir.join("report.csv")), &summary)?;
    }
    write_text(None, &summary)
}

fn report(input: &Path, out: Option<&Path>) -> CliResult<()> {
    let (file, dir) = if input.is_dir() {
        (input.join("summary.json"), input.to_path_buf())
    } else {
        (input.to_path_buf(), input.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    if !file.is_file() {
        return Err(Failure::usage(format!("{} not found", file.display())));
    }
    let summary = experiment::read_summary_json(&file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    let out = out.map(Path::to_path_buf).unwrap_or(dir);
    experiment::write_report(&summary, &out).map_err(Failure::runtime)?;
    println!("{}", out.display());
    Ok(())
}
