use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use firstbest::bspline::BasisSpec;
use firstbest::data::{read_csv_sample, trim_common_support, Sample, TargetDistribution, ValueWeight};
use firstbest::density::fit_kde;
use firstbest::dgp::{catalog_markdown, ModelId};
use firstbest::functionals::{
    bootstrap_critical_value, confidence_interval, estimate_value_sample, estimate_welfare_sample,
    BandWidth, EstimateOptions, FunctionalEstimate, WelfareVariance,
};
use firstbest::montecarlo::{self, McConfig, SieveDims, VarianceKind};
use firstbest::sieve::{default_interior_knots, fit_propensity, fit_sieve};
use firstbest::{defaults, Error};

/// Welfare and value functionals of the CATE under first-best assignment.
#[derive(Parser)]
#[command(name = "firstbest", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo grid over catalog models and sample sizes.
    Simulate(SimulateArgs),
    /// Estimate welfare or the treated share on a CSV data set.
    Estimate(EstimateArgs),
    /// Render a results CSV as an aligned text table.
    Tables(TablesArgs),
    /// Print the model catalog as a Markdown table.
    Catalog,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Analytic,
    Sieve,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated model ids, e.g. M1,M15.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Comma-separated sample sizes.
    #[arg(long = "n", value_delimiter = ',', default_value = "1500,3000,6000")]
    ns: Vec<usize>,
    /// Replications per cell.
    #[arg(long, default_value_t = defaults::REPS)]
    reps: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    seed: u64,
    /// Welfare variance estimator; value models always use the sieve form.
    #[arg(long, value_enum, default_value = "analytic")]
    variance: VarianceArg,
    /// Interior knots per dimension: "catalog", "auto" or a count.
    #[arg(long, default_value = "catalog")]
    knots: String,
    /// Sobol points for point estimates and welfare truth.
    #[arg(long, default_value_t = defaults::SOBOL_POINTS)]
    sobol_points: usize,
    /// Sobol points for band integrals and value truth.
    #[arg(long, default_value_t = defaults::BAND_POINTS)]
    band_points: usize,
    /// Band half-width for value models.
    #[arg(long, default_value_t = defaults::EPS_SIM)]
    eps: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FunctionalArg {
    Welfare,
    Share,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrimArg {
    CommonSupport,
    None,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    treat: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    covars: Vec<String>,
    #[arg(long, value_enum, default_value = "welfare")]
    functional: FunctionalArg,
    /// Cost subtracted from every treated outcome before fitting.
    #[arg(long, default_value_t = 0.0)]
    cost: f64,
    #[arg(long, value_enum, default_value = "common-support")]
    trim: TrimArg,
    /// Welfare variance estimator; the share always uses the sieve form.
    #[arg(long, value_enum, default_value = "analytic")]
    variance: VarianceArg,
    /// Absolute band half-width (conflicts with --iota).
    #[arg(long, conflicts_with = "iota")]
    eps: Option<f64>,
    /// Band half-width as a fraction of SD(ĥ) [default: 0.01].
    #[arg(long)]
    iota: Option<f64>,
    /// Bandwidth multiplier for the kernel density estimate.
    #[arg(long, default_value_t = defaults::KDE_SCALE)]
    kde_scale: f64,
    /// Sobol points for band integrals.
    #[arg(long, default_value_t = defaults::BAND_POINTS)]
    band_points: usize,
    /// Interior knots per dimension for both arms (default: sample-size rule).
    #[arg(long)]
    knots: Option<usize>,
    /// Sieve score bootstrap draws for the share (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    seed: u64,
    /// Output JSON file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TablesArgs {
    /// Results CSV written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code: 2 for configuration, 1 for runtime.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::UnknownModel(_)
            | Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure {
            code: 1,
            message: format!("cannot create {}: {e}", p.display()),
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_failure(e: io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("write failed: {e}"),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let models = args
        .models
        .iter()
        .map(|m| m.parse::<ModelId>())
        .collect::<Result<Vec<_>, _>>()?;
    let dims = match args.knots.as_str() {
        "catalog" => SieveDims::Catalog,
        "auto" => SieveDims::Auto,
        k => SieveDims::Fixed(k.parse().map_err(|_| {
            Failure::config(format!("--knots must be catalog, auto or a count, got '{k}'"))
        })?),
    };
    let config = McConfig {
        models,
        ns: args.ns,
        reps: args.reps,
        seed: args.seed,
        variance: match args.variance {
            VarianceArg::Analytic => VarianceKind::Analytic,
            VarianceArg::Sieve => VarianceKind::Sieve,
        },
        dims,
        sobol_points: args.sobol_points,
        band_points: args.band_points,
        eps: args.eps,
        critical: defaults::CRITICAL,
        workers: args.workers,
    };
    config.validate()?;
    let rows = montecarlo::run_grid(&config)?;
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        FormatArg::Csv => montecarlo::write_csv(&rows, &mut out)?,
        FormatArg::Text => out.write_all(montecarlo::format_table(&rows).as_bytes()).map_err(io_failure)?,
    }
    out.flush().map_err(io_failure)
}

fn cmd_tables(args: TablesArgs) -> Result<(), Failure> {
    let file = File::open(&args.input)
        .map_err(|e| Failure::config(format!("cannot open {}: {e}", args.input.display())))?;
    let mut rows = montecarlo::read_csv(file)?;
    montecarlo::sort_catalog_order(&mut rows);
    let mut out = open_out(args.out.as_deref())?;
    out.write_all(montecarlo::format_table(&rows).as_bytes()).map_err(io_failure)?;
    out.flush().map_err(io_failure)
}

#[derive(Serialize)]
struct TrimReport {
    rule: &'static str,
    n_input: usize,
    n_kept: usize,
    n_dropped: usize,
    domain_lower: Vec<f64>,
    domain_upper: Vec<f64>,
}

#[derive(Serialize)]
struct BootstrapReport {
    draws: usize,
    seed: u64,
    critical: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    schema_version: u32,
    functional: &'static str,
    data: String,
    outcome: String,
    treat: String,
    covars: Vec<String>,
    cost: f64,
    seed: u64,
    trim: TrimReport,
    treated: usize,
    control: usize,
    estimate: FunctionalEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapReport>,
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Failure> {
    if args.bootstrap > 0 && args.bootstrap < 100 {
        return Err(Failure::config("--bootstrap needs at least 100 draws (or 0 to disable)"));
    }
    if args.bootstrap > 0 && args.functional != FunctionalArg::Share {
        return Err(Failure::config("--bootstrap applies to --functional share only"));
    }
    let band = match (args.eps, args.iota) {
        (Some(e), _) => BandWidth::Absolute(e),
        (None, Some(i)) => BandWidth::SdFraction(i),
        (None, None) => BandWidth::SdFraction(defaults::IOTA),
    };
    match band {
        BandWidth::Absolute(v) | BandWidth::SdFraction(v) if !(v.is_finite() && v > 0.0) => {
            return Err(Failure::config("--eps and --iota must be positive"));
        }
        _ => {}
    }
    if !(args.kde_scale.is_finite() && args.kde_scale > 0.0) {
        return Err(Failure::config("--kde-scale must be positive"));
    }
    if args.band_points == 0 {
        return Err(Failure::config("--band-points must be positive"));
    }
    let covars: Vec<&str> = args.covars.iter().map(String::as_str).collect();
    let raw = read_csv_sample(&args.data, &args.outcome, &args.treat, &covars, None)?;
    let raw = if args.cost != 0.0 {
        raw.subtract_treated_cost(args.cost)
    } else {
        raw
    };
    let sample: Sample = match args.trim {
        TrimArg::CommonSupport => trim_common_support(&raw)?.0,
        TrimArg::None => raw.clone(),
    };
    let domain = sample.domain().clone();
    let knots = |n_arm: usize| args.knots.unwrap_or_else(|| default_interior_knots(n_arm, sample.dim()));
    let spec1 = BasisSpec::uniform(&domain, defaults::DEGREE, knots(sample.treated_count()))?;
    let spec0 = BasisSpec::uniform(&domain, defaults::DEGREE, knots(sample.control_count()))?;
    let fit = fit_sieve(&sample, &spec1, &spec0)?;
    let opts = EstimateOptions {
        sobol_points: defaults::SOBOL_POINTS,
        band_points: args.band_points,
        band,
        critical: defaults::CRITICAL,
    };
    let mut bootstrap = None;
    let estimate = match args.functional {
        FunctionalArg::Welfare => match args.variance {
            VarianceArg::Analytic => {
                let pspec = BasisSpec::uniform(&domain, defaults::DEGREE, knots(sample.n()))?;
                let pfit = fit_propensity(&sample, &pspec)?;
                let one = |_: &[f64]| 1.0;
                let v = WelfareVariance::Analytic {
                    propensity: &pfit,
                    lambda: &one,
                };
                estimate_welfare_sample(&fit, &sample, v, &opts)?
            }
            VarianceArg::Sieve => estimate_welfare_sample(&fit, &sample, WelfareVariance::Sieve, &opts)?,
        },
        FunctionalArg::Share => {
            let kde = fit_kde(sample.x(), args.kde_scale)?;
            let density = TargetDistribution::kde(kde, domain.clone())?;
            let mut est = estimate_value_sample(&fit, &sample, &ValueWeight::constant(1.0), &density, &opts)?;
            est.meta.kde_scale = Some(args.kde_scale);
            if args.bootstrap > 0 {
                let sigma = est.se * (est.n as f64).sqrt();
                let deriv = est.deriv.as_ref().expect("value estimates carry their derivative");
                let c = bootstrap_critical_value(&fit, deriv, sigma, args.bootstrap, args.seed)?;
                let (ci_low, ci_high) = confidence_interval(est.point, sigma, est.n, c);
                bootstrap = Some(BootstrapReport {
                    draws: args.bootstrap,
                    seed: args.seed,
                    critical: c,
                    ci_low,
                    ci_high,
                });
            }
            est
        }
    };
    let report = EstimateReport {
        schema_version: 1,
        functional: match args.functional {
            FunctionalArg::Welfare => "welfare",
            FunctionalArg::Share => "share",
        },
        data: args.data.display().to_string(),
        outcome: args.outcome,
        treat: args.treat,
        covars: args.covars,
        cost: args.cost,
        seed: args.seed,
        trim: TrimReport {
            rule: match args.trim {
                TrimArg::CommonSupport => "common-support",
                TrimArg::None => "none",
            },
            n_input: raw.n(),
            n_kept: sample.n(),
            n_dropped: raw.n() - sample.n(),
            domain_lower: domain.lower().to_vec(),
            domain_upper: domain.upper().to_vec(),
        },
        treated: sample.treated_count(),
        control: sample.control_count(),
        estimate,
        bootstrap,
    };
    let mut out = open_out(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write JSON: {e}"),
    })?;
    writeln!(out).map_err(io_failure)?;
    out.flush().map_err(io_failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Tables(a) => cmd_tables(a),
        Command::Catalog => {
            print!("{}", catalog_markdown());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
