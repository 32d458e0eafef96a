//! Monte Carlo replication driver: bias, SD, mean SE, SD(SE) and coverage
//! per (model, n) cell.
//!
//! Replication `r` of cell `(model, n)` draws from its own ChaCha8 stream,
//! derived from the master seed and `(model, n, r)`, and results are
//! aggregated in replication order after every worker has finished. Tables
//! are therefore bit-identical for any worker count.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::BasisSpec;
use crate::data::{Rect, ValueWeight};
use crate::dgp::{simulate_sample_with, true_functional, DgpSpec, FunctionalKind, ModelId, Target};
use crate::functionals::{
    estimate_value_known_f, estimate_welfare_known_f, estimate_welfare_sample, BandWidth,
    EstimateOptions, FunctionalEstimate, WelfareVariance,
};
use crate::sieve::{default_interior_knots, fit_propensity, fit_sieve};
use crate::{defaults, dgp, Error, Result};

/// Variance estimator for welfare designs. Value designs always use the
/// sieve variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceKind {
    Analytic,
    Sieve,
}

/// How the sieve dimension is chosen in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SieveDims {
    /// The interior-knot counts stored with each catalog model.
    Catalog,
    /// The sample-size rule applied to each arm of each replication.
    Auto,
    /// The same interior-knot count for every outcome and propensity fit.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub models: Vec<ModelId>,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub variance: VarianceKind,
    pub dims: SieveDims,
    pub sobol_points: usize,
    pub band_points: usize,
    pub eps: f64,
    pub critical: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            ns: vec![1500, 3000, 6000],
            reps: defaults::REPS,
            seed: defaults::SEED,
            variance: VarianceKind::Analytic,
            dims: SieveDims::Catalog,
            sobol_points: defaults::SOBOL_POINTS,
            band_points: defaults::BAND_POINTS,
            eps: defaults::EPS_SIM,
            critical: defaults::CRITICAL,
            workers: None,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.models.is_empty() || self.ns.is_empty() {
            return Err(Error::InvalidArgument("the grid needs at least one model and one n".into()));
        }
        if let Some(&n) = self.ns.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidArgument(format!("sample size {n} is too small")));
        }
        if self.sobol_points == 0 || self.band_points == 0 {
            return Err(Error::InvalidArgument("integration budgets must be positive".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub model: String,
    pub n: usize,
    #[serde(rename = "true")]
    pub true_value: f64,
    pub bias: f64,
    pub sd: f64,
    #[serde(rename = "se")]
    pub mean_se: f64,
    pub sd_se: f64,
    pub coverage: f64,
    /// Not part of the exported columns; `0` after reading a table back.
    #[serde(skip)]
    pub reps_used: usize,
    pub failures: usize,
}

/// What one successful replication contributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepOutcome {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&FunctionalEstimate> for RepOutcome {
    fn from(e: &FunctionalEstimate) -> Self {
        Self {
            estimate: e.point,
            se: e.se,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Aggregates replication results in order. Failed replications are
/// counted and excluded from every moment.
pub fn aggregate(model: &str, n: usize, true_value: f64, reps: &[Result<RepOutcome>]) -> Result<McRow> {
    let ok: Vec<&RepOutcome> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = reps.len() - ok.len();
    if reps.is_empty() || failures as f64 > defaults::MAX_FAILURE_RATE * reps.len() as f64 || ok.is_empty() {
        let first = reps
            .iter()
            .find_map(|r| r.as_ref().err())
            .map_or_else(|| "no replications".to_string(), ToString::to_string);
        return Err(Error::FailureRate {
            model: model.to_string(),
            n,
            failures,
            reps: reps.len(),
            first,
        });
    }
    let est: Vec<f64> = ok.iter().map(|r| r.estimate).collect();
    let se: Vec<f64> = ok.iter().map(|r| r.se).collect();
    let (mean, sd) = mean_sd(&est);
    let (mean_se, sd_se) = mean_sd(&se);
    let hits = ok
        .iter()
        .filter(|r| r.ci_low <= true_value && true_value <= r.ci_high)
        .count();
    Ok(McRow {
        model: model.to_string(),
        n,
        true_value,
        bias: mean - true_value,
        sd,
        mean_se,
        sd_se,
        coverage: hits as f64 / ok.len() as f64,
        reps_used: ok.len(),
        failures,
    })
}

/// Stream index of replication `rep` in cell `(model, n)`: 8 bits of model,
/// 32 of n, 24 of replication.
fn stream_id(model: ModelId, n: usize, rep: usize) -> u64 {
    (u64::from(model.number()) << 56) | ((n as u64 & 0xFFFF_FFFF) << 24) | (rep as u64 & 0xFF_FFFF)
}

/// The generator for one replication.
pub fn replication_rng(seed: u64, model: ModelId, n: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(model, n, rep));
    rng
}

fn outcome_knots(dgp: &DgpSpec, dims: SieveDims, treated: bool, n_arm: usize) -> usize {
    match dims {
        SieveDims::Catalog if treated => dgp.treated_knots,
        SieveDims::Catalog => dgp.control_knots,
        SieveDims::Auto => default_interior_knots(n_arm, dgp.dim()),
        SieveDims::Fixed(k) => k,
    }
}

fn propensity_knots(dgp: &DgpSpec, dims: SieveDims, n: usize) -> usize {
    match dims {
        SieveDims::Catalog => dgp.propensity_knots,
        SieveDims::Auto => default_interior_knots(n, dgp.dim()),
        SieveDims::Fixed(k) => k,
    }
}

/// The value weight `scale · v0` of a design.
pub fn value_weight(dgp: &DgpSpec) -> ValueWeight {
    let (v0, scale) = (dgp.v0, dgp.scale);
    ValueWeight::new(format!("{scale}·v0"), move |x| scale * v0(x))
}

/// Fits and estimates on one simulated sample.
pub fn replicate(dgp: &DgpSpec, n: usize, rng: &mut ChaCha8Rng, config: &McConfig) -> Result<FunctionalEstimate> {
    let sample = simulate_sample_with(dgp, n, rng)?;
    let domain: &Rect = sample.domain();
    let k1 = outcome_knots(dgp, config.dims, true, sample.treated_count());
    let k0 = outcome_knots(dgp, config.dims, false, sample.control_count());
    let spec1 = BasisSpec::uniform(domain, defaults::DEGREE, k1)?;
    let spec0 = BasisSpec::uniform(domain, defaults::DEGREE, k0)?;
    let fit = fit_sieve(&sample, &spec1, &spec0)?;
    let opts = EstimateOptions {
        sobol_points: config.sobol_points,
        band_points: config.band_points,
        band: BandWidth::Absolute(config.eps),
        critical: config.critical,
    };
    let dist = dgp.target_distribution();
    if dgp.target == Target::ValueKnownF {
        return estimate_value_known_f(&fit, &sample, &value_weight(dgp), &dist, &opts);
    }
    let pfit;
    let lambda = dgp.lambda();
    let variance = match config.variance {
        VarianceKind::Analytic => {
            let pspec = BasisSpec::uniform(domain, defaults::DEGREE, propensity_knots(dgp, config.dims, n))?;
            pfit = fit_propensity(&sample, &pspec)?;
            WelfareVariance::Analytic {
                propensity: &pfit,
                lambda: &lambda,
            }
        }
        VarianceKind::Sieve => WelfareVariance::Sieve,
    };
    match dgp.target {
        Target::WelfareKnownF => estimate_welfare_known_f(&fit, &sample, &dist, variance, &opts),
        _ => estimate_welfare_sample(&fit, &sample, variance, &opts),
    }
}

/// Ground truth for a design: welfare with the point-estimate budget, value
/// with the band budget.
pub fn truth(dgp: &DgpSpec, config: &McConfig) -> Result<f64> {
    match dgp.target {
        Target::ValueKnownF => true_functional(dgp, FunctionalKind::Value, config.band_points),
        _ => true_functional(dgp, FunctionalKind::Welfare, config.sobol_points),
    }
}

/// Runs `reps` replications of one cell.
pub fn run_cell(dgp: &DgpSpec, n: usize, reps: usize, seed: u64, config: &McConfig) -> Result<McRow> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let true_value = truth(dgp, config)?;
    let run = || -> Vec<Result<RepOutcome>> {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(seed, dgp.id, n, r);
                replicate(dgp, n, &mut rng, config).map(|e| RepOutcome::from(&e))
            })
            .collect()
    };
    let results = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    aggregate(&dgp.id.to_string(), n, true_value, &results)
}

/// Runs every (model, n) cell in the order given.
pub fn run_grid(config: &McConfig) -> Result<Vec<McRow>> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.models.len() * config.ns.len());
    for &id in &config.models {
        let dgp = dgp::make_dgp(id);
        for &n in &config.ns {
            rows.push(run_cell(&dgp, n, config.reps, config.seed, config)?);
        }
    }
    Ok(rows)
}

/// Sorts rows by catalog model number, then n. Unknown model labels go last.
pub fn sort_catalog_order(rows: &mut [McRow]) {
    rows.sort_by_key(|r| {
        let m = r.model.parse::<ModelId>().map_or(u8::MAX, ModelId::number);
        (m, r.n)
    });
}

pub fn write_csv(rows: &[McRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<Vec<McRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Schema(format!(
            "expected columns {}, found {}",
            COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: McRow = rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Exported column names, in order.
pub const COLUMNS: [&str; 9] = ["model", "n", "true", "bias", "sd", "se", "sd_se", "coverage", "failures"];

/// Renders rows as a right-aligned text table.
pub fn format_table(rows: &[McRow]) -> String {
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.n.to_string(),
                format!("{:.4}", r.true_value),
                format!("{:.4}", r.bias),
                format!("{:.4}", r.sd),
                format!("{:.4}", r.mean_se),
                format!("{:.4}", r.sd_se),
                format!("{:.4}", r.coverage),
                r.failures.to_string(),
            ]
        })
        .collect();
    let mut width: [usize; 9] = COLUMNS.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, items: &[&str]| {
        let parts: Vec<String> = items
            .iter()
            .zip(width)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, &COLUMNS);
    for c in &cells {
        let refs: Vec<&str> = c.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}
