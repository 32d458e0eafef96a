//! Plug-in estimators of the welfare functional `W = ∫[h]₊ f` and the value
//! functional `V = ∫1{h ≥ 0} v₀ f`, their variance estimators, confidence
//! intervals and the sieve score bootstrap.
//!
//! Every standard error follows one contract: a variance `σ²` of
//! `√n(θ̂ − θ)` gives `SE = σ / √n`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bspline::{BasisSpec, LocalBasis};
use crate::data::{Rect, Sample, TargetDistribution, ValueWeight};
use crate::defaults;
use crate::sieve::{propensity_keep_mask, PropensityFit, RobustCovariance, SieveFit};
use crate::{qmc, Error, Result};

/// Which of the four estimators produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    WelfareKnownF,
    WelfareSample,
    ValueKnownF,
    ValueSample,
}

/// Tuning values recorded alongside an estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimateMeta {
    /// `"analytic"` or `"sieve"`.
    pub variance: String,
    pub k1: usize,
    pub k0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobol_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_hits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kde_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity_kept: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity_dropped: Option<usize>,
}

/// A point estimate with its standard error and confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalEstimate {
    pub kind: EstimatorKind,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub critical: f64,
    pub n: usize,
    pub meta: EstimateMeta,
    /// The derivative behind a sieve standard error, kept for the bootstrap.
    #[serde(skip)]
    pub deriv: Option<DerivVector>,
}

impl FunctionalEstimate {
    /// Builds the estimate from the asymptotic standard deviation `sigma`.
    pub fn new(
        kind: EstimatorKind,
        point: f64,
        sigma: f64,
        n: usize,
        critical: f64,
        meta: EstimateMeta,
    ) -> Self {
        let (ci_low, ci_high) = confidence_interval(point, sigma, n, critical);
        Self {
            kind,
            point,
            se: sigma / (n as f64).sqrt(),
            ci_low,
            ci_high,
            critical,
            n,
            meta,
            deriv: None,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Derivative of a functional in the stacked coefficient order `(β₁, β₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivVector {
    pub delta: Vec<f64>,
    pub k1: usize,
}

impl DerivVector {
    pub fn zeros(k1: usize, k0: usize) -> Self {
        Self {
            delta: vec![0.0; k1 + k0],
            k1,
        }
    }

    pub fn block1(&self) -> &[f64] {
        &self.delta[..self.k1]
    }

    pub fn block0(&self) -> &[f64] {
        &self.delta[self.k1..]
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&v| v == 0.0)
    }

    fn scale(&mut self, c: f64) {
        for v in &mut self.delta {
            *v *= c;
        }
    }
}

/// `∫[ĥ]₊ f` by `count` Sobol points on the support of `dist`.
pub fn welfare_known_f(fit: &SieveFit, dist: &TargetDistribution, count: usize) -> Result<f64> {
    let mut ev = fit.evaluator();
    qmc::expect_under(|x| ev.cate(x).max(0.0), dist, count)
}

/// `(1/n) Σ [ĥ(x_i)]₊`.
pub fn welfare_sample_mean(fit: &SieveFit, sample: &Sample) -> f64 {
    let mut ev = fit.evaluator();
    let total: f64 = sample.x().rows().map(|x| ev.cate(x).max(0.0)).sum();
    total / sample.n() as f64
}

/// `∫1{ĥ ≥ 0} v₀ f` by `count` Sobol points.
pub fn value_known_f(
    fit: &SieveFit,
    weight: &ValueWeight,
    dist: &TargetDistribution,
    count: usize,
) -> Result<f64> {
    let mut ev = fit.evaluator();
    qmc::expect_under(
        |x| if ev.cate(x) >= 0.0 { weight.eval(x) } else { 0.0 },
        dist,
        count,
    )
}

/// `(1/n) Σ 1{ĥ(x_i) ≥ 0} v₀(x_i)`.
pub fn value_sample_mean(fit: &SieveFit, weight: &ValueWeight, sample: &Sample) -> f64 {
    let mut ev = fit.evaluator();
    let total: f64 = sample
        .x()
        .rows()
        .map(|x| if ev.cate(x) >= 0.0 { weight.eval(x) } else { 0.0 })
        .sum();
    total / sample.n() as f64
}

/// Whether `f` is a known density or the sample distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    KnownF,
    SampleF,
}

/// The analytic welfare variance and the propensity trimming behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticVariance {
    pub sigma2: f64,
    pub kept: usize,
    pub dropped: usize,
}

/// Plug-in welfare variance over observations with `p̂ ∈ (0, 1)`:
/// `(1/N) Σ 1{ĥ ≥ 0} λ² û² / (p̂(1 − p̂))`. With [`DensityMode::SampleF`],
/// `λ ≡ 1` and the sample variance of `[ĥ]₊` is added.
pub fn var_welfare_analytic(
    fit: &SieveFit,
    pfit: &PropensityFit,
    sample: &Sample,
    lambda: &dyn Fn(&[f64]) -> f64,
    mode: DensityMode,
) -> Result<AnalyticVariance> {
    if sample.n() != fit.n() {
        return Err(Error::Shape(format!(
            "sample has {} rows but the fit used {}",
            sample.n(),
            fit.n()
        )));
    }
    let mask = propensity_keep_mask(pfit, sample)?;
    let kept = mask.iter().filter(|&&m| m).count();
    if kept < 2 {
        return Err(Error::DegenerateTrim);
    }
    let mut ev = fit.evaluator();
    let mut sum = 0.0;
    let mut pos = Vec::with_capacity(sample.n());
    for (i, x) in sample.x().rows().enumerate() {
        let h = ev.cate(x);
        pos.push(h.max(0.0));
        if !mask[i] || h < 0.0 {
            continue;
        }
        let l = match mode {
            DensityMode::KnownF => lambda(x),
            DensityMode::SampleF => 1.0,
        };
        let p = pfit.predict(x);
        let u = fit.residuals()[i];
        sum += l * l * u * u / (p * (1.0 - p));
    }
    let mut sigma2 = sum / kept as f64;
    if mode == DensityMode::SampleF {
        sigma2 += sample_variance(&pos);
    }
    Ok(AnalyticVariance {
        sigma2,
        kept,
        dropped: sample.n() - kept,
    })
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)
}

/// `(∫_{ĥ≥0} ψ₁ f, −∫_{ĥ≥0} ψ₀ f)` by `count` Sobol points.
pub fn deriv_welfare_sieve(
    fit: &SieveFit,
    dist: &TargetDistribution,
    count: usize,
) -> Result<DerivVector> {
    if count == 0 {
        return Err(Error::InvalidArgument("integration needs at least one point".into()));
    }
    let mut out = DerivVector::zeros(fit.beta1().len(), fit.beta0().len());
    let mut ev = fit.evaluator();
    qmc::for_each_point(dist.support(), count, |x| {
        if ev.cate(x) >= 0.0 {
            let w = dist.pdf(x);
            ev.visit_arms(|k, v| out.delta[k] += v * w);
        }
    })?;
    out.scale(dist.support().volume() / count as f64);
    Ok(out)
}

/// Sample analogue `(1/n) Σ 1{ĥ(x_i) ≥ 0} (ψ₁(x_i), −ψ₀(x_i))`.
pub fn deriv_welfare_sample(fit: &SieveFit, sample: &Sample) -> DerivVector {
    let mut out = DerivVector::zeros(fit.beta1().len(), fit.beta0().len());
    let mut ev = fit.evaluator();
    for x in sample.x().rows() {
        if ev.cate(x) >= 0.0 {
            ev.visit_arms(|k, v| out.delta[k] += v);
        }
    }
    out.scale(1.0 / sample.n() as f64);
    out
}

/// A band derivative and the number of Sobol points that fell in the band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDerivative {
    pub deriv: DerivVector,
    pub hits: usize,
}

/// `(1/2ε) (∫_{|h|<ε} ψ₁ w, −∫_{|h|<ε} ψ₀ w)` by `count` Sobol points on
/// `support`, for an arbitrary function `h` and weight `w = v₀ · density`.
pub fn band_derivative(
    mut h: impl FnMut(&[f64]) -> f64,
    spec1: &BasisSpec,
    spec0: &BasisSpec,
    weight: impl Fn(&[f64]) -> f64,
    support: &Rect,
    eps: f64,
    count: usize,
) -> Result<BandDerivative> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("band half-width must be positive, got {eps}")));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("integration needs at least one point".into()));
    }
    let k1 = spec1.len();
    let mut out = DerivVector::zeros(k1, spec0.len());
    let mut local1 = LocalBasis::new(spec1);
    let mut local0 = LocalBasis::new(spec0);
    let mut hits = 0;
    let mut bad = None;
    qmc::for_each_point(support, count, |x| {
        if bad.is_some() || h(x).abs() >= eps {
            return;
        }
        hits += 1;
        let w = weight(x);
        if !w.is_finite() {
            bad = Some((x.to_vec(), w));
            return;
        }
        if w == 0.0 {
            return;
        }
        local1.set(spec1, x);
        local0.set(spec0, x);
        local1.for_each(|k, v| out.delta[k] += v * w);
        local0.for_each(|k, v| out.delta[k1 + k] -= v * w);
    })?;
    if let Some((point, value)) = bad {
        return Err(Error::Integrand { point, value });
    }
    if hits == 0 {
        return Err(Error::BandEmpty {
            eps,
            hits,
            points: count,
        });
    }
    out.scale(support.volume() / (count as f64 * 2.0 * eps));
    Ok(BandDerivative { deriv: out, hits })
}

/// The ε-band derivative of the value functional at a fitted CATE.
pub fn deriv_value_band(
    fit: &SieveFit,
    weight: &ValueWeight,
    density: impl Fn(&[f64]) -> f64,
    support: &Rect,
    eps: f64,
    count: usize,
) -> Result<BandDerivative> {
    let mut ev = fit.evaluator();
    band_derivative(
        |x| ev.cate(x),
        fit.spec1(),
        fit.spec0(),
        |x| weight.eval(x) * density(x),
        support,
        eps,
        count,
    )
}

/// `Δ'Ω̂Δ`.
pub fn var_sieve(delta: &DerivVector, omega: &RobustCovariance) -> Result<f64> {
    let k = delta.delta.len();
    if omega.omega.nrows() != k || omega.omega.ncols() != k {
        return Err(Error::Shape(format!(
            "derivative has {k} entries but the covariance is {}x{}",
            omega.omega.nrows(),
            omega.omega.ncols()
        )));
    }
    let d = DVector::from_column_slice(&delta.delta);
    Ok(d.dot(&(&omega.omega * &d)).max(0.0))
}

/// `point ± critical · sigma / √n`, never truncated.
pub fn confidence_interval(point: f64, sigma: f64, n: usize, critical: f64) -> (f64, f64) {
    let half = critical * (sigma / (n as f64).sqrt());
    (point - half, point + half)
}

/// Critical value from the multiplier bootstrap of the sieve t-statistic
/// `Z* = Δ'(B'B/n)⁻¹ n^{-1/2} Σ b_i û_i ω_i / σ_v` with standard normal
/// `ω`. Returns the `⌈0.95 B⌉`-th smallest `|Z*|`.
///
/// Replicate `b` draws its multipliers from stream `b` of a generator
/// seeded with `seed`, so the result does not depend on thread scheduling.
pub fn bootstrap_critical_value(
    fit: &SieveFit,
    delta: &DerivVector,
    sigma_v: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if draws < 100 {
        return Err(Error::InvalidArgument(format!(
            "the bootstrap needs at least 100 draws, got {draws}"
        )));
    }
    if !(sigma_v.is_finite() && sigma_v > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma_v must be positive, got {sigma_v}"
        )));
    }
    if delta.delta.len() != fit.num_coef() {
        return Err(Error::Shape(format!(
            "derivative has {} entries but the fit has {} coefficients",
            delta.delta.len(),
            fit.num_coef()
        )));
    }
    if delta.is_zero() {
        return Ok(0.0);
    }
    let n = fit.n();
    // a_i = √n (G⁻¹Δ)' b_i û_i / σ_v, so that Z* = Σ a_i ω_i
    let g = fit.gram_inverse()? * DVector::from_column_slice(&delta.delta);
    let root_n = (n as f64).sqrt();
    let a: Vec<f64> = (0..n)
        .map(|i| {
            let b = fit.design_row(i);
            let proj: f64 = b.iter().zip(g.iter()).map(|(x, y)| x * y).sum();
            root_n * proj * fit.residuals()[i] / sigma_v
        })
        .collect();
    let mut stats: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let z: f64 = a
                .iter()
                .map(|ai| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    ai * w
                })
                .sum();
            z.abs()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let idx = (0.95 * draws as f64).ceil() as usize;
    Ok(stats[idx.max(1) - 1])
}

/// How to choose the band half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandWidth {
    Absolute(f64),
    /// `ι · SD(ĥ)` over the sample.
    SdFraction(f64),
}

/// Variance estimator for welfare.
pub enum WelfareVariance<'a> {
    /// Plug-in with a propensity fit and the density ratio `λ = f / f0`.
    Analytic {
        propensity: &'a PropensityFit,
        lambda: &'a dyn Fn(&[f64]) -> f64,
    },
    Sieve,
}

/// Integration budgets and the critical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub sobol_points: usize,
    pub band_points: usize,
    pub band: BandWidth,
    pub critical: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            sobol_points: defaults::SOBOL_POINTS,
            band_points: defaults::BAND_POINTS,
            band: BandWidth::Absolute(defaults::EPS_SIM),
            critical: defaults::CRITICAL,
        }
    }
}

fn base_meta(fit: &SieveFit, variance: &str) -> EstimateMeta {
    EstimateMeta {
        variance: variance.to_string(),
        k1: fit.beta1().len(),
        k0: fit.beta0().len(),
        ..EstimateMeta::default()
    }
}

fn welfare_variance(
    fit: &SieveFit,
    sample: &Sample,
    variance: &WelfareVariance<'_>,
    mode: DensityMode,
    sieve_delta: impl FnOnce() -> Result<DerivVector>,
    meta: &mut EstimateMeta,
) -> Result<f64> {
    match variance {
        WelfareVariance::Analytic { propensity, lambda } => {
            let av = var_welfare_analytic(fit, propensity, sample, *lambda, mode)?;
            meta.propensity_kept = Some(av.kept);
            meta.propensity_dropped = Some(av.dropped);
            Ok(av.sigma2)
        }
        WelfareVariance::Sieve => {
            let delta = sieve_delta()?;
            let omega = crate::sieve::robust_covariance(fit)?;
            let mut s2 = var_sieve(&delta, &omega)?;
            if mode == DensityMode::SampleF {
                let mut ev = fit.evaluator();
                let pos: Vec<f64> = sample.x().rows().map(|x| ev.cate(x).max(0.0)).collect();
                s2 += sample_variance(&pos);
            }
            Ok(s2)
        }
    }
}

/// Welfare under a known `f`, with standard error and interval.
pub fn estimate_welfare_known_f(
    fit: &SieveFit,
    sample: &Sample,
    dist: &TargetDistribution,
    variance: WelfareVariance<'_>,
    opts: &EstimateOptions,
) -> Result<FunctionalEstimate> {
    let point = welfare_known_f(fit, dist, opts.sobol_points)?;
    let mut meta = base_meta(fit, variance_label(&variance));
    meta.sobol_points = Some(opts.sobol_points);
    let s2 = welfare_variance(
        fit,
        sample,
        &variance,
        DensityMode::KnownF,
        || deriv_welfare_sieve(fit, dist, opts.sobol_points),
        &mut meta,
    )?;
    Ok(FunctionalEstimate::new(
        EstimatorKind::WelfareKnownF,
        point,
        s2.sqrt(),
        fit.n(),
        opts.critical,
        meta,
    ))
}

/// Welfare under `f = f0` by the sample mean, with standard error and interval.
pub fn estimate_welfare_sample(
    fit: &SieveFit,
    sample: &Sample,
    variance: WelfareVariance<'_>,
    opts: &EstimateOptions,
) -> Result<FunctionalEstimate> {
    let point = welfare_sample_mean(fit, sample);
    let mut meta = base_meta(fit, variance_label(&variance));
    let s2 = welfare_variance(
        fit,
        sample,
        &variance,
        DensityMode::SampleF,
        || Ok(deriv_welfare_sample(fit, sample)),
        &mut meta,
    )?;
    Ok(FunctionalEstimate::new(
        EstimatorKind::WelfareSample,
        point,
        s2.sqrt(),
        fit.n(),
        opts.critical,
        meta,
    ))
}

fn variance_label(v: &WelfareVariance<'_>) -> &'static str {
    match v {
        WelfareVariance::Analytic { .. } => "analytic",
        WelfareVariance::Sieve => "sieve",
    }
}

/// Resolves the band half-width for a fit evaluated on `sample`.
pub fn resolve_eps(fit: &SieveFit, sample: &Sample, band: BandWidth) -> Result<f64> {
    let eps = match band {
        BandWidth::Absolute(e) => e,
        BandWidth::SdFraction(iota) => {
            let mut ev = fit.evaluator();
            let h: Vec<f64> = sample.x().rows().map(|x| ev.cate(x)).collect();
            iota * sample_variance(&h).sqrt()
        }
    };
    if eps.is_finite() && eps > 0.0 {
        Ok(eps)
    } else {
        Err(Error::InvalidArgument(format!(
            "band half-width must be positive, got {eps}"
        )))
    }
}

fn value_estimate(
    kind: EstimatorKind,
    point: f64,
    fit: &SieveFit,
    band: BandDerivative,
    eps: f64,
    opts: &EstimateOptions,
    mut meta: EstimateMeta,
) -> Result<FunctionalEstimate> {
    let omega = crate::sieve::robust_covariance(fit)?;
    let s2 = var_sieve(&band.deriv, &omega)?;
    meta.band_points = Some(opts.band_points);
    meta.eps = Some(eps);
    meta.band_hits = Some(band.hits);
    let mut est = FunctionalEstimate::new(kind, point, s2.sqrt(), fit.n(), opts.critical, meta);
    est.deriv = Some(band.deriv);
    Ok(est)
}

/// Value under a known `f` with the sieve ε-band standard error.
pub fn estimate_value_known_f(
    fit: &SieveFit,
    sample: &Sample,
    weight: &ValueWeight,
    dist: &TargetDistribution,
    opts: &EstimateOptions,
) -> Result<FunctionalEstimate> {
    let point = value_known_f(fit, weight, dist, opts.sobol_points)?;
    let eps = resolve_eps(fit, sample, opts.band)?;
    let band = deriv_value_band(
        fit,
        weight,
        |x| dist.pdf(x),
        dist.support(),
        eps,
        opts.band_points,
    )?;
    let mut meta = base_meta(fit, "sieve");
    meta.sobol_points = Some(opts.sobol_points);
    value_estimate(EstimatorKind::ValueKnownF, point, fit, band, eps, opts, meta)
}

/// Value under `f = f0` by the sample mean; the band derivative integrates
/// against `density` (typically a kernel estimate) on its support.
pub fn estimate_value_sample(
    fit: &SieveFit,
    sample: &Sample,
    weight: &ValueWeight,
    density: &TargetDistribution,
    opts: &EstimateOptions,
) -> Result<FunctionalEstimate> {
    let point = value_sample_mean(fit, weight, sample);
    let eps = resolve_eps(fit, sample, opts.band)?;
    let band = deriv_value_band(
        fit,
        weight,
        |x| density.pdf(x),
        density.support(),
        eps,
        opts.band_points,
    )?;
    value_estimate(
        EstimatorKind::ValueSample,
        point,
        fit,
        band,
        eps,
        opts,
        base_meta(fit, "sieve"),
    )
}
