//! The fifteen simulation designs and their ground-truth functionals.
//!
//! Every design draws `X ~ U(F0)`, `D | X ~ Bernoulli(p0(X))` and
//! `Y = μ0(X, D) + σ ε` with `ε ~ N(0, 1)`.
//!
//! The term written `sin x1 x2` for M4 and M11 is read as `sin(x1)·x2`, the
//! form used by M15.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{PointSet, Rect, Sample, TargetDistribution};
use crate::{qmc, Error, Result};

/// Catalog identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelId(u8);

impl ModelId {
    pub const ALL: [ModelId; 15] = {
        let mut all = [ModelId(1); 15];
        let mut i = 0;
        while i < 15 {
            all[i] = ModelId(i as u8 + 1);
            i += 1;
        }
        all
    };

    pub fn new(number: u8) -> Result<Self> {
        if (1..=15).contains(&number) {
            Ok(Self(number))
        } else {
            Err(Error::UnknownModel(format!("M{number}")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.0)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        t.strip_prefix(['M', 'm'])
            .and_then(|num| num.parse::<u8>().ok())
            .and_then(|num| ModelId::new(num).ok())
            .ok_or_else(|| Error::UnknownModel(t.to_string()))
    }
}

/// Which functional a design targets and how `f` enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Welfare with a known uniform `f` integrated by Sobol points.
    WelfareKnownF,
    /// Welfare with `f = f0` unknown, estimated by a sample mean.
    WelfareSample,
    /// Value with a known uniform `f`.
    ValueKnownF,
}

/// A fully specified data-generating process.
#[derive(Clone)]
pub struct DgpSpec {
    pub id: ModelId,
    /// Source covariate support (uniform).
    pub f0: Rect,
    /// Target support (uniform).
    pub f: Rect,
    pub mu0: fn(&[f64], u8) -> f64,
    pub p0: fn(&[f64]) -> f64,
    pub noise_sd: f64,
    pub v0: fn(&[f64]) -> f64,
    /// Output multiplier of the value functional.
    pub scale: f64,
    pub target: Target,
    /// Predetermined interior knots per dimension for the treated arm.
    pub treated_knots: usize,
    /// Predetermined interior knots per dimension for the control arm.
    pub control_knots: usize,
    /// Predetermined interior knots per dimension for the propensity fit.
    pub propensity_knots: usize,
    /// Human-readable formulas for the catalog table.
    pub mu0_text: &'static str,
    pub p0_text: &'static str,
}

impl fmt::Debug for DgpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DgpSpec")
            .field("id", &self.id)
            .field("f0", &self.f0)
            .field("f", &self.f)
            .field("noise_sd", &self.noise_sd)
            .field("scale", &self.scale)
            .field("target", &self.target)
            .field("treated_knots", &self.treated_knots)
            .field("control_knots", &self.control_knots)
            .finish_non_exhaustive()
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn one(_: &[f64]) -> f64 {
    1.0
}

fn d(v: u8) -> f64 {
    f64::from(v)
}

// Designs shared by the known-f (M1..M7) and sample-mean (M8..M14) tables.

fn mu_a(x: &[f64], t: u8) -> f64 {
    let x = x[0];
    5.0 * (2.0 * PI * x).sin() * (2.0 * PI * x).cos() + d(t) * (-0.4 + 2.0 * x * x)
}

fn p_a(x: &[f64]) -> f64 {
    logistic(1.0 - 2.0 * x[0])
}

fn mu_b(x: &[f64], t: u8) -> f64 {
    let x = x[0];
    0.5 * x.abs() + d(t) * (0.5 - x * x)
}

fn p_b(x: &[f64]) -> f64 {
    logistic(-0.5 + x[0])
}

fn mu_c(x: &[f64], t: u8) -> f64 {
    let x = x[0];
    x * x + d(t) * (1.0 - x)
}

fn p_c(x: &[f64]) -> f64 {
    logistic(0.5 - x[0])
}

fn mu_d(x: &[f64], t: u8) -> f64 {
    let (a, b) = (x[0], x[1]);
    (1.0 - a * a - b * b) * (4.0 + a.sin() * b + b.cos()) + d(t) * (0.5 * a - 0.4 * b)
}

fn p_diff(x: &[f64]) -> f64 {
    logistic(x[0] - x[1])
}

fn mu_e(x: &[f64], t: u8) -> f64 {
    let (a, b) = (x[0], x[1]);
    (1.0 - a * b) * (3.0 + (PI * a).sin() * (PI * b).cos()) + d(t) * (0.3 * a - 0.3 * b)
}

fn mu_f(x: &[f64], t: u8) -> f64 {
    let (a, b) = (x[0], x[1]);
    (1.0 + a + b).ln() + d(t) * (a - 0.7 * b)
}

fn p_f(x: &[f64]) -> f64 {
    logistic(1.5 * x[0] - 0.5 * x[1])
}

fn mu_g(x: &[f64], t: u8) -> f64 {
    let (a, b) = (x[0], x[1]);
    (a * a + b * b) * (-(a + b)).exp() + d(t) * (0.5 - b)
}

fn p_g(x: &[f64]) -> f64 {
    logistic(-0.5 + x[0] + 2.0 * x[1])
}

fn mu_disk(x: &[f64], t: u8) -> f64 {
    let (a, b) = (x[0], x[1]);
    d(t) * (1.0 - a * a - b * b) * (4.0 + a.sin() * b + b.cos())
}

type Row = (
    fn(&[f64], u8) -> f64,
    fn(&[f64]) -> f64,
    usize,
    &'static str,
    &'static str,
);

fn shared_row(k: u8) -> Row {
    match k {
        0 => (mu_a, p_a, 1, "5 sin(2πx) cos(2πx) + d(−0.4 + 2x²)", "1/(1+exp(−(1−2x)))"),
        1 => (mu_b, p_b, 1, "0.5|x| + d(0.5 − x²)", "1/(1+exp(−(−0.5+x)))"),
        2 => (mu_c, p_c, 1, "x² + d(1 − x)", "1/(1+exp(−(0.5−x)))"),
        3 => (
            mu_d,
            p_diff,
            2,
            "(1 − x1² − x2²)(4 + sin(x1)·x2 + cos x2) + d(0.5x1 − 0.4x2)",
            "1/(1+exp(−(x1−x2)))",
        ),
        4 => (
            mu_e,
            p_diff,
            2,
            "(1 − x1x2)(3 + sin(πx1) cos(πx2)) + d(0.3x1 − 0.3x2)",
            "1/(1+exp(−(x1−x2)))",
        ),
        5 => (
            mu_f,
            p_f,
            2,
            "log(1 + x1 + x2) + d(x1 − 0.7x2)",
            "1/(1+exp(−(1.5x1−0.5x2)))",
        ),
        _ => (
            mu_g,
            p_g,
            2,
            "(x1² + x2²) exp(−(x1 + x2)) + d(0.5 − x2)",
            "1/(1+exp(−(−0.5+x1+2x2)))",
        ),
    }
}

/// Predetermined interior knots per dimension `(treated, control, propensity)`,
/// fixed from pilot runs at n = 6000. The bivariate welfare designs use a
/// single bicubic patch; M15's control mean is identically zero, so its
/// control arm gets a coarser sieve than the treated arm.
fn knots_for(id: ModelId) -> (usize, usize, usize) {
    match id.number() {
        1 => (12, 12, 4),
        8 => (9, 9, 4),
        2 | 3 | 9 | 10 => (4, 4, 4),
        15 => (3, 1, 3),
        _ => (0, 0, 1),
    }
}

/// The catalog entry for `id`.
pub fn make_dgp(id: ModelId) -> DgpSpec {
    let num = id.number();
    let (treated_knots, control_knots, propensity_knots) = knots_for(id);
    if num == 15 {
        return DgpSpec {
            id,
            f0: Rect::cube(-2.0, 2.0, 2).expect("static rectangle"),
            f: Rect::cube(-1.5, 1.5, 2).expect("static rectangle"),
            mu0: mu_disk,
            p0: p_diff,
            noise_sd: 1.0,
            v0: one,
            scale: 9.0,
            target: Target::ValueKnownF,
            treated_knots,
            control_knots,
            propensity_knots,
            mu0_text: "d (1 − x1² − x2²)(4 + sin(x1)·x2 + cos x2)",
            p0_text: "1/(1+exp(−(x1−x2)))",
        };
    }
    let known = num <= 7;
    let (mu0, p0, dim, mu0_text, p0_text) = shared_row(if known { num - 1 } else { num - 8 });
    let f = Rect::unit(dim).expect("static rectangle");
    let f0 = if known {
        Rect::cube(-0.2, 1.2, dim).expect("static rectangle")
    } else {
        f.clone()
    };
    DgpSpec {
        id,
        f0,
        f,
        mu0,
        p0,
        noise_sd: 1.0,
        v0: one,
        scale: 1.0,
        target: if known {
            Target::WelfareKnownF
        } else {
            Target::WelfareSample
        },
        treated_knots,
        control_knots,
        propensity_knots,
        mu0_text,
        p0_text,
    }
}

impl DgpSpec {
    pub fn dim(&self) -> usize {
        self.f0.dim()
    }

    /// True CATE `μ0(x, 1) − μ0(x, 0)`.
    pub fn cate(&self, x: &[f64]) -> f64 {
        (self.mu0)(x, 1) - (self.mu0)(x, 0)
    }

    /// Density ratio `λ = f / f0` for uniform supports: `vol(F0)/vol(F)` on
    /// `F`, zero elsewhere.
    pub fn lambda(&self) -> impl Fn(&[f64]) -> f64 + Send + Sync + 'static {
        let ratio = self.f0.volume() / self.f.volume();
        let f = self.f.clone();
        move |x: &[f64]| if f.contains(x) { ratio } else { 0.0 }
    }

    pub fn target_distribution(&self) -> TargetDistribution {
        TargetDistribution::uniform(self.f.clone())
    }
}

/// Welfare or value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalKind {
    Welfare,
    Value,
}

/// Draws `n` observations with a generator seeded by `seed`.
pub fn simulate_sample(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    simulate_sample_with(dgp, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `n` observations from `rng`. Per observation the draws are: the
/// covariates, a uniform for treatment, then the noise.
pub fn simulate_sample_with(dgp: &DgpSpec, n: usize, rng: &mut impl Rng) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let dim = dgp.dim();
    let mut x = vec![0.0; n * dim];
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u = vec![0.0; dim];
    for row in x.chunks_exact_mut(dim) {
        for uj in u.iter_mut() {
            *uj = rng.random::<f64>();
        }
        dgp.f0.map_from_unit(&u, row);
        let t = u8::from(rng.random::<f64>() < (dgp.p0)(row));
        let e: f64 = rng.sample(StandardNormal);
        y.push((dgp.mu0)(row, t) + dgp.noise_sd * e);
        d.push(t);
    }
    Sample::new(y, d, PointSet::new(dim, x)?, dgp.f0.clone())
}

/// Ground truth by `count` Sobol points under `F`: `∫[h0]₊ dF` or
/// `scale · ∫1{h0 ≥ 0} v0 dF`.
pub fn true_functional(dgp: &DgpSpec, kind: FunctionalKind, count: usize) -> Result<f64> {
    let dist = dgp.target_distribution();
    match kind {
        FunctionalKind::Welfare => qmc::expect_under(|x| dgp.cate(x).max(0.0), &dist, count),
        FunctionalKind::Value => qmc::expect_under(
            |x| {
                if dgp.cate(x) >= 0.0 {
                    dgp.scale * (dgp.v0)(x)
                } else {
                    0.0
                }
            },
            &dist,
            count,
        ),
    }
}

/// Synthetic job-training-shaped data for demos and tests: covariates are
/// prior earnings in $1000 (skewed, on `[0, 40]`) and years of education on
/// `[7, 18]`, treatment is randomized with probability 2/3, and the outcome
/// is follow-up earnings in dollars with noise SD 15000. The CATE is
/// `1500 + 150 (edu − 12) − 30 prior`.
pub fn synthetic_training_sample(n: usize, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let prior = 40.0 * u * u;
        let edu = 7.0 + 11.0 * rng.random::<f64>();
        let t = u8::from(rng.random::<f64>() < 2.0 / 3.0);
        let e: f64 = rng.sample(StandardNormal);
        let base = 1000.0 * (5.0 + 0.8 * edu + 0.5 * prior);
        let cate = 1500.0 + 150.0 * (edu - 12.0) - 30.0 * prior;
        y.push(base + f64::from(t) * cate + 15_000.0 * e);
        d.push(t);
        x.extend_from_slice(&[prior, edu]);
    }
    Sample::with_inferred_domain(y, d, PointSet::new(2, x)?)
}

/// The catalog as a Markdown table.
pub fn catalog_markdown() -> String {
    let mut out = String::from(
        "| Model | F0 | F | μ0(x, d) | p0(x) | σ | target | knots (t/c/p) |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for id in ModelId::ALL {
        let g = make_dgp(id);
        let target = match g.target {
            Target::WelfareKnownF => "welfare, known f".to_string(),
            Target::WelfareSample => "welfare, sample mean".to_string(),
            Target::ValueKnownF => format!("value ×{}, known f", g.scale),
        };
        out.push_str(&format!(
            "| {} | U{} | U{} | {} | {} | {} | {} | {}/{}/{} |\n",
            g.id,
            g.f0,
            g.f,
            g.mu0_text.replace('|', "\\|"),
            g.p0_text.replace('|', "\\|"),
            g.noise_sd,
            target,
            g.treated_knots,
            g.control_knots,
            g.propensity_knots
        ));
    }
    out.push_str("\nM4 and M11 read the term `sin x1 x2` as sin(x1)·x2.\n");
    out
}
