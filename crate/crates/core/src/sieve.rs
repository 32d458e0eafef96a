//! Least-squares sieve regression of the outcome on treatment-interacted
//! B-spline bases.
//!
//! The model is `Y = D ψ₁(X)'β₁ + (1 − D) ψ₀(X)'β₀ + u`. Its design is block
//! diagonal across the two arms, so each arm is fitted separately by
//! Householder QR; the Gram matrix `B'B` is `diag(B₁'B₁, B₀'B₀)`. Coefficient
//! and derivative vectors are stacked as `(β₁, β₀)`.

use nalgebra::{DMatrix, DVector};

use crate::bspline::{BasisSpec, LocalBasis};
use crate::data::{PointSet, Rect, Sample};
use crate::{Error, Result};

/// Relative singular-value tolerance for the rank check.
pub const RANK_TOL: f64 = 1e-10;

/// Default number of interior knots for an arm of `n_arm` observations in
/// `dim` dimensions: `max(1, round(n_arm^{1/(6+dim)})) + 1`.
pub fn default_interior_knots(n_arm: usize, dim: usize) -> usize {
    let r = (n_arm as f64).powf(1.0 / (6.0 + dim as f64)).round() as usize;
    r.max(1) + 1
}

/// Cubic basis on `domain` with the default knot count.
pub fn default_spec(domain: &Rect, n_arm: usize) -> Result<BasisSpec> {
    BasisSpec::uniform(
        domain,
        crate::defaults::DEGREE,
        default_interior_knots(n_arm, domain.dim()),
    )
}

/// A fitted outcome sieve.
#[derive(Debug, Clone)]
pub struct SieveFit {
    beta1: Vec<f64>,
    beta0: Vec<f64>,
    spec1: BasisSpec,
    spec0: BasisSpec,
    residuals: Vec<f64>,
    gram: DMatrix<f64>,
    x: PointSet,
    d: Vec<u8>,
}

/// Least-squares coefficients of one arm together with its Gram block.
struct ArmFit {
    beta: Vec<f64>,
    fitted: Vec<f64>,
    gram: DMatrix<f64>,
}

fn design(x: &PointSet, rows: &[usize], spec: &BasisSpec) -> Result<DMatrix<f64>> {
    if x.dim() != spec.dim() {
        return Err(Error::Shape(format!(
            "covariates have dimension {} but the basis has {}",
            x.dim(),
            spec.dim()
        )));
    }
    let mut b = DMatrix::zeros(rows.len(), spec.len());
    let mut local = LocalBasis::new(spec);
    for (r, &i) in rows.iter().enumerate() {
        local.set(spec, x.row(i));
        local.for_each(|k, v| b[(r, k)] = v);
    }
    Ok(b)
}

fn fit_arm(
    x: &PointSet,
    rows: &[usize],
    y: &[f64],
    spec: &BasisSpec,
    group: &'static str,
) -> Result<ArmFit> {
    let k = spec.len();
    let m = rows.len();
    if k >= m {
        return Err(Error::Dimension { group, k, n: m });
    }
    let b = design(x, rows, spec)?;
    let gram = b.tr_mul(&b);
    let qr = b.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(smallest > RANK_TOL * largest) {
        return Err(Error::SingularDesign {
            group,
            smallest,
            largest,
        });
    }
    let mut rhs = DVector::from_iterator(m, rows.iter().map(|&i| y[i]));
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or(Error::SingularDesign {
            group,
            smallest,
            largest,
        })?;
    let fitted = (&b * &beta).iter().copied().collect();
    Ok(ArmFit {
        beta: beta.iter().copied().collect(),
        fitted,
        gram,
    })
}

/// Fits the outcome sieve with basis `spec1` for the treated and `spec0` for
/// the controls.
pub fn fit_sieve(sample: &Sample, spec1: &BasisSpec, spec0: &BasisSpec) -> Result<SieveFit> {
    let d = sample.d();
    let treated: Vec<usize> = (0..sample.n()).filter(|&i| d[i] == 1).collect();
    let control: Vec<usize> = (0..sample.n()).filter(|&i| d[i] == 0).collect();
    let arm1 = fit_arm(sample.x(), &treated, sample.y(), spec1, "treated")?;
    let arm0 = fit_arm(sample.x(), &control, sample.y(), spec0, "control")?;

    let mut residuals = vec![0.0; sample.n()];
    for (&i, f) in treated.iter().zip(&arm1.fitted) {
        residuals[i] = sample.y()[i] - f;
    }
    for (&i, f) in control.iter().zip(&arm0.fitted) {
        residuals[i] = sample.y()[i] - f;
    }
    let (k1, k0) = (spec1.len(), spec0.len());
    let mut gram = DMatrix::zeros(k1 + k0, k1 + k0);
    gram.view_mut((0, 0), (k1, k1)).copy_from(&arm1.gram);
    gram.view_mut((k1, k1), (k0, k0)).copy_from(&arm0.gram);
    Ok(SieveFit {
        beta1: arm1.beta,
        beta0: arm0.beta,
        spec1: spec1.clone(),
        spec0: spec0.clone(),
        residuals,
        gram,
        x: sample.x().clone(),
        d: d.to_vec(),
    })
}

impl SieveFit {
    pub fn beta1(&self) -> &[f64] {
        &self.beta1
    }

    pub fn beta0(&self) -> &[f64] {
        &self.beta0
    }

    pub fn spec1(&self) -> &BasisSpec {
        &self.spec1
    }

    pub fn spec0(&self) -> &BasisSpec {
        &self.spec0
    }

    /// Regression residuals `û_i = y_i − μ̂(x_i, d_i)`.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// The `(K₁+K₀)²` Gram matrix `B'B`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// `K₁ + K₀`.
    pub fn num_coef(&self) -> usize {
        self.beta1.len() + self.beta0.len()
    }

    pub fn x(&self) -> &PointSet {
        &self.x
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    /// Row `i` of the interacted design: `(d ψ₁(x_i), (1 − d) ψ₀(x_i))`.
    pub fn design_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_coef()];
        self.add_design_row(i, |k, v| row[k] = v);
        row
    }

    /// Visits the nonzero entries of design row `i`.
    fn add_design_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let x = self.x.row(i);
        if self.d[i] == 1 {
            let mut local = LocalBasis::new(&self.spec1);
            local.set(&self.spec1, x);
            local.for_each(f);
        } else {
            let k1 = self.beta1.len();
            let mut local = LocalBasis::new(&self.spec0);
            local.set(&self.spec0, x);
            local.for_each(|k, v| f(k1 + k, v));
        }
    }

    /// A reusable evaluator of `μ̂` and `ĥ`.
    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            fit: self,
            local1: LocalBasis::new(&self.spec1),
            local0: LocalBasis::new(&self.spec0),
        }
    }

    /// `μ̂(x, d)`, clamping `x` into the basis domain.
    pub fn predict_mu(&self, x: &[f64], d: u8) -> f64 {
        self.evaluator().mu(x, d).0
    }

    /// `μ̂(x, d)` and whether `x` had to be clamped.
    pub fn predict_mu_flagged(&self, x: &[f64], d: u8) -> (f64, bool) {
        self.evaluator().mu(x, d)
    }

    /// `ĥ(x) = μ̂(x, 1) − μ̂(x, 0)`.
    pub fn cate(&self, x: &[f64]) -> f64 {
        self.evaluator().cate(x)
    }

    /// `(B'B)⁻¹`, block by block.
    pub fn gram_inverse(&self) -> Result<DMatrix<f64>> {
        let k1 = self.beta1.len();
        let k0 = self.beta0.len();
        let mut inv = DMatrix::zeros(k1 + k0, k1 + k0);
        for (off, k, group) in [(0, k1, "treated"), (k1, k0, "control")] {
            let block = self.gram.view((off, off), (k, k)).into_owned();
            let chol = block.cholesky().ok_or(Error::SingularDesign {
                group,
                smallest: 0.0,
                largest: 0.0,
            })?;
            inv.view_mut((off, off), (k, k)).copy_from(&chol.inverse());
        }
        Ok(inv)
    }
}

/// Scratch space for repeated evaluation of a fit.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    fit: &'a SieveFit,
    local1: LocalBasis,
    local0: LocalBasis,
}

impl Evaluator<'_> {
    /// `μ̂(x, d)` and the clamping flag.
    pub fn mu(&mut self, x: &[f64], d: u8) -> (f64, bool) {
        if d == 1 {
            let flag = self.local1.set(&self.fit.spec1, x);
            (self.local1.dot(&self.fit.beta1), flag)
        } else {
            let flag = self.local0.set(&self.fit.spec0, x);
            (self.local0.dot(&self.fit.beta0), flag)
        }
    }

    /// `ĥ(x)`; the per-arm basis values stay available to [`Self::visit_arms`].
    pub fn cate(&mut self, x: &[f64]) -> f64 {
        self.mu(x, 1).0 - self.mu(x, 0).0
    }

    /// Visits the nonzero entries of `(ψ₁(x), −ψ₀(x))` at the point last
    /// passed to [`Self::cate`], as stacked-coefficient indices.
    pub fn visit_arms(&self, mut f: impl FnMut(usize, f64)) {
        let k1 = self.fit.beta1.len();
        self.local1.for_each(&mut f);
        self.local0.for_each(|k, v| f(k1 + k, -v));
    }
}

/// Robust covariance `Ω̂` of `√n(β̂ − β)`; a functional with derivative vector
/// `Δ` has standard error `sqrt(Δ'Ω̂Δ / n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustCovariance {
    pub omega: DMatrix<f64>,
}

/// `Ω̂ = n (B'B)⁻¹ (Σ û_i² b_i b_i') (B'B)⁻¹` with the fit's residuals.
pub fn robust_covariance(fit: &SieveFit) -> Result<RobustCovariance> {
    sandwich(fit, fit.residuals())
}

/// The sandwich with arbitrary per-observation residuals `u`.
pub fn sandwich(fit: &SieveFit, u: &[f64]) -> Result<RobustCovariance> {
    if u.len() != fit.n() {
        return Err(Error::Shape(format!(
            "{} residuals for {} observations",
            u.len(),
            fit.n()
        )));
    }
    let k = fit.num_coef();
    let mut meat = DMatrix::zeros(k, k);
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for (i, ui) in u.iter().enumerate() {
        let w = ui * ui;
        if w == 0.0 {
            continue;
        }
        idx.clear();
        val.clear();
        fit.add_design_row(i, |a, v| {
            idx.push(a);
            val.push(v);
        });
        for (p, &a) in idx.iter().enumerate() {
            for (q, &b) in idx.iter().enumerate() {
                meat[(a, b)] += w * val[p] * val[q];
            }
        }
    }
    let inv = fit.gram_inverse()?;
    let mut omega = &inv * meat * &inv * fit.n() as f64;
    // symmetrize rounding noise
    let t = omega.transpose();
    omega = (omega + t) * 0.5;
    Ok(RobustCovariance { omega })
}

/// Linear-probability sieve fit of the treatment indicator.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    coefficients: Vec<f64>,
    spec: BasisSpec,
}

/// Least-squares regression of `D` on `ψ(X)` over the full sample.
pub fn fit_propensity(sample: &Sample, spec: &BasisSpec) -> Result<PropensityFit> {
    let rows: Vec<usize> = (0..sample.n()).collect();
    let d: Vec<f64> = sample.d().iter().map(|&v| f64::from(v)).collect();
    let arm = fit_arm(sample.x(), &rows, &d, spec, "propensity")?;
    Ok(PropensityFit {
        coefficients: arm.beta,
        spec: spec.clone(),
    })
}

impl PropensityFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// `p̂(x)`; may fall outside `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut local = LocalBasis::new(&self.spec);
        local.set(&self.spec, x);
        local.dot(&self.coefficients)
    }
}

/// Fitted propensities within this distance of 0 or 1 count as boundary
/// values; least-squares rounding turns a pure cell mean of 1 into `1 − ulp`.
pub const PROPENSITY_GUARD: f64 = 1e-9;

/// `true` where `p̂(x_i)` lies strictly inside `(0, 1)`, away from the
/// endpoints by more than [`PROPENSITY_GUARD`].
pub fn propensity_keep_mask(pfit: &PropensityFit, sample: &Sample) -> Result<Vec<bool>> {
    let mask: Vec<bool> = sample
        .x()
        .rows()
        .map(|x| {
            let p = pfit.predict(x);
            p > PROPENSITY_GUARD && p < 1.0 - PROPENSITY_GUARD
        })
        .collect();
    if mask.iter().any(|&m| m) {
        Ok(mask)
    } else {
        Err(Error::DegenerateTrim)
    }
}
