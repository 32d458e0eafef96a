//! Clamped B-spline bases on intervals and their tensor products on rectangles.
//!
//! Tensor-product basis functions are ordered with dimension 1 varying
//! fastest: the function `ψ_{i_1} ⊗ … ⊗ ψ_{i_d}` has flat index
//! `i_1 + K_1 (i_2 + K_2 (i_3 + …))`. Coefficient vectors, design matrices and
//! derivative vectors all use this order.

use crate::data::Rect;
use crate::{Error, Result};

/// Where interior knots go.
#[derive(Debug, Clone, Copy)]
pub enum KnotPlacement<'a> {
    Uniform,
    /// Empirical quantiles of the given data.
    Quantile(&'a [f64]),
}

/// A clamped knot vector: the end knots are repeated `degree + 1` times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidKnots("knots must be finite and nondecreasing".into()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first >= last {
            return Err(Error::InvalidKnots(format!("empty knot range [{first}, {last}]")));
        }
        let m = knots.len();
        let clamped_left = knots[..=degree].iter().all(|&t| t == first) && knots[degree + 1] > first;
        let clamped_right =
            knots[m - degree - 1..].iter().all(|&t| t == last) && knots[m - degree - 2] < last;
        if !(clamped_left && clamped_right) {
            return Err(Error::InvalidKnots(format!(
                "end knots must each be repeated exactly {} times",
                degree + 1
            )));
        }
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `#interior + degree + 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index `i` of the knot span `[t_i, t_{i+1})` containing `x`; the right
    /// endpoint belongs to the last nonempty span.
    fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.num_basis() - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        if x <= self.knots[p] {
            return p;
        }
        // largest i in [p, last] with t_i <= x
        let slice = &self.knots[p..=last];
        p + slice.partition_point(|&t| t <= x) - 1
    }

    /// The `degree + 1` possibly nonzero basis values at `x` (which must lie in
    /// the knot range) written to `out`; returns the index of the first one.
    ///
    /// Triangular form of the Cox–de Boor recursion.
    pub fn eval_nonzero(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let span = self.find_span(x);
        let t = &self.knots;
        out[0] = 1.0;
        // left[j] = x - t_{span+1-j}, right[j] = t_{span+j} - x
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        span - p
    }

    /// All `K` basis values at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !(self.lower() <= x && x <= self.upper()) {
            return Err(Error::OutsideDomain {
                x,
                lower: self.lower(),
                upper: self.upper(),
            });
        }
        let mut local = [0.0; MAX_DEGREE + 1];
        let start = self.eval_nonzero(x, &mut local);
        let mut values = vec![0.0; self.num_basis()];
        values[start..=start + self.degree].copy_from_slice(&local[..=self.degree]);
        Ok(values)
    }
}

/// Highest supported spline degree.
pub const MAX_DEGREE: usize = 8;

/// Builds a clamped knot vector on `[lower, upper]` with `interior` interior knots.
pub fn make_knots(
    lower: f64,
    upper: f64,
    degree: usize,
    interior: usize,
    placement: KnotPlacement<'_>,
) -> Result<KnotVector> {
    if degree > MAX_DEGREE {
        return Err(Error::InvalidKnots(format!(
            "degree {degree} exceeds the supported maximum {MAX_DEGREE}"
        )));
    }
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(Error::InvalidKnots(format!("degenerate interval [{lower}, {upper}]")));
    }
    let inner: Vec<f64> = match placement {
        KnotPlacement::Uniform => {
            let step = (upper - lower) / (interior + 1) as f64;
            (1..=interior).map(|j| lower + step * j as f64).collect()
        }
        KnotPlacement::Quantile(data) => {
            if interior == 0 {
                Vec::new()
            } else {
                let mut sorted: Vec<f64> = data.iter().copied().filter(|v| v.is_finite()).collect();
                sorted.sort_by(f64::total_cmp);
                let mut distinct = sorted.clone();
                distinct.dedup();
                if distinct.len() < interior + 2 {
                    return Err(Error::Placement(format!(
                        "{interior} interior knots need at least {} distinct data points, got {}",
                        interior + 2,
                        distinct.len()
                    )));
                }
                let q: Vec<f64> = (1..=interior)
                    .map(|j| quantile_sorted(&sorted, j as f64 / (interior + 1) as f64))
                    .collect();
                if q.windows(2).any(|w| w[0] >= w[1]) || q[0] <= lower || q[interior - 1] >= upper {
                    return Err(Error::Placement(
                        "data quantiles do not give strictly increasing interior knots".into(),
                    ));
                }
                q
            }
        }
    };
    let mut knots = vec![lower; degree + 1];
    knots.extend(inner);
    knots.extend(std::iter::repeat_n(upper, degree + 1));
    KnotVector::new(knots, degree)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tensor-product B-spline basis on a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    knots: Vec<KnotVector>,
    domain: Rect,
    strides: Vec<usize>,
    size: usize,
}

impl BasisSpec {
    /// Uniform knots in every dimension.
    pub fn uniform(domain: &Rect, degree: usize, interior: usize) -> Result<Self> {
        let dim = domain.dim();
        Self::uniform_per_dim(domain, &vec![degree; dim], &vec![interior; dim])
    }

    pub fn uniform_per_dim(domain: &Rect, degree: &[usize], interior: &[usize]) -> Result<Self> {
        if degree.len() != domain.dim() || interior.len() != domain.dim() {
            return Err(Error::Shape(format!(
                "domain has dimension {} but {} degrees and {} knot counts were given",
                domain.dim(),
                degree.len(),
                interior.len()
            )));
        }
        let knots = (0..domain.dim())
            .map(|j| {
                make_knots(
                    domain.lower()[j],
                    domain.upper()[j],
                    degree[j],
                    interior[j],
                    KnotPlacement::Uniform,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_knots(knots)
    }

    /// Basis built from explicit per-dimension knot vectors; the domain is
    /// their product of knot ranges.
    pub fn from_knots(knots: Vec<KnotVector>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Shape("a basis needs at least one dimension".into()));
        }
        let domain = Rect::new(
            knots.iter().map(KnotVector::lower).collect(),
            knots.iter().map(KnotVector::upper).collect(),
        )?;
        let mut strides = Vec::with_capacity(knots.len());
        let mut size = 1;
        for kv in &knots {
            strides.push(size);
            size *= kv.num_basis();
        }
        Ok(Self {
            knots,
            domain,
            strides,
            size,
        })
    }

    /// The single constant function `ψ ≡ 1` on `domain`.
    pub fn constant(domain: &Rect) -> Result<Self> {
        Self::uniform(domain, 0, 0)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    /// Total basis dimension `K = ∏_j K_j`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn knot_vectors(&self) -> &[KnotVector] {
        &self.knots
    }

    /// Dense basis vector at `x`, which must lie inside the domain.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has dimension {} but the basis has {}",
                x.len(),
                self.dim()
            )));
        }
        for (j, (&v, kv)) in x.iter().zip(&self.knots).enumerate() {
            if !(kv.lower() <= v && v <= kv.upper()) {
                let _ = j;
                return Err(Error::OutsideDomain {
                    x: v,
                    lower: kv.lower(),
                    upper: kv.upper(),
                });
            }
        }
        let mut local = LocalBasis::new(self);
        local.set(self, x);
        let mut out = vec![0.0; self.size];
        local.for_each(|k, v| out[k] = v);
        Ok(out)
    }

    /// Dense basis vector after clamping `x` into the domain; the flag reports
    /// whether clamping happened.
    pub fn eval_clamped(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let mut local = LocalBasis::new(self);
        let flag = local.set(self, x);
        let mut out = vec![0.0; self.size];
        local.for_each(|k, v| out[k] = v);
        (out, flag)
    }
}

/// Scratch space holding the nonzero per-dimension basis values at one point.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    starts: Vec<usize>,
    orders: Vec<usize>,
    values: Vec<[f64; MAX_DEGREE + 1]>,
    strides: Vec<usize>,
    scratch: Vec<f64>,
}

impl LocalBasis {
    pub fn new(spec: &BasisSpec) -> Self {
        let dim = spec.dim();
        Self {
            starts: vec![0; dim],
            orders: spec.knots.iter().map(|kv| kv.degree() + 1).collect(),
            values: vec![[0.0; MAX_DEGREE + 1]; dim],
            strides: spec.strides.clone(),
            scratch: vec![0.0; dim],
        }
    }

    /// Evaluates at `x` clamped into the domain; returns whether clamping occurred.
    pub fn set(&mut self, spec: &BasisSpec, x: &[f64]) -> bool {
        self.scratch.copy_from_slice(x);
        let clamped = spec.domain.clamp_in_place(&mut self.scratch);
        for (j, kv) in spec.knots.iter().enumerate() {
            self.starts[j] = kv.eval_nonzero(self.scratch[j], &mut self.values[j]);
        }
        clamped
    }

    /// Visits every tensor-product entry of the local support as `(flat index, value)`.
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match self.starts.len() {
            1 => {
                for a in 0..self.orders[0] {
                    f(self.starts[0] + a, self.values[0][a]);
                }
            }
            2 => {
                for b in 0..self.orders[1] {
                    let vb = self.values[1][b];
                    let base = (self.starts[1] + b) * self.strides[1] + self.starts[0];
                    for a in 0..self.orders[0] {
                        f(base + a, self.values[0][a] * vb);
                    }
                }
            }
            dim => {
                let mut idx = vec![0usize; dim];
                loop {
                    let mut flat = 0;
                    let mut value = 1.0;
                    for j in 0..dim {
                        flat += (self.starts[j] + idx[j]) * self.strides[j];
                        value *= self.values[j][idx[j]];
                    }
                    f(flat, value);
                    let mut j = 0;
                    loop {
                        idx[j] += 1;
                        if idx[j] < self.orders[j] {
                            break;
                        }
                        idx[j] = 0;
                        j += 1;
                        if j == dim {
                            return;
                        }
                    }
                }
            }
        }
    }

    /// Inner product of the basis vector with `coef`.
    pub fn dot(&self, coef: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each(|k, v| acc += coef[k] * v);
        acc
    }
}
