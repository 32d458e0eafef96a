//! Samples, rectangles, target distributions and CSV ingestion.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::density::Kde;
use crate::{Error, Result};

/// An axis-aligned box `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidRect(format!(
                "bounds must have equal nonzero length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidRect(format!(
                    "dimension {j}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn unit(dim: usize) -> Result<Self> {
        Self::cube(0.0, 1.0, dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Inclusive containment.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.lower()) && self.contains(other.upper())
    }

    /// Clamps `x` into the box in place; returns `true` if any coordinate moved.
    pub fn clamp_in_place(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            if *v < *lo {
                *v = *lo;
                moved = true;
            } else if *v > *hi {
                *v = *hi;
                moved = true;
            }
        }
        moved
    }

    /// Maps a point of the unit cube affinely into the box.
    pub fn map_from_unit(&self, u: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.lower[j] + (self.upper[j] - self.lower[j]) * u[j];
        }
    }

    /// Intersection of two boxes, `None` when empty or degenerate in any dimension.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(a, b)| a.min(*b))
            .collect();
        Rect::new(lower, upper).ok()
    }

    /// Componentwise bounding box of a point set (may be degenerate, so returned raw).
    fn bounding(points: &PointSet, rows: impl Iterator<Item = usize>) -> Option<(Vec<f64>, Vec<f64>)> {
        let dim = points.dim();
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for i in rows {
            any = true;
            for (j, v) in points.row(i).iter().enumerate() {
                lower[j] = lower[j].min(*v);
                upper[j] = upper[j].max(*v);
            }
        }
        any.then_some((lower, upper))
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect();
        write!(f, "{}", parts.join(" x "))
    }
}

/// Row-major `n × dim` matrix of points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values cannot be split into rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows have differing lengths".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        PointSet {
            dim: self.dim,
            data,
        }
    }
}

/// Training data `{(Y_i, D_i, X_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    d: Vec<u8>,
    x: PointSet,
    domain: Rect,
}

impl Sample {
    /// Validates lengths, the 0/1 coding of `d`, the presence of both arms and
    /// that every covariate row lies inside `domain`.
    pub fn new(y: Vec<f64>, d: Vec<u8>, x: PointSet, domain: Rect) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidSample("sample is empty".into()));
        }
        if d.len() != n || x.len() != n {
            return Err(Error::Shape(format!(
                "y has {n} rows, d has {}, x has {}",
                d.len(),
                x.len()
            )));
        }
        if x.dim() != domain.dim() {
            return Err(Error::Shape(format!(
                "covariates have dimension {} but the domain has {}",
                x.dim(),
                domain.dim()
            )));
        }
        if let Some(i) = d.iter().position(|&v| v > 1) {
            return Err(Error::InvalidSample(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                d[i]
            )));
        }
        let treated = d.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::DegenerateSample(format!(
                "{treated} treated and {} control rows; both arms are required",
                n - treated
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("outcome at row {i} is not finite")));
        }
        if let Some(i) = (0..n).find(|&i| !domain.contains(x.row(i))) {
            return Err(Error::InvalidSample(format!(
                "covariate row {i} {:?} lies outside the domain {domain}",
                x.row(i)
            )));
        }
        Ok(Self { y, d, x, domain })
    }

    /// Builds a sample whose domain is the componentwise covariate min/max.
    pub fn with_inferred_domain(y: Vec<f64>, d: Vec<u8>, x: PointSet) -> Result<Self> {
        let (lower, upper) = Rect::bounding(&x, 0..x.len())
            .ok_or_else(|| Error::InvalidSample("sample is empty".into()))?;
        let domain = Rect::new(lower, upper).map_err(|e| {
            Error::DegenerateSample(format!("cannot infer a domain from the covariates: {e}"))
        })?;
        Self::new(y, d, x, domain)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    pub fn x(&self) -> &PointSet {
        &self.x
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn treated_count(&self) -> usize {
        self.d.iter().filter(|&&v| v == 1).count()
    }

    pub fn control_count(&self) -> usize {
        self.n() - self.treated_count()
    }

    /// Rows selected by `indices`, with the given domain.
    pub fn subset(&self, indices: &[usize], domain: Rect) -> Result<Sample> {
        Sample::new(
            indices.iter().map(|&i| self.y[i]).collect(),
            indices.iter().map(|&i| self.d[i]).collect(),
            self.x.select(indices),
            domain,
        )
    }

    /// Subtracts `cost` from every treated outcome.
    pub fn subtract_treated_cost(&self, cost: f64) -> Sample {
        let y = self
            .y
            .iter()
            .zip(&self.d)
            .map(|(y, d)| if *d == 1 { y - cost } else { *y })
            .collect();
        Sample {
            y,
            ..self.clone()
        }
    }
}

/// Which family a [`TargetDistribution`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Uniform,
    Kde,
    External,
}

type Evaluable = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Pdf {
    Uniform(f64),
    Kde(Arc<Kde>),
    External(Evaluable),
}

/// Covariate density `f` of the target population, supported on a rectangle.
#[derive(Clone)]
pub struct TargetDistribution {
    support: Rect,
    pdf: Pdf,
}

impl TargetDistribution {
    pub fn uniform(support: Rect) -> Self {
        let value = 1.0 / support.volume();
        Self {
            support,
            pdf: Pdf::Uniform(value),
        }
    }

    /// A kernel density estimate restricted to `support`.
    pub fn kde(kde: Kde, support: Rect) -> Result<Self> {
        if kde.dim() != support.dim() {
            return Err(Error::Shape(format!(
                "kde has dimension {} but the support has {}",
                kde.dim(),
                support.dim()
            )));
        }
        Ok(Self {
            support,
            pdf: Pdf::Kde(Arc::new(kde)),
        })
    }

    /// An arbitrary density. Negative values are clipped to zero on evaluation.
    pub fn external(support: Rect, pdf: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            support,
            pdf: Pdf::External(Arc::new(pdf)),
        }
    }

    pub fn support(&self) -> &Rect {
        &self.support
    }

    pub fn kind(&self) -> DensityKind {
        match self.pdf {
            Pdf::Uniform(_) => DensityKind::Uniform,
            Pdf::Kde(_) => DensityKind::Kde,
            Pdf::External(_) => DensityKind::External,
        }
    }

    /// Density at `x`; zero outside the support.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        if !self.support.contains(x) {
            return 0.0;
        }
        match &self.pdf {
            Pdf::Uniform(v) => *v,
            Pdf::Kde(k) => k.pdf(x),
            Pdf::External(f) => f(x).max(0.0),
        }
    }
}

impl fmt::Debug for TargetDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDistribution")
            .field("support", &self.support)
            .field("kind", &self.kind())
            .finish()
    }
}

/// The weight `v₀` of a value functional.
#[derive(Clone)]
pub struct ValueWeight {
    v0: Evaluable,
    label: String,
}

impl ValueWeight {
    pub fn new(label: impl Into<String>, v0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            v0: Arc::new(v0),
            label: label.into(),
        }
    }

    /// `v₀ ≡ c`; `c = 1` gives the treated-population share.
    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant({c})"), move |_| c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.v0)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for ValueWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueWeight").field("label", &self.label).finish()
    }
}

/// Reads a sample from a headed CSV file.
///
/// With `domain = None` the domain becomes the componentwise covariate
/// min/max.
pub fn read_csv_sample(
    path: impl AsRef<Path>,
    outcome_col: &str,
    treat_col: &str,
    covar_cols: &[&str],
    domain: Option<Rect>,
) -> Result<Sample> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_sample_from(file, outcome_col, treat_col, covar_cols, domain)
}

/// [`read_csv_sample`] over any reader.
pub fn read_csv_sample_from(
    reader: impl std::io::Read,
    outcome_col: &str,
    treat_col: &str,
    covar_cols: &[&str],
    domain: Option<Rect>,
) -> Result<Sample> {
    if covar_cols.is_empty() {
        return Err(Error::Schema("at least one covariate column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "column '{name}' not found; available: {}",
                    headers.iter().collect::<Vec<_>>().join(", ")
                ))
            })
    };
    let y_idx = find(outcome_col)?;
    let d_idx = find(treat_col)?;
    let x_idx = covar_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        y.push(cell(y_idx, outcome_col)?);
        let t = cell(d_idx, treat_col)?;
        if t == 0.0 {
            d.push(0);
        } else if t == 1.0 {
            d.push(1);
        } else {
            return Err(Error::Parse {
                row,
                column: treat_col.to_string(),
                message: format!("treatment must be 0 or 1, got {t}"),
            });
        }
        for (&idx, name) in x_idx.iter().zip(covar_cols) {
            x.push(cell(idx, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::DegenerateSample("the file has no data rows".into()));
    }
    let treated = d.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == d.len() {
        return Err(Error::DegenerateSample(format!(
            "{treated} treated and {} control rows; both arms are required",
            d.len() - treated
        )));
    }
    let x = PointSet::new(covar_cols.len(), x)?;
    match domain {
        Some(domain) => Sample::new(y, d, x, domain),
        None => Sample::with_inferred_domain(y, d, x),
    }
}

/// Writes a sample as CSV with full round-trip precision.
pub fn write_csv_sample(
    sample: &Sample,
    writer: impl std::io::Write,
    outcome_col: &str,
    treat_col: &str,
    covar_cols: &[&str],
) -> Result<()> {
    if covar_cols.len() != sample.dim() {
        return Err(Error::Shape(format!(
            "{} covariate names for dimension {}",
            covar_cols.len(),
            sample.dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![outcome_col, treat_col];
    header.extend_from_slice(covar_cols);
    w.write_record(&header)?;
    for i in 0..sample.n() {
        let mut rec = vec![format!("{:?}", sample.y[i]), sample.d[i].to_string()];
        rec.extend(sample.x.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Restricts the sample to the intersection of the treated and control
/// bounding boxes, in one pass.
///
/// The boxes are taken from the input rows only. Iterating to a fixed point
/// is not an option: with continuous covariates each pass shrinks one arm's
/// box strictly inside the other, and the loop ends with an empty arm. A
/// second call is therefore the identity only when both arms still reach the
/// edges of the intersection (for instance with discrete covariates). Returns
/// the trimmed sample (domain reset to the intersection) and the kept original
/// row indices.
pub fn trim_common_support(sample: &Sample) -> Result<(Sample, Vec<usize>)> {
    let x = sample.x();
    let group_box = |arm: u8| Rect::bounding(x, (0..sample.n()).filter(|&i| sample.d[i] == arm));
    let (Some(treated), Some(control)) = (group_box(1), group_box(0)) else {
        return Err(Error::DegenerateSupport(
            "both treatment arms need at least one observation".into(),
        ));
    };
    let lower: Vec<f64> = treated.0.iter().zip(&control.0).map(|(a, b)| a.max(*b)).collect();
    let upper: Vec<f64> = treated.1.iter().zip(&control.1).map(|(a, b)| a.min(*b)).collect();
    if let Some(j) = (0..lower.len()).find(|&j| lower[j] >= upper[j]) {
        return Err(Error::DegenerateSupport(format!(
            "treated and control ranges do not overlap in dimension {j} \
             (treated [{}, {}], control [{}, {}])",
            treated.0[j], treated.1[j], control.0[j], control.1[j]
        )));
    }
    let common = Rect::new(lower, upper)?;
    let kept: Vec<usize> = (0..sample.n()).filter(|&i| common.contains(x.row(i))).collect();
    let trimmed = sample.subset(&kept, common)?;
    Ok((trimmed, kept))
}
