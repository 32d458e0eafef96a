//! Sobol low-discrepancy points and quasi-Monte Carlo integration on
//! rectangles.
//!
//! Points come from the unscrambled Sobol sequence in Gray-code order with
//! 32-bit direction numbers from the Joe–Kuo `new-joe-kuo-6.21201` table. The
//! all-zeros first point is skipped, so the first point emitted is
//! `(0.5, …, 0.5)`.

use crate::data::{PointSet, Rect, TargetDistribution};
use crate::{Error, Result};

/// Highest supported dimension.
pub const MAX_DIM: usize = 16;

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=16; dimension 1 is van der Corput.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (31 - i);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (31 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

/// Incremental Sobol generator.
#[derive(Debug, Clone)]
pub struct SobolStream {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolStream {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension { dim, max: MAX_DIM });
        }
        Ok(Self {
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.state.len()
    }

    /// Number of points emitted so far.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Writes the next point into `out`.
    ///
    /// # Panics
    ///
    /// After `2^32 - 1` points the sequence is exhausted.
    pub fn next_into(&mut self, out: &mut [f64]) {
        let c = (!self.index).trailing_zeros() as usize;
        assert!(c < BITS, "Sobol sequence exhausted");
        self.index += 1;
        for (j, x) in self.state.iter_mut().enumerate() {
            *x ^= self.directions[j][c];
            out[j] = *x as f64 / 4_294_967_296.0;
        }
    }
}

/// The first `count` Sobol points in `(0,1)^dim`.
pub fn sobol_points(dim: usize, count: usize) -> Result<PointSet> {
    let mut stream = SobolStream::new(dim)?;
    let mut data = vec![0.0; dim * count];
    for chunk in data.chunks_exact_mut(dim) {
        stream.next_into(chunk);
    }
    PointSet::new(dim, data)
}

/// Visits the first `count` Sobol points mapped affinely into `rect`.
pub fn for_each_point(rect: &Rect, count: usize, mut f: impl FnMut(&[f64])) -> Result<()> {
    let dim = rect.dim();
    let mut stream = SobolStream::new(dim)?;
    let mut u = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    for _ in 0..count {
        stream.next_into(&mut u);
        rect.map_from_unit(&u, &mut x);
        f(&x);
    }
    Ok(())
}

/// `volume(rect) × mean` of `f` over `count` Sobol points mapped into `rect`.
pub fn integrate_rect(mut f: impl FnMut(&[f64]) -> f64, rect: &Rect, count: usize) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidArgument("integration needs at least one point".into()));
    }
    let mut sum = 0.0;
    let mut bad = None;
    for_each_point(rect, count, |x| {
        if bad.is_some() {
            return;
        }
        let v = f(x);
        if v.is_finite() {
            sum += v;
        } else {
            bad = Some((x.to_vec(), v));
        }
    })?;
    if let Some((point, value)) = bad {
        return Err(Error::Integrand { point, value });
    }
    Ok(rect.volume() * sum / count as f64)
}

/// `∫ f · pdf` over the support of `dist`.
pub fn expect_under(
    mut f: impl FnMut(&[f64]) -> f64,
    dist: &TargetDistribution,
    count: usize,
) -> Result<f64> {
    integrate_rect(|x| f(x) * dist.pdf(x), dist.support(), count)
}
