//! Product Gaussian kernel density estimation with a Silverman-style
//! diagonal bandwidth.

use crate::data::PointSet;
use crate::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A fitted kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    points: PointSet,
    bandwidths: Vec<f64>,
    scale: f64,
    norm: f64,
}

/// Fits a KDE with bandwidths `h_j = scale · 1.06 · sd_j · n^{-1/(4+dim)}`.
pub fn fit_kde(x: &PointSet, scale: f64) -> Result<Kde> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth scale must be positive, got {scale}"
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a kernel density estimate needs at least 2 points, got {n}"
        )));
    }
    let dim = x.dim();
    let factor = scale * 1.06 * (n as f64).powf(-1.0 / (4.0 + dim as f64));
    let mut bandwidths = Vec::with_capacity(dim);
    for j in 0..dim {
        let col = x.column(j);
        let sd = sample_sd(&col);
        if !(sd > 0.0) {
            return Err(Error::Bandwidth { dim: j });
        }
        bandwidths.push(factor * sd);
    }
    Kde::new(x.clone(), bandwidths, scale)
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|a| (a - mean) * (a - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

impl Kde {
    /// A KDE with explicit bandwidths.
    pub fn new(points: PointSet, bandwidths: Vec<f64>, scale: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("a KDE needs support points".into()));
        }
        if bandwidths.len() != points.dim() {
            return Err(Error::Shape(format!(
                "{} bandwidths for {}-dimensional points",
                bandwidths.len(),
                points.dim()
            )));
        }
        if let Some(j) = bandwidths.iter().position(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Bandwidth { dim: j });
        }
        let norm = bandwidths
            .iter()
            .map(|h| INV_SQRT_2PI / h)
            .product::<f64>()
            / points.len() as f64;
        Ok(Self {
            points,
            bandwidths,
            scale,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    /// Density at `x`: the mean over support points of the product kernel.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for p in self.points.rows() {
            let mut q = 0.0;
            for ((xi, pi), h) in x.iter().zip(p).zip(&self.bandwidths) {
                let z = (xi - pi) / h;
                q += z * z;
            }
            sum += (-0.5 * q).exp();
        }
        sum * self.norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_d(v: &[f64]) -> PointSet {
        PointSet::new(1, v.to_vec()).unwrap()
    }

    #[test]
    fn two_point_bandwidth_and_symmetry() {
        let kde = fit_kde(&one_d(&[0.0, 1.0]), 1.0).unwrap();
        let sd = 0.5f64.sqrt();
        assert_relative_eq!(kde.bandwidths()[0], 1.06 * sd * 2f64.powf(-0.2), max_relative = 1e-14);
        for t in [0.1, 0.3, 0.77, 2.0] {
            assert_relative_eq!(kde.pdf(&[0.5 - t]), kde.pdf(&[0.5 + t]), max_relative = 1e-12);
        }
    }

    #[test]
    fn standard_normal_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let kde = fit_kde(&one_d(&v), 1.0).unwrap();
        assert!((kde.pdf(&[0.0]) - 0.398_942_3).abs() < 0.03);
    }

    #[test]
    fn scale_is_linear() {
        let x = one_d(&[0.1, 0.4, 0.45, 0.9, 1.3]);
        let a = fit_kde(&x, 1.0).unwrap();
        let b = fit_kde(&x, 3.0).unwrap();
        assert_relative_eq!(b.bandwidths()[0], 3.0 * a.bandwidths()[0], max_relative = 1e-14);
    }

    #[test]
    fn kernel_peak_and_tail() {
        let kde = Kde::new(one_d(&[0.3]), vec![0.2], 1.0).unwrap();
        assert_relative_eq!(kde.pdf(&[0.3]), INV_SQRT_2PI / 0.2, max_relative = 1e-14);
        assert!(kde.pdf(&[0.3 + 11.0 * 0.2]) < 1e-20);
    }

    #[test]
    fn zero_variance_is_rejected() {
        let x = PointSet::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(fit_kde(&x, 1.0), Err(Error::Bandwidth { dim: 1 })));
    }

    #[test]
    fn integrates_to_one() {
        let x = one_d(&[0.0, 0.2, 0.25, 0.7, 1.0, 1.1]);
        let kde = fit_kde(&x, 1.0).unwrap();
        let h = kde.bandwidths()[0];
        let (lo, hi) = (-10.0 * h, 1.1 + 10.0 * h);
        let m = 200_000;
        let step = (hi - lo) / m as f64;
        let total: f64 = (0..m).map(|i| kde.pdf(&[lo + (i as f64 + 0.5) * step])).sum::<f64>() * step;
        assert!((total - 1.0).abs() < 5e-3);
    }

    #[test]
    fn translation_equivariant() {
        let rows = vec![vec![0.1, 0.2], vec![0.5, -0.3], vec![0.9, 0.4]];
        let shift = [3.25, -1.5];
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r[0] + shift[0], r[1] + shift[1]])
            .collect();
        let a = Kde::new(PointSet::from_rows(&rows).unwrap(), vec![0.3, 0.2], 1.0).unwrap();
        let b = Kde::new(PointSet::from_rows(&moved).unwrap(), vec![0.3, 0.2], 1.0).unwrap();
        let q = [0.4, 0.1];
        let qs = [q[0] + shift[0], q[1] + shift[1]];
        assert_relative_eq!(a.pdf(&q), b.pdf(&qs), max_relative = 1e-12);
    }
}
