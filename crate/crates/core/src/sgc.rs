//! Skewed Gaussian with Gaussian copula: a Gaussian core `N(μ, Q⁻¹)` whose
//! standardized components are pushed through skew-normal quantile
//! transforms, keeping every marginal mean and variance.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cholesky::CholeskyFactor;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::gaussian::GaussianApprox;
use crate::scalar::Real;
use crate::skewnormal::SkewNormalStd;
use crate::sparse::CscMatrix;
use crate::special::{norm_logpdf, LN_SQRT_2PI};

#[derive(Debug, Clone)]
pub struct SgcDistribution<T> {
    pub mean: Vec<T>,
    pub precision: CscMatrix<T>,
    pub factor: CholeskyFactor<T>,
    /// Marginal standard deviations of the Gaussian core.
    pub sd: Vec<T>,
    pub skewness: Vec<f64>,
    marginals: Vec<SkewNormalStd>,
}

impl<T: Real> SgcDistribution<T> {
    pub fn new(mean: Vec<T>, precision: CscMatrix<T>, skewness: Vec<f64>) -> Result<Self> {
        let factor = CholeskyFactor::new(&precision)?;
        Self::with_factor(mean, precision, factor, skewness)
    }

    pub fn with_factor(mean: Vec<T>, precision: CscMatrix<T>, factor: CholeskyFactor<T>, skewness: Vec<f64>) -> Result<Self> {
        let p = mean.len();
        if precision.ncols() != p || skewness.len() != p {
            return Err(Error::Dimension(format!(
                "SGC with {p} means, {}×{} precision and {} skewness values",
                precision.nrows(),
                precision.ncols(),
                skewness.len()
            )));
        }
        let sd = factor.selected_inverse().diagonal().into_iter().map(|v| v.sqrt()).collect();
        let marginals = skewness.iter().map(|&s| SkewNormalStd::new(s)).collect::<Result<_>>()?;
        Ok(SgcDistribution { mean, precision, factor, sd, skewness, marginals })
    }

    /// Skew the marginals of a Gaussian approximation.
    pub fn from_gaussian(g: &GaussianApprox<T>, skewness: Vec<f64>) -> Result<Self> {
        Self::with_factor(g.mean.clone(), g.precision.clone(), g.factor.clone(), skewness)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn marginal_law(&self, i: usize) -> &SkewNormalStd {
        &self.marginals[i]
    }

    /// Log density at `x`.
    pub fn logpdf(&self, x: &[T]) -> T {
        let p = self.dim();
        let mut y = vec![T::zero(); p];
        let mut log_jac = 0.0;
        for i in 0..p {
            let sd = self.sd[i].f64();
            let xt = (x[i] - self.mean[i]).f64() / sd;
            let m = &self.marginals[i];
            let z = m.inverse_map(xt);
            if !m.is_gaussian() {
                // g(z) = xt is known, so ln g'(z) needs no quantile solve.
                log_jac += norm_logpdf(z) - m.logpdf(xt);
            }
            y[i] = T::of(z * sd);
        }
        let half = T::of(0.5);
        half * self.factor.log_det() - T::of(LN_SQRT_2PI * p as f64) - half * self.precision.quad_form(&y) - T::of(log_jac)
    }

    /// Apply the componentwise transform to a draw of the Gaussian core.
    pub fn transform(&self, f: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| {
                let m = &self.marginals[i];
                if m.is_gaussian() {
                    return f[i];
                }
                let z = ((f[i] - self.mean[i]) / self.sd[i]).f64();
                self.mean[i] + self.sd[i] * T::of(m.map(z).0)
            })
            .collect()
    }

    /// `count` independent draws, one row per draw.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<T>> {
        (0..count)
            .map(|_| {
                let w: Vec<T> = (0..self.dim()).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
                let dev = self.factor.colour(&w);
                let f: Vec<T> = dev.iter().zip(&self.mean).map(|(&d, &m)| d + m).collect();
                self.transform(&f)
            })
            .collect()
    }

    /// Marginal density of component `index`.
    pub fn marginal_pdf(&self, index: usize, x: T) -> T {
        let sd = self.sd[index].f64();
        let u = (x - self.mean[index]).f64() / sd;
        T::of(self.marginals[index].pdf(u) / sd)
    }

    /// Marginal density tabulated on `points` abscissae from `lo` to `hi`.
    pub fn marginal_grid(&self, index: usize, lo: T, hi: T, points: usize) -> DensityGrid<T> {
        DensityGrid::from_fn(lo, hi, points, |x| self.marginal_pdf(index, x))
    }

    /// Marginal density on a ±`width` sd grid around the mean.
    pub fn marginal_default_grid(&self, index: usize, width: f64, points: usize) -> DensityGrid<T> {
        let w = self.sd[index] * T::of(width);
        self.marginal_grid(index, self.mean[index] - w, self.mean[index] + w, points)
    }

    /// Bivariate marginal of components `(i, j)`, itself an SGC.
    pub fn pair(&self, i: usize, j: usize) -> Result<SgcDistribution<T>> {
        if i == j || i >= self.dim() || j >= self.dim() {
            return Err(Error::InvalidParameter(format!("invalid component pair ({i}, {j})")));
        }
        let ci = self.factor.inverse_column(i);
        let cj = self.factor.inverse_column(j);
        let (a, b, c) = (ci[i], ci[j], cj[j]);
        let det = a * c - b * b;
        let q = CscMatrix::from_triplets(2, 2, &[(0, 0, c / det), (1, 1, a / det), (0, 1, -b / det), (1, 0, -b / det)])?;
        SgcDistribution::new(vec![self.mean[i], self.mean[j]], q, vec![self.skewness[i], self.skewness[j]])
    }

    /// Joint density of `(i, j)` on a rectangular grid, rows `(x, y, density)`.
    pub fn contour(&self, i: usize, j: usize, x: (T, T, usize), y: (T, T, usize)) -> Result<Vec<(T, T, T)>> {
        let pair = self.pair(i, j)?;
        let step = |(lo, hi, n): (T, T, usize)| if n > 1 { (hi - lo) / T::of_usize(n - 1) } else { T::zero() };
        let (sx, sy) = (step(x), step(y));
        let mut out = Vec::with_capacity(x.2 * y.2);
        for a in 0..x.2 {
            let xv = x.0 + sx * T::of_usize(a);
            for b in 0..y.2 {
                let yv = y.0 + sy * T::of_usize(b);
                out.push((xv, yv, pair.logpdf(&[xv, yv]).exp()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bivariate(s: [f64; 2]) -> SgcDistribution<f64> {
        // Covariance 0.5 I + 0.5 J.
        let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let q = cov.try_inverse().unwrap();
        let q = CscMatrix::from_dense(2, 2, q.as_slice());
        SgcDistribution::new(vec![0.0, 0.0], q, s.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_when_unskewed() {
        let d = bivariate([0.0, 0.0]);
        let g = GaussianApprox::new(d.mean.clone(), d.precision.clone(), vec![]).unwrap();
        for x in [[0.3, -1.0], [2.0, 1.5]] {
            assert!((d.logpdf(&x) - g.log_density(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_flips_marginal() {
        let a = bivariate([0.8, 0.0]);
        let b = bivariate([-0.8, 0.0]);
        for x in [0.4, 1.1, -0.9] {
            assert!((a.marginal_pdf(0, x) - b.marginal_pdf(0, -x)).abs() < 1e-12);
        }
    }
}
