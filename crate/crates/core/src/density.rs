//! Equispaced one-dimensional density tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Density values on the abscissae `x0 + i·step`, `i = 0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid<T> {
    pub x0: T,
    pub step: T,
    pub density: Vec<T>,
}

/// Mean, standard deviation and standardized skewness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
}

impl<T: Real> DensityGrid<T> {
    pub fn new(x0: T, step: T, density: Vec<T>) -> Result<Self> {
        if !(step > T::zero()) || density.len() < 2 {
            return Err(Error::InvalidParameter("density grid needs a positive step and ≥ 2 points".into()));
        }
        Ok(DensityGrid { x0, step, density })
    }

    /// Evaluate `f` on `points` abscissae spanning `[lo, hi]`.
    pub fn from_fn(lo: T, hi: T, points: usize, f: impl Fn(T) -> T) -> Self {
        assert!(points >= 2 && hi > lo);
        let step = (hi - lo) / T::of_usize(points - 1);
        let density = (0..points).map(|i| f(lo + step * T::of_usize(i))).collect();
        DensityGrid { x0: lo, step, density }
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn x(&self, i: usize) -> T {
        self.x0 + self.step * T::of_usize(i)
    }

    pub fn abscissae(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    pub fn lo(&self) -> T {
        self.x0
    }

    pub fn hi(&self) -> T {
        self.x(self.len() - 1)
    }

    /// Trapezoid integral of `h(x)·p(x)`.
    pub fn integrate(&self, h: impl Fn(T) -> T) -> T {
        let n = self.len();
        let half = T::of(0.5);
        let mut acc = T::zero();
        for (i, &d) in self.density.iter().enumerate() {
            let w = if i == 0 || i == n - 1 { half } else { T::one() };
            acc += w * d * h(self.x(i));
        }
        acc * self.step
    }

    pub fn mass(&self) -> T {
        self.integrate(|_| T::one())
    }

    /// Clip negative values to zero and rescale to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        for d in self.density.iter_mut() {
            if *d < T::zero() || !d.is_finite() {
                *d = T::zero();
            }
        }
        let m = self.mass();
        if !(m > T::zero()) {
            return Err(Error::InvalidParameter("density grid has zero mass".into()));
        }
        for d in self.density.iter_mut() {
            *d /= m;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// Moments by trapezoid integration (the grid need not be normalized).
    pub fn moments(&self) -> Moments {
        let m0 = self.mass().f64();
        let mean = self.integrate(|x| x).f64() / m0;
        let c = T::of(mean);
        let m2 = self.integrate(|x| (x - c).powi(2)).f64() / m0;
        let m3 = self.integrate(|x| (x - c).powi(3)).f64() / m0;
        let sd = m2.max(0.0).sqrt();
        let skewness = if sd > 0.0 { m3 / sd.powi(3) } else { 0.0 };
        Moments { mean, sd, skewness }
    }

    /// Linear interpolation, zero outside the grid.
    pub fn eval(&self, x: T) -> T {
        let u = (x - self.x0) / self.step;
        if u < T::zero() || u > T::of_usize(self.len() - 1) {
            return T::zero();
        }
        let i = u.floor().to_usize().unwrap_or(0).min(self.len() - 2);
        let t = u - T::of_usize(i);
        self.density[i] * (T::one() - t) + self.density[i + 1] * t
    }

    /// Resample onto another grid by linear interpolation.
    pub fn resample(&self, x0: T, step: T, points: usize) -> Self {
        let density = (0..points).map(|i| self.eval(x0 + step * T::of_usize(i))).collect();
        DensityGrid { x0, step, density }
    }

    /// Largest absolute pointwise difference on this grid's abscissae.
    pub fn sup_distance(&self, other: &Self) -> T {
        (0..self.len())
            .map(|i| (self.density[i] - other.eval(self.x(i))).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.density.iter().all(|&d| d >= T::zero())
    }

    pub fn map_scalar<U: Real>(&self) -> DensityGrid<U> {
        DensityGrid {
            x0: U::of(self.x0.f64()),
            step: U::of(self.step.f64()),
            density: self.density.iter().map(|d| U::of(d.f64())).collect(),
        }
    }
}

/// Weighted mixture of densities, evaluated on a common grid.
pub fn mixture<T: Real>(parts: &[(T, &DensityGrid<T>)], x0: T, step: T, points: usize) -> DensityGrid<T> {
    let mut density = vec![T::zero(); points];
    for (w, g) in parts {
        for (i, d) in density.iter_mut().enumerate() {
            *d += *w * g.eval(x0 + step * T::of_usize(i));
        }
    }
    DensityGrid { x0, step, density }
}
