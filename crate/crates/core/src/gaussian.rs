//! Laplace-method Gaussian approximation of `p(f | y, θ)` and linear
//! predictor marginals.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cholesky::{CholeskyFactor, SelectedInverse, SymbolicCholesky};
use crate::error::{Error, Result};
use crate::model::{Dataset, LatentModel};
use crate::scalar::Real;
use crate::sparse::CscMatrix;
use crate::special::LN_SQRT_2PI;

/// Second-order expansion of the log-likelihood at `f0`:
/// `Σ ℓ_i(η_i) ≈ const + bᵀη − ½ ηᵀ diag(c) η`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorSite<T> {
    pub f0: Vec<T>,
    pub eta0: Vec<T>,
    /// `−ℓ''_i(η_i)`.
    pub c: Vec<T>,
    /// `ℓ'_i(η_i) − ℓ''_i(η_i) η_i`.
    pub b: Vec<T>,
    /// `ℓ'_i(η_i)`.
    pub d1: Vec<T>,
}

impl<T: Real> TaylorSite<T> {
    /// Latent-scale right-hand side `Aᵀ b`.
    pub fn latent_rhs(&self, a: &CscMatrix<T>) -> Result<Vec<T>> {
        a.tr_mul_vec(&self.b)
    }
}

pub fn taylor_site<T: Real>(model: &LatentModel<T>, data: &Dataset<T>, theta: &[f64], f0: &[T]) -> Result<TaylorSite<T>> {
    let eta = model.linear_predictor(f0)?;
    let n = eta.len();
    let (mut c, mut b, mut d1) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&y, &e) in data.y.iter().zip(&eta) {
        let v = model.likelihood.eval(theta, y, e)?;
        c.push(-v.d2);
        b.push(v.d1 - v.d2 * e);
        d1.push(v.d1);
    }
    Ok(TaylorSite { f0: f0.to_vec(), eta0: eta, c, b, d1 })
}

/// Gaussian `N(μ, Q⁻¹)` with its factorization.
#[derive(Debug, Clone)]
pub struct GaussianApprox<T> {
    pub mean: Vec<T>,
    pub precision: CscMatrix<T>,
    pub factor: CholeskyFactor<T>,
    pub log_det: T,
    pub theta: Vec<f64>,
}

impl<T: Real> GaussianApprox<T> {
    pub fn new(mean: Vec<T>, precision: CscMatrix<T>, theta: Vec<f64>) -> Result<Self> {
        let factor = CholeskyFactor::new(&precision)?;
        Ok(Self::with_factor(mean, precision, factor, theta))
    }

    pub fn with_factor(mean: Vec<T>, precision: CscMatrix<T>, factor: CholeskyFactor<T>, theta: Vec<f64>) -> Self {
        let log_det = factor.log_det();
        GaussianApprox { mean, precision, factor, log_det, theta }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn selected_inverse(&self) -> SelectedInverse<T> {
        self.factor.selected_inverse()
    }

    pub fn marginal_variances(&self) -> Vec<T> {
        self.selected_inverse().diagonal()
    }

    /// `log N(x; μ, Q⁻¹)`.
    pub fn log_density(&self, x: &[T]) -> T {
        let d: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect();
        let half = T::of(0.5);
        half * self.log_det - T::of(LN_SQRT_2PI * self.dim() as f64) - half * self.precision.quad_form(&d)
    }

    /// Mean and variance of `aᵀ f`.
    pub fn eta_marginal(&self, row: &[(usize, T)], sel: Option<&SelectedInverse<T>>) -> (T, T) {
        eta_marginal(self, row, sel)
    }

    /// Marginals of every row of `a`.
    pub fn eta_marginals(&self, a: &CscMatrix<T>) -> Vec<(T, T)> {
        let sel = self.selected_inverse();
        a.rows().iter().map(|r| eta_marginal(self, r, Some(&sel))).collect()
    }

    pub fn to_export(&self) -> GaussianExport {
        GaussianExport {
            schema_version: 1,
            mean: self.mean.iter().map(|v| v.f64()).collect(),
            dim: self.dim(),
            precision: self.precision.triplets().into_iter().map(|(i, j, v)| (i, j, v.f64())).collect(),
            log_det: self.log_det.f64(),
            theta: self.theta.clone(),
        }
    }
}

/// JSON form of a [`GaussianApprox`]: dense mean, triplet precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianExport {
    pub schema_version: u32,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub precision: Vec<(usize, usize, f64)>,
    pub log_det: f64,
    pub theta: Vec<f64>,
}

impl GaussianExport {
    pub fn into_approx(self) -> Result<GaussianApprox<f64>> {
        let q = CscMatrix::from_triplets(self.dim, self.dim, &self.precision)?;
        GaussianApprox::new(self.mean, q, self.theta)
    }
}

/// Mean and variance of `aᵀ f` using selected-inverse entries when they
/// cover the row's support, and a triangular solve otherwise.
pub fn eta_marginal<T: Real>(approx: &GaussianApprox<T>, row: &[(usize, T)], sel: Option<&SelectedInverse<T>>) -> (T, T) {
    let mean = row.iter().map(|&(j, v)| v * approx.mean[j]).sum();
    if let Some(sel) = sel {
        let mut var = T::zero();
        let mut covered = true;
        'outer: for (a, &(j, vj)) in row.iter().enumerate() {
            for &(k, vk) in &row[a..] {
                match sel.get(j, k) {
                    Some(s) => {
                        let w = if j == k { T::one() } else { T::of(2.0) };
                        var += w * vj * vk * s;
                    }
                    None => {
                        covered = false;
                        break 'outer;
                    }
                }
            }
        }
        if covered {
            return (mean, var);
        }
    }
    let mut dense = vec![T::zero(); approx.dim()];
    for &(j, v) in row {
        dense[j] += v;
    }
    (mean, approx.factor.inv_quad_form(&dense))
}

#[derive(Debug, Clone, Copy)]
pub struct LaplaceOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions { tol: 1e-8, max_iter: 100, max_halvings: 20 }
    }
}

/// `Σ ℓ_i(A f) − ½ fᵀ Q_θ f`, the `f`-dependent part of `log p(f | y, θ)`.
fn log_target<T: Real>(model: &LatentModel<T>, data: &Dataset<T>, theta: &[f64], q_prior: &CscMatrix<T>, f: &[T]) -> Result<T> {
    let eta = model.linear_predictor(f)?;
    Ok(model.log_likelihood(data, theta, &eta)? - T::of(0.5) * q_prior.quad_form(f))
}

/// Newton iteration for the mode of `p(f | y, θ)` with step halving.
///
/// When `AᵀCA + Q_θ` is indefinite at the current point (non-concave
/// likelihood), negative curvature sites are clamped to zero for the step
/// direction only; the returned precision always uses the exact curvature
/// at the mode.
pub fn laplace_fit<T: Real>(
    model: &LatentModel<T>,
    data: &Dataset<T>,
    theta: &[f64],
    init: Option<&[T]>,
    opts: LaplaceOptions,
) -> Result<GaussianApprox<T>> {
    let p = model.n_latent();
    let a = &model.design;
    let q_prior = model.prior_precision(theta)?;
    let mut f: Vec<T> = match init {
        Some(x) if x.len() == p => x.to_vec(),
        Some(x) => return Err(Error::Dimension(format!("init has {} entries, model has {p}", x.len()))),
        None => vec![T::zero(); p],
    };
    let mut symbolic: Option<Arc<SymbolicCholesky>> = None;
    let factor_with = |m: &CscMatrix<T>, sym: &mut Option<Arc<SymbolicCholesky>>| -> Result<CholeskyFactor<T>> {
        let fac = match sym {
            Some(s) => CholeskyFactor::with_symbolic(Arc::clone(s), m)?,
            None => CholeskyFactor::new(m)?,
        };
        *sym = Some(Arc::clone(fac.symbolic()));
        Ok(fac)
    };
    let mut current = log_target(model, data, theta, &q_prior, &f)?;
    let tol = T::of(opts.tol);
    for iter in 0..opts.max_iter {
        let site = taylor_site(model, data, theta, &f)?;
        let q = a.at_diag_a(&site.c).add(&q_prior)?;
        let (fac, rhs) = match factor_with(&q, &mut symbolic) {
            Ok(fac) => (fac, site.latent_rhs(a)?),
            Err(Error::NotPositiveDefinite { .. }) => {
                let c: Vec<T> = site.c.iter().map(|&c| c.max(T::zero())).collect();
                let b: Vec<T> = site.d1.iter().zip(&c).zip(&site.eta0).map(|((&g, &c), &e)| g + c * e).collect();
                let q = a.at_diag_a(&c).add(&q_prior)?;
                let fac = factor_with(&q, &mut symbolic).map_err(|_| Error::IndefiniteSystem { iteration: iter })?;
                (fac, a.tr_mul_vec(&b)?)
            }
            Err(e) => return Err(e),
        };
        let target = fac.solve(&rhs);
        let dir: Vec<T> = target.iter().zip(&f).map(|(&t, &x)| t - x).collect();
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<T> = f.iter().zip(&dir).map(|(&x, &d)| x + step * d).collect();
            if let Ok(v) = log_target(model, data, theta, &q_prior, &cand) {
                if v.is_finite() && v >= current - T::of(1e-12) * current.abs().max(T::one()) {
                    accepted = Some((cand, v));
                    break;
                }
            }
            step = step * T::of(0.5);
        }
        let (next, value) = match accepted {
            Some(x) => x,
            None => {
                // No ascent along the Newton direction: the current point is
                // numerically stationary.
                (f.clone(), current)
            }
        };
        let change = next.iter().zip(&f).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
        f = next;
        current = value;
        if change < tol {
            let site = taylor_site(model, data, theta, &f)?;
            let q = a.at_diag_a(&site.c).add(&q_prior)?;
            let fac = factor_with(&q, &mut symbolic).map_err(|_| Error::IndefiniteSystem { iteration: iter })?;
            return Ok(GaussianApprox::with_factor(f, q, fac, theta.to_vec()));
        }
    }
    Err(Error::NonConvergence { what: "Laplace mode search".into(), iterations: opts.max_iter })
}

/// `∇ log p(f | y, θ) = Aᵀ ℓ'(A f) − Q_θ f`.
pub fn log_posterior_gradient<T: Real>(model: &LatentModel<T>, data: &Dataset<T>, theta: &[f64], f: &[T]) -> Result<Vec<T>> {
    let site = taylor_site(model, data, theta, f)?;
    let g = model.design.tr_mul_vec(&site.d1)?;
    let qf = model.prior_precision(theta)?.mul_vec(f)?;
    Ok(g.iter().zip(&qf).map(|(&a, &b)| a - b).collect())
}
