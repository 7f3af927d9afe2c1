//! Latent Gaussian models: design matrix, block prior precision,
//! likelihood and hyperprior.

use serde::{Deserialize, Serialize};

use crate::cholesky::CholeskyFactor;
use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodFamily, Param};
use crate::scalar::Real;
use crate::sparse::CscMatrix;
use crate::special::{ln_gamma, norm_logpdf};

/// Prior for one hyperparameter component, as a density on the θ scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperprior {
    Normal { mean: f64, sd: f64 },
    /// `exp(θ) ~ Gamma(shape, rate)`.
    LogGamma { shape: f64, rate: f64 },
}

impl Hyperprior {
    pub fn log_density(&self, theta: f64) -> f64 {
        match *self {
            Hyperprior::Normal { mean, sd } => norm_logpdf((theta - mean) / sd) - sd.ln(),
            Hyperprior::LogGamma { shape, rate } => {
                shape * rate.ln() - ln_gamma(shape) + shape * theta - rate * theta.exp()
            }
        }
    }

    pub fn mode(&self) -> f64 {
        match *self {
            Hyperprior::Normal { mean, .. } => mean,
            Hyperprior::LogGamma { shape, rate } => (shape / rate).ln(),
        }
    }
}

/// A contiguous run of latent components sharing one prior structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorBlock {
    /// Fixed effects with a known precision.
    Fixed { size: usize, precision: f64 },
    /// Exchangeable random effects.
    Iid { size: usize, precision: Param },
    /// Stationary first-order autoregression `u_t | u_{t−1} ~ N(ρ u_{t−1}, 1/κ)`.
    Ar1 { size: usize, rho: Param, precision: Param },
}

impl PriorBlock {
    pub fn size(&self) -> usize {
        match *self {
            PriorBlock::Fixed { size, .. } | PriorBlock::Iid { size, .. } | PriorBlock::Ar1 { size, .. } => size,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, PriorBlock::Fixed { .. })
    }

    fn theta_indices(&self) -> Vec<usize> {
        match *self {
            PriorBlock::Fixed { .. } => Vec::new(),
            PriorBlock::Iid { precision, .. } => precision.theta_index().into_iter().collect(),
            PriorBlock::Ar1 { rho, precision, .. } => {
                rho.theta_index().into_iter().chain(precision.theta_index()).collect()
            }
        }
    }

    fn push_triplets(&self, offset: usize, theta: &[f64], out: &mut Vec<(usize, usize, f64)>) -> Result<()> {
        match *self {
            PriorBlock::Fixed { size, precision } => {
                positive(precision, "fixed-effect precision")?;
                out.extend((0..size).map(|i| (offset + i, offset + i, precision)));
            }
            PriorBlock::Iid { size, precision } => {
                let k = precision.precision(theta)?;
                positive(k, "iid precision")?;
                out.extend((0..size).map(|i| (offset + i, offset + i, k)));
            }
            PriorBlock::Ar1 { size, rho, precision } => {
                let r = rho.correlation(theta)?;
                let k = precision.precision(theta)?;
                positive(k, "ar1 precision")?;
                if !(r.abs() < 1.0) {
                    return Err(Error::NotPositiveDefinite { pivot: offset });
                }
                for i in 0..size {
                    let d = if size == 1 {
                        1.0 - r * r
                    } else if i == 0 || i == size - 1 {
                        1.0
                    } else {
                        1.0 + r * r
                    };
                    out.push((offset + i, offset + i, k * d));
                    if i + 1 < size && r != 0.0 {
                        out.push((offset + i, offset + i + 1, -k * r));
                        out.push((offset + i + 1, offset + i, -k * r));
                    }
                }
            }
        }
        Ok(())
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

/// Block-diagonal prior precision for the given hyperparameters.
pub fn prior_precision<T: Real>(blocks: &[PriorBlock], theta: &[f64]) -> Result<CscMatrix<T>> {
    let p: usize = blocks.iter().map(PriorBlock::size).sum();
    let mut t = Vec::new();
    let mut offset = 0;
    for b in blocks {
        b.push_triplets(offset, theta, &mut t)?;
        offset += b.size();
    }
    let t: Vec<(usize, usize, T)> = t.into_iter().map(|(i, j, v)| (i, j, T::of(v))).collect();
    CscMatrix::from_triplets(p, p, &t)
}

/// `η = A f`.
pub fn linear_predictor<T: Real>(a: &CscMatrix<T>, f: &[T]) -> Result<Vec<T>> {
    a.mul_vec(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel<T> {
    pub design: CscMatrix<T>,
    pub blocks: Vec<PriorBlock>,
    pub likelihood: LikelihoodFamily,
    /// One entry per hyperparameter component.
    pub hyperprior: Vec<Hyperprior>,
    /// When set, Stage-2 exploration is skipped and this θ is used.
    pub fixed_theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub y: Vec<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(y: Vec<T>) -> Self {
        Dataset { y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

impl<T: Real> LatentModel<T> {
    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_latent(&self) -> usize {
        self.design.ncols()
    }

    /// Number of hyperparameter components referenced by the model.
    pub fn theta_dim(&self) -> usize {
        let mut idx: Vec<usize> = self.blocks.iter().flat_map(|b| b.theta_indices()).collect();
        idx.extend(self.likelihood.theta_indices());
        idx.into_iter().map(|i| i + 1).max().unwrap_or(0)
    }

    /// Index range of each prior block.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = start..start + b.size();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn fixed_effect_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .zip(self.block_ranges())
            .filter(|(b, _)| b.is_fixed())
            .flat_map(|(_, r)| r)
            .collect()
    }

    /// All fixed effects plus the first component of every random block.
    pub fn default_correction_set(&self) -> Vec<usize> {
        let mut set = Vec::new();
        for (b, r) in self.blocks.iter().zip(self.block_ranges()) {
            if b.is_fixed() {
                set.extend(r);
            } else if !r.is_empty() {
                set.push(r.start);
            }
        }
        set
    }

    /// Hyperparameter at which validation checks the prior precision.
    pub fn reference_theta(&self) -> Vec<f64> {
        match &self.fixed_theta {
            Some(t) => t.clone(),
            None => self.hyperprior.iter().map(Hyperprior::mode).collect(),
        }
    }

    pub fn prior_precision(&self, theta: &[f64]) -> Result<CscMatrix<T>> {
        prior_precision(&self.blocks, theta)
    }

    pub fn linear_predictor(&self, f: &[T]) -> Result<Vec<T>> {
        linear_predictor(&self.design, f)
    }

    pub fn log_hyperprior(&self, theta: &[f64]) -> f64 {
        self.hyperprior.iter().zip(theta).map(|(h, &t)| h.log_density(t)).sum()
    }

    /// `Σ_i ℓ_i(η_i)`.
    pub fn log_likelihood(&self, data: &Dataset<T>, theta: &[f64], eta: &[T]) -> Result<T> {
        let mut acc = T::zero();
        for (&y, &e) in data.y.iter().zip(eta) {
            acc += self.likelihood.loglik(theta, y, e)?;
        }
        Ok(acc)
    }

    /// `log N(f; 0, Q_θ⁻¹)` including normalizing constants.
    pub fn log_prior_latent(&self, theta: &[f64], f: &[T]) -> Result<T> {
        let q = self.prior_precision(theta)?;
        let chol = CholeskyFactor::new(&q)?;
        let half = T::of(0.5);
        Ok(half * chol.log_det() - T::of(crate::special::LN_SQRT_2PI * f.len() as f64) - half * q.quad_form(f))
    }

    /// `log p(y, f, θ)`.
    pub fn log_joint(&self, data: &Dataset<T>, theta: &[f64], f: &[T]) -> Result<T> {
        let eta = self.linear_predictor(f)?;
        Ok(self.log_likelihood(data, theta, &eta)? + self.log_prior_latent(theta, f)? + T::of(self.log_hyperprior(theta)))
    }
}

/// One problem found by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Dimension { message: String },
    Support { index: usize, value: f64 },
    Parameter { message: String },
    PriorNotPositiveDefinite { message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Structural checks collected into a list rather than failing fast.
pub fn validate_model<T: Real>(model: &LatentModel<T>, data: &Dataset<T>) -> ValidationReport {
    let mut failures = Vec::new();
    let p: usize = model.blocks.iter().map(PriorBlock::size).sum();
    if model.n_obs() == 0 || model.n_latent() == 0 {
        failures.push(Diagnostic::Dimension { message: "model needs n ≥ 1 and p ≥ 1".into() });
    }
    if p != model.n_latent() {
        failures.push(Diagnostic::Dimension {
            message: format!("prior blocks cover {p} components but the design has {} columns", model.n_latent()),
        });
    }
    if data.len() != model.n_obs() {
        failures.push(Diagnostic::Dimension {
            message: format!("{} responses for {} design rows", data.len(), model.n_obs()),
        });
    }
    let d = model.theta_dim();
    if model.hyperprior.len() != d {
        failures.push(Diagnostic::Dimension {
            message: format!("{} hyperprior entries for {d} hyperparameters", model.hyperprior.len()),
        });
    }
    if let Some(t) = &model.fixed_theta {
        if t.len() != d {
            failures.push(Diagnostic::Dimension {
                message: format!("fixed theta has {} entries, model uses {d}", t.len()),
            });
        }
    }
    if let Err(e) = model.likelihood.validate() {
        failures.push(Diagnostic::Parameter { message: e.to_string() });
    }
    for (i, &y) in data.y.iter().enumerate() {
        if model.likelihood.check_support(i, y.f64()).is_err() {
            failures.push(Diagnostic::Support { index: i, value: y.f64() });
        }
    }
    let theta = model.reference_theta();
    if theta.len() >= d {
        match model.prior_precision(&theta) {
            Ok(q) if p == model.n_latent() => {
                if let Err(e) = CholeskyFactor::new(&q) {
                    failures.push(Diagnostic::PriorNotPositiveDefinite { message: e.to_string() });
                }
            }
            Ok(_) => {}
            Err(e) => failures.push(Diagnostic::PriorNotPositiveDefinite { message: e.to_string() }),
        }
    }
    ValidationReport { failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(blocks: Vec<PriorBlock>) -> LatentModel<f64> {
        let p = blocks.iter().map(PriorBlock::size).sum();
        LatentModel {
            design: CscMatrix::identity(p),
            blocks,
            likelihood: LikelihoodFamily::Poisson,
            hyperprior: vec![],
            fixed_theta: None,
        }
    }

    #[test]
    fn fixed_effect_precision() {
        let q: CscMatrix<f64> = prior_precision(&[PriorBlock::Fixed { size: 1, precision: 0.01 }], &[]).unwrap();
        assert_eq!(q.to_dense(), vec![0.01]);
    }

    #[test]
    fn ar1_rho_zero_is_identity() {
        let b = PriorBlock::Ar1 { size: 2, rho: Param::Fixed(0.0), precision: Param::Fixed(1.0) };
        let q: CscMatrix<f64> = prior_precision(&[b], &[]).unwrap();
        assert_eq!(q.to_dense(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ar1_inverse_is_stationary_covariance() {
        let rho = 0.5;
        let b = PriorBlock::Ar1 { size: 4, rho: Param::Fixed(rho), precision: Param::Fixed(1.0) };
        let q: CscMatrix<f64> = prior_precision(&[b], &[]).unwrap();
        let s = q.to_dense_f64().try_inverse().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = rho.powi((i as i32 - j as i32).abs()) / (1.0 - rho * rho);
                assert!((s[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_param_from_theta() {
        let p = Param::Theta(0);
        assert!((p.correlation(&[0.0]).unwrap()).abs() < 1e-15);
        assert!((p.precision(&[2f64.ln()]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn validation_reports() {
        let m = model(vec![PriorBlock::Fixed { size: 2, precision: 1.0 }]);
        assert!(validate_model(&m, &Dataset::new(vec![0.0, 3.0])).is_ok());
        let r = validate_model(&m, &Dataset::new(vec![-1.0, 3.0]));
        assert_eq!(r.failures, vec![Diagnostic::Support { index: 0, value: -1.0 }]);
        let m = model(vec![PriorBlock::Ar1 { size: 2, rho: Param::Fixed(1.2), precision: Param::Fixed(1.0) }]);
        let r = validate_model(&m, &Dataset::new(vec![0.0, 0.0]));
        assert!(matches!(r.failures[0], Diagnostic::PriorNotPositiveDefinite { .. }));
    }

    #[test]
    fn correction_set_and_theta_dim() {
        let mut m = model(vec![
            PriorBlock::Fixed { size: 2, precision: 1.0 },
            PriorBlock::Ar1 { size: 3, rho: Param::Theta(1), precision: Param::Fixed(1.0) },
        ]);
        m.likelihood = LikelihoodFamily::Gaussian { precision: Param::Theta(0) };
        assert_eq!(m.default_correction_set(), vec![0, 1, 2]);
        assert_eq!(m.fixed_effect_indices(), vec![0, 1]);
        assert_eq!(m.theta_dim(), 2);
    }
}
