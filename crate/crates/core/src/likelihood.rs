//! Observation likelihoods with analytic first and second derivatives in
//! the linear predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{ln_factorial, ln_gamma};

/// A scalar quantity that is either fixed or read from the hyperparameter
/// vector. For precisions the hyperparameter is the log precision; for AR1
/// correlations it is `logit((1 + ρ) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Fixed(f64),
    Theta(usize),
}

impl Param {
    pub fn theta_index(&self) -> Option<usize> {
        match *self {
            Param::Theta(i) => Some(i),
            Param::Fixed(_) => None,
        }
    }

    /// Value of a precision parameter.
    pub fn precision(&self, theta: &[f64]) -> Result<f64> {
        match *self {
            Param::Fixed(v) => Ok(v),
            Param::Theta(i) => theta
                .get(i)
                .map(|t| t.exp())
                .ok_or_else(|| Error::Dimension(format!("hyperparameter {i} missing"))),
        }
    }

    /// Value of a correlation parameter in (−1, 1).
    pub fn correlation(&self, theta: &[f64]) -> Result<f64> {
        match *self {
            Param::Fixed(v) => Ok(v),
            Param::Theta(i) => theta
                .get(i)
                .map(|t| 2.0 / (1.0 + (-t).exp()) - 1.0)
                .ok_or_else(|| Error::Dimension(format!("hyperparameter {i} missing"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LikelihoodFamily {
    /// Counts with log mean `η`.
    Poisson,
    /// `√τ (y − η)` follows a standard Student-t with `dof` degrees of freedom.
    StudentT { dof: f64, precision: Param },
    /// Generalized Pareto with tail index `xi`, scale tied to `η` through the
    /// `alpha`-quantile (see [`gpd_scale`]).
    GeneralizedPareto { xi: f64, alpha: f64 },
    /// Binary test result with imperfect sensitivity and specificity:
    /// `P(y = 1) = π₀ π(η) + (1 − π₁)(1 − π(η))`.
    BernoulliSensSpec { sensitivity: f64, specificity: f64 },
    /// Binomial counts with success probability `logistic(η)`.
    BinomialLogit { trials: u32 },
    /// Gaussian observations with mean `η`.
    Gaussian { precision: Param },
}

/// Log-likelihood and its first two derivatives in `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteValue<T> {
    pub loglik: T,
    pub d1: T,
    pub d2: T,
}

/// Scale of the generalized Pareto observation whose `alpha`-quantile is `exp(η)`.
pub fn gpd_scale<T: Real>(eta: T, xi: f64, alpha: f64) -> T {
    eta.exp() * T::of(gpd_kappa(xi, alpha))
}

fn gpd_kappa(xi: f64, alpha: f64) -> f64 {
    xi / ((1.0 - alpha).powf(-xi) - 1.0)
}

fn stable_logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn stable_softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl LikelihoodFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodFamily::Poisson => "poisson",
            LikelihoodFamily::StudentT { .. } => "student_t",
            LikelihoodFamily::GeneralizedPareto { .. } => "generalized_pareto",
            LikelihoodFamily::BernoulliSensSpec { .. } => "bernoulli_sens_spec",
            LikelihoodFamily::BinomialLogit { .. } => "binomial_logit",
            LikelihoodFamily::Gaussian { .. } => "gaussian",
        }
    }

    /// Hyperparameter indices this family reads.
    pub fn theta_indices(&self) -> Vec<usize> {
        match self {
            LikelihoodFamily::StudentT { precision, .. } | LikelihoodFamily::Gaussian { precision } => {
                precision.theta_index().into_iter().collect()
            }
            _ => Vec::new(),
        }
    }

    /// Check the family's own parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            LikelihoodFamily::StudentT { dof, precision } => {
                if !(dof > 0.0) {
                    return bad(format!("student_t dof must be positive, got {dof}"));
                }
                if let Param::Fixed(p) = precision {
                    if !(p > 0.0) {
                        return bad(format!("student_t precision must be positive, got {p}"));
                    }
                }
            }
            LikelihoodFamily::GeneralizedPareto { xi, alpha } => {
                if !(xi > 0.0) {
                    return bad(format!("generalized_pareto xi must be positive, got {xi}"));
                }
                if !(alpha > 0.0 && alpha < 1.0) {
                    return bad(format!("generalized_pareto alpha must lie in (0, 1), got {alpha}"));
                }
            }
            LikelihoodFamily::BernoulliSensSpec { sensitivity, specificity } => {
                for (n, v) in [("sensitivity", sensitivity), ("specificity", specificity)] {
                    if !(0.0..=1.0).contains(&v) {
                        return bad(format!("{n} must lie in [0, 1], got {v}"));
                    }
                }
            }
            LikelihoodFamily::BinomialLogit { trials } => {
                if trials == 0 {
                    return bad("binomial trials must be at least 1".into());
                }
            }
            LikelihoodFamily::Gaussian { precision } => {
                if let Param::Fixed(p) = precision {
                    if !(p > 0.0) {
                        return bad(format!("gaussian precision must be positive, got {p}"));
                    }
                }
            }
            LikelihoodFamily::Poisson => {}
        }
        Ok(())
    }

    /// Whether `y` lies in the support of the response.
    pub fn check_support(&self, index: usize, y: f64) -> Result<()> {
        let ok = match *self {
            LikelihoodFamily::Poisson => y >= 0.0 && y.fract() == 0.0,
            LikelihoodFamily::BinomialLogit { trials } => y >= 0.0 && y <= trials as f64 && y.fract() == 0.0,
            LikelihoodFamily::BernoulliSensSpec { .. } => y == 0.0 || y == 1.0,
            LikelihoodFamily::GeneralizedPareto { .. } => y >= 0.0,
            LikelihoodFamily::StudentT { .. } | LikelihoodFamily::Gaussian { .. } => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Support { index, value: y, family: self.name() })
        }
    }

    /// `(ℓ, ∂ℓ/∂η, ∂²ℓ/∂η²)` at a single observation.
    pub fn eval<T: Real>(&self, theta: &[f64], y: T, eta: T) -> Result<SiteValue<T>> {
        if !eta.is_finite() {
            return Err(Error::Domain(format!("non-finite linear predictor {eta}")));
        }
        let one = T::one();
        let v = match *self {
            LikelihoodFamily::Poisson => {
                let mu = eta.exp();
                let c = T::of(ln_factorial(y.f64()));
                SiteValue { loglik: y * eta - mu - c, d1: y - mu, d2: -mu }
            }
            LikelihoodFamily::StudentT { dof, precision } => {
                let tau = T::of(precision.precision(theta)?);
                let nu = T::of(dof);
                let half = T::of(0.5);
                let r = y - eta;
                let q = tau * r * r;
                let c = half * tau.ln() + T::of(ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof))
                    - half * T::of((dof * std::f64::consts::PI).ln());
                let loglik = c - half * (nu + one) * (q / nu).ln_1p();
                let den = nu + q;
                SiteValue {
                    loglik,
                    d1: (nu + one) * tau * r / den,
                    d2: -(nu + one) * tau * (nu - q) / (den * den),
                }
            }
            LikelihoodFamily::GeneralizedPareto { xi, alpha } => {
                let kappa = gpd_kappa(xi, alpha);
                let sigma = gpd_scale(eta, xi, alpha);
                let u = T::of(xi) * y / sigma;
                if !(one + u > T::zero()) {
                    return Err(Error::Domain(format!("1 + ξ y / σ = {} is not positive", one + u)));
                }
                let a = one + T::of(1.0 / xi);
                SiteValue {
                    loglik: -eta - T::of(kappa.ln()) - a * u.ln_1p(),
                    d1: -one + a * u / (one + u),
                    d2: -a * u / ((one + u) * (one + u)),
                }
            }
            LikelihoodFamily::BernoulliSensSpec { sensitivity, specificity } => {
                let pi = stable_logistic(eta);
                let k = T::of(sensitivity + specificity - 1.0);
                let base = T::of(1.0 - specificity);
                let p = base + k * pi;
                let dp = k * pi * (one - pi);
                let ddp = dp * (one - T::of(2.0) * pi);
                if y > T::of(0.5) {
                    SiteValue { loglik: p.ln(), d1: dp / p, d2: ddp / p - (dp / p).powi(2) }
                } else {
                    let q = one - p;
                    SiteValue { loglik: q.ln(), d1: -dp / q, d2: -ddp / q - (dp / q).powi(2) }
                }
            }
            LikelihoodFamily::BinomialLogit { trials } => {
                let n = T::of(trials as f64);
                let pi = stable_logistic(eta);
                let yf = y.f64();
                let c = T::of(ln_factorial(trials as f64) - ln_factorial(yf) - ln_factorial(trials as f64 - yf));
                SiteValue {
                    loglik: c + y * eta - n * stable_softplus(eta),
                    d1: y - n * pi,
                    d2: -n * pi * (one - pi),
                }
            }
            LikelihoodFamily::Gaussian { precision } => {
                let tau = T::of(precision.precision(theta)?);
                let r = y - eta;
                let half = T::of(0.5);
                SiteValue {
                    loglik: half * tau.ln() - T::of(crate::special::LN_SQRT_2PI) - half * tau * r * r,
                    d1: tau * r,
                    d2: -tau,
                }
            }
        };
        Ok(v)
    }

    /// Log-likelihood only.
    pub fn loglik<T: Real>(&self, theta: &[f64], y: T, eta: T) -> Result<T> {
        self.eval(theta, y, eta).map(|v| v.loglik)
    }
}

/// Free-function form of [`LikelihoodFamily::eval`].
pub fn loglik_eval<T: Real>(family: &LikelihoodFamily, theta: &[f64], y: T, eta: T) -> Result<SiteValue<T>> {
    family.eval(theta, y, eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_at_zero() {
        let v = LikelihoodFamily::Poisson.eval(&[], 0.0, 0.0).unwrap();
        assert_eq!((v.loglik, v.d1, v.d2), (-1.0, -1.0, -1.0));
    }

    #[test]
    fn student_t_centre() {
        let f = LikelihoodFamily::StudentT { dof: 4.0, precision: Param::Fixed(1.0) };
        let v = f.eval(&[], 1.3, 1.3).unwrap();
        assert!((v.loglik - (3.0f64 / 8.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn sens_spec_positive_at_zero() {
        let f = LikelihoodFamily::BernoulliSensSpec { sensitivity: 0.8, specificity: 0.985 };
        let v = f.eval(&[], 1.0, 0.0).unwrap();
        assert!((v.loglik - 0.4075f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gpd_scale_values() {
        assert!((gpd_scale(0.0f64, 0.1, 0.5) - 1.393_272_617_291_297).abs() < 1e-12);
        assert!((gpd_scale(0.0, 1.0, 0.5) - 1.0f64).abs() < 1e-15);
        let c = 3.7f64;
        assert!((gpd_scale(0.4 + c.ln(), 0.3, 0.2) / gpd_scale(0.4, 0.3, 0.2) - c).abs() < 1e-12);
    }

    #[test]
    fn support_errors() {
        assert!(LikelihoodFamily::Poisson.check_support(0, -1.0).is_err());
        assert!(LikelihoodFamily::BinomialLogit { trials: 2 }.check_support(0, 3.0).is_err());
        let g = LikelihoodFamily::GeneralizedPareto { xi: 0.5, alpha: 0.5 };
        assert!(g.check_support(0, -0.1).is_err());
    }

    #[test]
    fn f32_evaluation() {
        let v = LikelihoodFamily::Poisson.eval(&[], 2.0f32, 0.5f32).unwrap();
        let w = LikelihoodFamily::Poisson.eval(&[], 2.0f64, 0.5f64).unwrap();
        assert!((v.loglik as f64 - w.loglik).abs() < 1e-5);
    }
}
