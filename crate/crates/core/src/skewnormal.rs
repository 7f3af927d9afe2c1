//! The skew-normal family in its standardized (mean 0, variance 1)
//! parameterization by skewness, with log-scale CDF and quantile.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::{log_norm_cdf, log_tail_integral, norm_cdf, norm_logpdf, norm_quantile_log, owens_t};

const B: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// Supremum of the skew-normal standardized skewness (shape → ∞).
pub fn skewness_supremum() -> f64 {
    let b2 = B * B;
    0.5 * (4.0 - PI) * B.powi(3) / (1.0 - b2).powf(1.5)
}

/// Standardized skewness of the skew-normal with shape `alpha`.
pub fn skewness_of_shape(alpha: f64) -> f64 {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let bd = B * delta;
    0.5 * (4.0 - PI) * bd.powi(3) / (1.0 - bd * bd).powf(1.5)
}

/// Shape parameter with the given standardized skewness, by bisection on
/// the monotone skewness–shape relation.
pub fn skewness_to_shape(s: f64) -> Result<f64> {
    if !(s.abs() < skewness_supremum()) {
        return Err(Error::SkewnessOutOfRange(s));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    let target = s.abs();
    let mut hi = 1.0;
    while skewness_of_shape(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if skewness_of_shape(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi) * s.signum())
}

/// Log density of the standard-location, unit-scale skew-normal with
/// shape `alpha`: `ln 2 + ln φ(u) + ln Φ(α u)`.
pub fn sn_logpdf(u: f64, alpha: f64) -> f64 {
    LN_2 + norm_logpdf(u) + log_norm_cdf(alpha * u)
}

/// `d/du` of [`sn_logpdf`].
fn sn_dlogpdf(u: f64, alpha: f64) -> f64 {
    -u + alpha * (norm_logpdf(alpha * u) - log_norm_cdf(alpha * u)).exp()
}

/// `ln F(u)` for the unit skew-normal with shape `alpha`.
pub fn sn_log_cdf(u: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return log_norm_cdf(u);
    }
    let p = norm_cdf(u) - 2.0 * owens_t(u, alpha);
    if p > 1e-6 {
        return p.ln();
    }
    let rate = sn_dlogpdf(u, alpha);
    if rate > 0.0 && u < 0.0 {
        log_tail_integral(u, rate, |t| sn_logpdf(t, alpha))
    } else {
        p.max(f64::MIN_POSITIVE).ln()
    }
}

/// `ln(1 − F(u))`, using `1 − F(u; α) = F(−u; −α)`.
pub fn sn_log_sf(u: f64, alpha: f64) -> f64 {
    sn_log_cdf(-u, -alpha)
}

/// Solve `ln F(u; α) = log_p` (intended for `log_p ≤ ln ½`). The log-CDF
/// is concave, so Newton iterates are monotone after the first step.
fn sn_quantile_log_lower(log_p: f64, alpha: f64, start: f64) -> f64 {
    let mut u = start;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..200 {
        let lf = sn_log_cdf(u, alpha);
        let h = lf - log_p;
        if h.abs() <= 4.0 * f64::EPSILON * log_p.abs().max(1.0) {
            return u;
        }
        if h > 0.0 {
            hi = hi.min(u);
        } else {
            lo = lo.max(u);
        }
        let slope = (sn_logpdf(u, alpha) - lf).exp();
        let mut next = u - h / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0 + (lo.abs()),
                (false, true) => hi - 1.0 - hi.abs(),
                _ => 0.0,
            };
        }
        if (next - u).abs() <= 1e-12 * u.abs().max(1.0) {
            return next;
        }
        u = next;
    }
    u
}

/// The skew-normal with mean 0, variance 1 and standardized skewness `s`:
/// `X = ξ₀ + ω U` with `U` unit skew-normal of shape `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalStd {
    pub skewness: f64,
    pub alpha: f64,
    pub xi0: f64,
    pub omega: f64,
}

impl SkewNormalStd {
    pub fn new(s: f64) -> Result<Self> {
        let alpha = skewness_to_shape(s)?;
        let delta = alpha / (1.0 + alpha * alpha).sqrt();
        let bd = B * delta;
        let omega = 1.0 / (1.0 - bd * bd).sqrt();
        Ok(SkewNormalStd { skewness: s, alpha, xi0: -omega * bd, omega })
    }

    pub fn delta(&self) -> f64 {
        self.alpha / (1.0 + self.alpha * self.alpha).sqrt()
    }

    pub fn is_gaussian(&self) -> bool {
        self.alpha == 0.0
    }

    fn u(&self, x: f64) -> f64 {
        (x - self.xi0) / self.omega
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        sn_logpdf(self.u(x), self.alpha) - self.omega.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.logpdf(x).exp()
    }

    pub fn log_cdf(&self, x: f64) -> f64 {
        sn_log_cdf(self.u(x), self.alpha)
    }

    pub fn log_sf(&self, x: f64) -> f64 {
        sn_log_sf(self.u(x), self.alpha)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let u = self.u(x);
        if self.alpha == 0.0 {
            return norm_cdf(u);
        }
        (norm_cdf(u) - 2.0 * owens_t(u, self.alpha)).clamp(0.0, 1.0)
    }

    /// Quantile from `ln p` (lower tail) or `ln(1 − p)` (upper tail).
    fn quantile_split(&self, log_tail: f64, upper: bool, guess: f64) -> f64 {
        let u = if upper {
            -sn_quantile_log_lower(log_tail, -self.alpha, -self.u(guess))
        } else {
            sn_quantile_log_lower(log_tail, self.alpha, self.u(guess))
        };
        self.xi0 + self.omega * u
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let z = if p <= 0.5 { norm_quantile_log(p.ln()) } else { -norm_quantile_log((1.0 - p).ln()) };
        self.map(z).0
    }

    /// Quantile transform `g(z) = F⁻¹(Φ(z))` and its derivative
    /// `g'(z) = φ(z) / f(g(z))`.
    pub fn map(&self, z: f64) -> (f64, f64) {
        if self.is_gaussian() {
            return (z, 1.0);
        }
        let g = if z <= 0.0 {
            self.quantile_split(log_norm_cdf(z), false, z)
        } else {
            self.quantile_split(log_norm_cdf(-z), true, z)
        };
        let log_gp = norm_logpdf(z) - self.logpdf(g);
        (g, log_gp.exp())
    }

    /// `ln g'(z)`.
    pub fn log_map_derivative(&self, z: f64) -> f64 {
        if self.is_gaussian() {
            return 0.0;
        }
        let (g, _) = self.map(z);
        norm_logpdf(z) - self.logpdf(g)
    }

    /// Inverse transform `g⁻¹(x) = Φ⁻¹(F(x))`.
    pub fn inverse_map(&self, x: f64) -> f64 {
        if self.is_gaussian() {
            return x;
        }
        let lc = self.log_cdf(x);
        if lc <= -LN_2 {
            norm_quantile_log(lc)
        } else {
            -norm_quantile_log(self.log_sf(x))
        }
    }

    /// Draw by the stochastic representation `δ|U₀| + √(1−δ²) U₁`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = self.delta();
        let u0: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.sample(StandardNormal);
        self.xi0 + self.omega * (d * u0.abs() + (1.0 - d * d).sqrt() * u1)
    }
}
