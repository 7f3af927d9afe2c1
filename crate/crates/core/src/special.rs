//! Normal-distribution functions, log-gamma and Owen's T.
//!
//! Everything here evaluates in `f64`; the generic kernels convert at
//! their boundaries.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use crate::quadrature::Rule;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln(n!)` for a non-negative (integer-valued) argument.
pub fn ln_factorial(n: f64) -> f64 {
    ln_gamma(n + 1.0)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate in both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-norm_cdf(-x)).ln_1p()
    } else if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv * (1.0 - 9.0 * inv))));
        norm_logpdf(x) - (-x).ln() + series.ln()
    }
}

/// `φ(x) / Φ(x)`, the inverse Mills ratio, without overflow.
pub fn norm_hazard_lower(x: f64) -> f64 {
    (norm_logpdf(x) - log_norm_cdf(x)).exp()
}

/// Initial quantile guess (Abramowitz & Stegun 26.2.23), for `log_p ≤ ln ½`.
fn quantile_guess_lower(log_p: f64) -> f64 {
    let t = (-2.0 * log_p).sqrt();
    let num = 2.515517 + t * (0.802853 + t * 0.010328);
    let den = 1.0 + t * (1.432788 + t * (0.189269 + t * 0.001308));
    -(t - num / den)
}

/// Solve `ln Φ(x) = log_p` for `log_p ≤ ln ½` by Newton iteration on the
/// log-CDF, which is concave, so the iterates approach the root
/// monotonically after the first step.
pub fn norm_quantile_log(log_p: f64) -> f64 {
    if log_p == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if log_p >= 0.0 {
        return f64::INFINITY;
    }
    if log_p > -std::f64::consts::LN_2 {
        // Upper half: mirror through the survival function.
        let log_q = (-log_p.exp()).ln_1p();
        return -norm_quantile_log(log_q);
    }
    let mut x = quantile_guess_lower(log_p);
    for _ in 0..60 {
        let h = log_norm_cdf(x) - log_p;
        let step = h / norm_hazard_lower(x);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        norm_quantile_log(p.ln())
    } else {
        -norm_quantile_log((1.0 - p).ln())
    }
}

fn legendre20() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| Rule::gauss_legendre(20))
}

/// `T(h, a)` for `0 < a ≤ 1`, by Gauss–Legendre quadrature of the defining
/// integral with the `exp(-h²/2)` factor pulled out.
fn owens_t_core(h: f64, a: f64) -> f64 {
    let rule = legendre20();
    let h2 = h * h;
    let upper = if h > 1.0 { a.min(12.0 / h) } else { a };
    let panels = 4;
    let width = upper / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let lo = k as f64 * width;
        acc += rule.integrate(lo, lo + width, |x| (-0.5 * h2 * x * x).exp() / (1.0 + x * x));
    }
    (-0.5 * h2).exp() * acc / (2.0 * PI)
}

/// Owen's T function `T(h, a) = (2π)⁻¹ ∫₀ᵃ exp(-h²(1+x²)/2) / (1+x²) dx`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 || !h.is_finite() {
        return 0.0;
    }
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    let h = h.abs();
    if a <= 1.0 {
        return owens_t_core(h, a);
    }
    if a.is_infinite() {
        return 0.5 * norm_cdf(-h);
    }
    let ah = a * h;
    let (ph, qh) = (norm_cdf(h), norm_cdf(-h));
    let (pah, qah) = (norm_cdf(ah), norm_cdf(-ah));
    0.5 * (ph * qah + pah * qh) - owens_t_core(ah, 1.0 / a)
}

/// `ln ∫_{-∞}^{x} exp(log_f(t)) dt` for a log-density that decays to the
/// left of `x` at rate `rate` (its derivative at `x`). Used for far-tail
/// CDF values where `Φ - 2T` cancels.
pub fn log_tail_integral(x: f64, rate: f64, log_f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(rate > 0.0);
    let rule = legendre20();
    let l0 = log_f(x);
    let edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 60.0];
    let mut acc = 0.0;
    for w in edges.windows(2) {
        acc += rule.integrate(w[0], w[1], |v| (log_f(x - v / rate) - l0).exp());
    }
    l0 - rate.ln() + acc.ln()
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `e^x / (1 + e^x)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((log_norm_cdf(-40.0) - (norm_logpdf(-40.0) - 40f64.ln())).abs() < 1e-3);
        // Continuity across the asymptotic switch.
        let a = log_norm_cdf(-29.999_999);
        let b = log_norm_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn quantile_roundtrip() {
        for &p in &[1e-300, 1e-20, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-12] {
            let x = norm_quantile(p);
            let back = norm_cdf(x);
            assert!(((back - p) / p).abs() < 1e-12 || (back - p).abs() < 1e-16, "p={p} x={x}");
        }
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-13);
        let x = norm_quantile_log(-500.0);
        assert!((log_norm_cdf(x) + 500.0).abs() < 1e-10);
    }

    /// Oracle: brute-force composite Simpson on the defining integral.
    fn owens_t_simpson(h: f64, a: f64) -> f64 {
        let n = 20_000;
        let step = a / n as f64;
        let f = |x: f64| (-0.5 * h * h * (1.0 + x * x)).exp() / (1.0 + x * x);
        let mut s = f(0.0) + f(a);
        for i in 1..n {
            let x = i as f64 * step;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * step / 3.0 / (2.0 * PI)
    }

    #[test]
    fn owens_t_matches_brute_force() {
        for &h in &[0.0, 0.3, 1.0, 2.5, 5.0, -1.7] {
            for &a in &[0.2, 0.9, 1.0, 1.5, 4.0, 12.0] {
                let got = owens_t(h, a);
                let want = owens_t_simpson(h, a);
                assert!((got - want).abs() < 1e-13 + 1e-10 * want.abs(), "h={h} a={a}: {got} vs {want}");
            }
        }
        // T(0, a) = atan(a) / 2π
        assert!((owens_t(0.0, 3.0) - 3f64.atan() / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn tail_integral_reproduces_normal_tail() {
        let x = -12.0;
        let got = log_tail_integral(x, 12.0, norm_logpdf);
        assert!((got - log_norm_cdf(x)).abs() < 1e-10);
    }
}
