//! Reference posteriors: adaptive random-walk Metropolis and dense grid
//! quadrature for one- and two-dimensional latent fields.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::gaussian::{laplace_fit, LaplaceOptions};
use crate::model::{Dataset, LatentModel};
use crate::rng::substream;
use crate::sparse::CscMatrix;

/// Largest sampled dimension the Metropolis oracle accepts.
pub const DESK_SCALE_LIMIT: usize = 200;

#[derive(Debug, Clone)]
pub struct MetropolisConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// Keep every `thin`-th post burn-in draw.
    pub thin: usize,
    pub seed: u64,
    /// Components to record; all when `None`.
    pub tracked: Option<Vec<usize>>,
    pub target_acceptance: f64,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        MetropolisConfig {
            iterations: 200_000,
            burn_in: 20_000,
            chains: 4,
            thin: 1,
            seed: 0,
            tracked: None,
            target_acceptance: 0.234,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    /// Recorded draws, one row per kept iteration.
    pub draws: Vec<Vec<f64>>,
    pub tracked: Vec<usize>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub stream: String,
    pub burn_in: usize,
    pub final_scale: f64,
}

/// Random-walk Metropolis with proposal `x + λ L z`, where `L Lᵀ` is the
/// proposal covariance shape and `λ` is adapted during burn-in by a
/// Robbins–Monro recursion on the acceptance rate, then frozen.
pub fn rw_metropolis_target<F>(log_target: F, init: &[f64], proposal_chol: &DMatrix<f64>, cfg: &MetropolisConfig) -> Result<Vec<Chain>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = init.len();
    if d > DESK_SCALE_LIMIT {
        return Err(Error::Oracle(format!("sampled dimension {d} exceeds the desk-scale limit {DESK_SCALE_LIMIT}")));
    }
    let tracked: Vec<usize> = cfg.tracked.clone().unwrap_or_else(|| (0..d).collect());
    let l0 = log_target(init);
    if !l0.is_finite() {
        return Err(Error::Oracle(format!("log target is {l0} at the initial point")));
    }
    (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let stream = format!("oracle-chain-{c}");
            let mut rng = substream(cfg.seed, &stream);
            let mut x = DVector::from_column_slice(init);
            let mut lx = l0;
            let mut log_scale = (2.38 / (d as f64).sqrt()).ln();
            let mut accepted = 0usize;
            let mut draws = Vec::with_capacity((cfg.iterations - cfg.burn_in.min(cfg.iterations)) / cfg.thin.max(1) + 1);
            for it in 0..cfg.iterations {
                let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let prop = &x + proposal_chol * z * log_scale.exp();
                let lp = log_target(prop.as_slice());
                if lp.is_nan() {
                    return Err(Error::Oracle(format!("log target is NaN at iteration {it} of chain {c}")));
                }
                let log_u: f64 = rng.random::<f64>().ln();
                let accept = log_u < lp - lx;
                if accept {
                    x = prop;
                    lx = lp;
                }
                if it < cfg.burn_in {
                    let a = if accept { 1.0 } else { 0.0 };
                    log_scale += (a - cfg.target_acceptance) / ((it + 1) as f64).powf(0.6);
                } else {
                    if accept {
                        accepted += 1;
                    }
                    if (it - cfg.burn_in) % cfg.thin.max(1) == 0 {
                        draws.push(tracked.iter().map(|&j| x[j]).collect());
                    }
                }
            }
            let kept = cfg.iterations.saturating_sub(cfg.burn_in).max(1);
            Ok(Chain {
                draws,
                tracked: tracked.clone(),
                acceptance_rate: accepted as f64 / kept as f64,
                seed: cfg.seed,
                stream,
                burn_in: cfg.burn_in,
                final_scale: log_scale.exp(),
            })
        })
        .collect()
}

/// Unnormalized `log p(f | y, θ)` for fixed `θ`.
pub struct LatentTarget<'a> {
    model: &'a LatentModel<f64>,
    data: &'a Dataset<f64>,
    theta: Vec<f64>,
    q_prior: Arc<CscMatrix<f64>>,
}

impl<'a> LatentTarget<'a> {
    pub fn new(model: &'a LatentModel<f64>, data: &'a Dataset<f64>, theta: &[f64]) -> Result<Self> {
        Ok(LatentTarget { model, data, theta: theta.to_vec(), q_prior: Arc::new(model.prior_precision(theta)?) })
    }

    pub fn log_density(&self, f: &[f64]) -> f64 {
        let Ok(eta) = self.model.design.mul_vec(f) else {
            return f64::NEG_INFINITY;
        };
        let mut acc = -0.5 * self.q_prior.quad_form(f);
        for (&y, &e) in self.data.y.iter().zip(&eta) {
            match self.model.likelihood.loglik(&self.theta, y, e) {
                Ok(v) => acc += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        acc
    }
}

/// Metropolis oracle for the latent field of an LGM at fixed `θ`, started
/// at the Laplace mode with the Laplace covariance as proposal shape.
pub fn rw_metropolis(model: &LatentModel<f64>, data: &Dataset<f64>, theta: &[f64], cfg: &MetropolisConfig) -> Result<Vec<Chain>> {
    let p = model.n_latent();
    if p > DESK_SCALE_LIMIT {
        return Err(Error::Oracle(format!("latent dimension {p} exceeds the desk-scale limit {DESK_SCALE_LIMIT}")));
    }
    let g = laplace_fit(model, data, theta, None, LaplaceOptions::default())?;
    let q = g.precision.to_dense_f64();
    let cov = q.try_inverse().ok_or_else(|| Error::Oracle("Laplace precision not invertible".into()))?;
    let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| Error::Oracle("Laplace covariance not positive definite".into()))?;
    let target = LatentTarget::new(model, data, theta)?;
    rw_metropolis_target(|f| target.log_density(f), &g.mean, &chol.l(), cfg)
}

/// Summary of one scalar parameter across chains.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub ess: f64,
    pub histogram: DensityGrid<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub params: Vec<ParamSummary>,
    pub acceptance_rate: f64,
    pub draws: usize,
}

/// Autocorrelations of `x` up to lag `n − 1` by zero-padded FFT.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![1.0; n.min(1)];
    }
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// Effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let rho = autocorrelation(x);
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho[k] + rho[k + 1];
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

/// Normalized histogram with Freedman–Diaconis bin width, as a density grid
/// on the bin centres.
pub fn histogram(x: &[f64]) -> Result<DensityGrid<f64>> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let q = |p: f64| s[((n - 1) as f64 * p).round() as usize];
    let (lo, hi) = (s[0], s[n - 1]);
    if !(hi > lo) {
        return Err(Error::Oracle("degenerate (constant) chain".into()));
    }
    let iqr = q(0.75) - q(0.25);
    let width = if iqr > 0.0 { 2.0 * iqr / (n as f64).cbrt() } else { (hi - lo) / 10.0 };
    let bins = (((hi - lo) / width).ceil() as usize).clamp(2, 10_000);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in &s {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let density = counts.iter().map(|c| c / (n as f64 * width)).collect();
    DensityGrid::new(lo + 0.5 * width, width, density)
}

/// Mean, sd and standardized skewness of a sample.
pub fn sample_moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &v in x {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let sd = m2.sqrt();
    (mean, sd, if sd > 0.0 { m3 / sd.powi(3) } else { 0.0 })
}

/// Summaries of every tracked parameter, dropping the first `discard`
/// recorded draws of each chain.
pub fn chain_summary(chains: &[Chain], discard: usize) -> Result<ChainSummary> {
    let first = chains.first().ok_or_else(|| Error::Oracle("no chains".into()))?;
    if first.draws.len() <= discard {
        return Err(Error::Oracle(format!("chain of {} draws is not longer than discard {discard}", first.draws.len())));
    }
    let mut params = Vec::new();
    for (k, &index) in first.tracked.iter().enumerate() {
        let mut pooled = Vec::new();
        let mut ess = 0.0;
        for c in chains {
            let x: Vec<f64> = c.draws[discard.min(c.draws.len())..].iter().map(|r| r[k]).collect();
            ess += effective_sample_size(&x);
            pooled.extend(x);
        }
        let (mean, sd, skewness) = sample_moments(&pooled);
        params.push(ParamSummary { index, mean, sd, skewness, ess, histogram: histogram(&pooled)? });
    }
    let acceptance_rate = chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / chains.len() as f64;
    let draws = chains.iter().map(|c| c.draws.len().saturating_sub(discard)).sum();
    Ok(ChainSummary { params, acceptance_rate, draws })
}

/// Grid-quadrature posterior of a latent field of dimension 1 or 2.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraturePosterior {
    pub marginals: Vec<DensityGrid<f64>>,
    /// Joint table `(x, y, density)` for two-dimensional fields.
    pub table: Option<Vec<(f64, f64, f64)>>,
}

/// Normalize the posterior of `f | y, θ` on a dense grid covering ±`width`
/// Laplace standard deviations around the mode.
pub fn exact_posterior_quadrature(model: &LatentModel<f64>, data: &Dataset<f64>, theta: &[f64], points: usize, width: f64) -> Result<QuadraturePosterior> {
    let p = model.n_latent();
    let g = laplace_fit(model, data, theta, None, LaplaceOptions::default())?;
    let sd: Vec<f64> = g.marginal_variances().iter().map(|v| v.sqrt()).collect();
    let target = LatentTarget::new(model, data, theta)?;
    match p {
        1 => {
            let (lo, hi) = (g.mean[0] - width * sd[0], g.mean[0] + width * sd[0]);
            let l0 = target.log_density(&g.mean);
            let grid = DensityGrid::from_fn(lo, hi, points, |x| (target.log_density(&[x]) - l0).exp());
            Ok(QuadraturePosterior { marginals: vec![grid.normalized()?], table: None })
        }
        2 => {
            let lo: Vec<f64> = (0..2).map(|k| g.mean[k] - width * sd[k]).collect();
            let step: Vec<f64> = (0..2).map(|k| 2.0 * width * sd[k] / (points - 1) as f64).collect();
            let l0 = target.log_density(&g.mean);
            let rows: Vec<Vec<f64>> = (0..points)
                .into_par_iter()
                .map(|a| {
                    let x = lo[0] + step[0] * a as f64;
                    (0..points).map(|b| (target.log_density(&[x, lo[1] + step[1] * b as f64]) - l0).exp()).collect()
                })
                .collect();
            let trap = |k: usize| if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
            let mut m0 = vec![0.0; points];
            let mut m1 = vec![0.0; points];
            for a in 0..points {
                for b in 0..points {
                    m0[a] += trap(b) * rows[a][b] * step[1];
                    m1[b] += trap(a) * rows[a][b] * step[0];
                }
            }
            let g0 = DensityGrid::new(lo[0], step[0], m0)?;
            let total = g0.mass();
            let g0 = g0.normalized()?;
            let g1 = DensityGrid::new(lo[1], step[1], m1)?.normalized()?;
            let mut table = Vec::with_capacity(points * points);
            for (a, row) in rows.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    table.push((lo[0] + step[0] * a as f64, lo[1] + step[1] * b as f64, v / total));
                }
            }
            Ok(QuadraturePosterior { marginals: vec![g0, g1], table: Some(table) })
        }
        _ => Err(Error::Oracle(format!("grid quadrature supports latent dimension 1 or 2, got {p}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_of_iid_draws() {
        let mut rng = substream(3, "t");
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&x);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.1, "{ess}");
    }

    #[test]
    fn same_seed_same_chain() {
        let cfg = MetropolisConfig { iterations: 2000, burn_in: 500, chains: 2, seed: 11, ..Default::default() };
        let l = DMatrix::identity(2, 2);
        let a = rw_metropolis_target(|x| -0.5 * (x[0] * x[0] + x[1] * x[1]), &[0.0, 0.0], &l, &cfg).unwrap();
        let b = rw_metropolis_target(|x| -0.5 * (x[0] * x[0] + x[1] * x[1]), &[0.0, 0.0], &l, &cfg).unwrap();
        assert_eq!(a[1].draws, b[1].draws);
        assert_ne!(a[0].draws, a[1].draws);
    }
}
