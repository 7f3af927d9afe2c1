//! Three-stage INLA: hyperparameter posterior at the Laplace mode, grid
//! exploration in θ, and mixture assembly of the conditional latent
//! marginals produced by a chosen approximation strategy.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{mixture, DensityGrid};
use crate::error::{Error, Result};
use crate::gaussian::{laplace_fit, GaussianApprox, LaplaceOptions};
use crate::model::{validate_model, Dataset, LatentModel};
use crate::optim::{fd_hessian, nelder_mead, BfgsOptions};
use crate::skewnormal::SkewNormalStd;
use crate::skewvb::{optimize_skewness, ComponentFit, SkewFit, SkewOptions};
use crate::special::{norm_pdf, LN_SQRT_2PI};
use crate::vb::{vb_mean_correct, vb_var_correct, MeanCorrection, VarCorrection, VbProblem};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Largest hyperparameter dimension handled by grid exploration.
pub const MAX_GRID_THETA_DIM: usize = 2;

/// Approximation of `p(f | y, θ)`. Each strategy runs every step of the
/// ones before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Gaussian,
    VbMean,
    VbMeanVar,
    SgcVb,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Gaussian, Strategy::VbMean, Strategy::VbMeanVar, Strategy::SgcVb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Gaussian => "gaussian",
            Strategy::VbMean => "vb-mean",
            Strategy::VbMeanVar => "vb-mean-var",
            Strategy::SgcVb => "sgc-vb",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy `{s}` (expected gaussian, vb-mean, vb-mean-var or sgc-vb)")))
    }
}

#[derive(Debug, Clone)]
pub struct InlaOptions {
    pub laplace: LaplaceOptions,
    pub bfgs: BfgsOptions,
    /// Gauss–Hermite nodes for the variational expectations.
    pub gh_nodes: usize,
    /// Components receiving mean and variance corrections; `None` uses the
    /// model default.
    pub correction_set: Option<Vec<usize>>,
    /// Components receiving a skewness; `None` uses the fixed effects.
    pub skew_set: Option<Vec<usize>>,
    pub skew: SkewOptions,
    /// θ grid step in standardized units.
    pub grid_step: f64,
    /// Largest log-density drop from the mode kept on the θ grid.
    pub grid_cutoff: f64,
    /// Half-width of each marginal grid in conditional sds.
    pub marginal_width: f64,
    pub marginal_points: usize,
}

impl Default for InlaOptions {
    fn default() -> Self {
        InlaOptions {
            laplace: LaplaceOptions::default(),
            bfgs: BfgsOptions::default(),
            gh_nodes: 15,
            correction_set: None,
            skew_set: None,
            skew: SkewOptions::default(),
            grid_step: 0.5,
            grid_cutoff: 2.5,
            marginal_width: 8.0,
            marginal_points: 401,
        }
    }
}

/// Integration points in θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub points: Vec<Vec<f64>>,
    /// Normalized: `Σ exp(log_weights) = 1`.
    pub log_weights: Vec<f64>,
    pub log_posterior: Vec<f64>,
    pub mode: Vec<f64>,
    /// Hessian of `−log p̃(θ | y)` at the mode.
    pub curvature: Vec<Vec<f64>>,
}

impl ThetaGrid {
    pub fn single(theta: Vec<f64>) -> ThetaGrid {
        ThetaGrid { points: vec![theta.clone()], log_weights: vec![0.0], log_posterior: vec![0.0], mode: theta, curvature: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(y, μ, θ) − log p_N(μ | y, θ)` at the Laplace mode `μ`.
pub fn log_theta_posterior(model: &LatentModel<f64>, data: &Dataset<f64>, theta: &[f64]) -> Result<f64> {
    log_theta_posterior_from(model, data, theta, None, LaplaceOptions::default()).map(|x| x.0)
}

fn log_theta_posterior_from(
    model: &LatentModel<f64>,
    data: &Dataset<f64>,
    theta: &[f64],
    init: Option<&[f64]>,
    opts: LaplaceOptions,
) -> Result<(f64, GaussianApprox<f64>)> {
    let g = laplace_fit(model, data, theta, init, opts)?;
    let joint = model.log_joint(data, theta, &g.mean)?;
    let denom = 0.5 * g.log_det - LN_SQRT_2PI * g.dim() as f64;
    Ok((joint - denom, g))
}

/// Stage 2 with default options.
pub fn explore_theta(model: &LatentModel<f64>, data: &Dataset<f64>) -> Result<ThetaGrid> {
    explore_theta_with(model, data, &InlaOptions::default())
}

/// Mode search in θ, then a grid in the eigen-directions of the curvature.
pub fn explore_theta_with(model: &LatentModel<f64>, data: &Dataset<f64>, opts: &InlaOptions) -> Result<ThetaGrid> {
    if let Some(t) = &model.fixed_theta {
        return Ok(ThetaGrid::single(t.clone()));
    }
    let d = model.theta_dim();
    if d == 0 {
        return Ok(ThetaGrid::single(Vec::new()));
    }
    if d > MAX_GRID_THETA_DIM {
        return Err(Error::InvalidParameter(format!(
            "grid exploration handles at most {MAX_GRID_THETA_DIM} free hyperparameters, the model has {d}; fix some of them"
        )));
    }
    let lp = |t: &[f64]| -> f64 {
        match log_theta_posterior_from(model, data, t, None, opts.laplace) {
            Ok((v, _)) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    let start = model.reference_theta();
    let (mode, neg_max, _) = nelder_mead(|t| -lp(t), &start, 0.5, 1e-10, 400);
    if !neg_max.is_finite() {
        return Err(Error::ModeSearch("log posterior not finite near the starting point".into()));
    }
    let hess = fd_hessian(|t| -lp(t), &mode, 5e-3);
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModeSearch("curvature at the mode is not finite".into()));
    }
    let eig = hess.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::ModeSearch(format!("curvature at the mode is not positive definite: {:?}", eig.eigenvalues.as_slice())));
    }
    // θ(z) = mode + V Λ^{-1/2} z.
    let scale = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt());
    let at = |z: &[f64]| -> Vec<f64> { (0..d).map(|i| mode[i] + (0..d).map(|j| scale[(i, j)] * z[j]).sum::<f64>()).collect() };
    let top = -neg_max;
    let step = opts.grid_step;
    let cutoff = opts.grid_cutoff;
    let max_steps = (2.0 * (2.0 * cutoff).sqrt() / step).ceil() as i64 + 20;

    // Extent along each axis.
    let mut extent = vec![(0i64, 0i64); d];
    for (axis, ext) in extent.iter_mut().enumerate() {
        for dir in [-1i64, 1] {
            let mut k = 0;
            while k < max_steps {
                let mut z = vec![0.0; d];
                z[axis] = (dir * (k + 1)) as f64 * step;
                if top - lp(&at(&z)) > cutoff {
                    break;
                }
                k += 1;
            }
            if dir < 0 {
                ext.0 = -k;
            } else {
                ext.1 = k;
            }
        }
    }
    let mut cells: Vec<Vec<i64>> = vec![Vec::new()];
    for &(lo, hi) in &extent {
        cells = cells.into_iter().flat_map(|c| (lo..=hi).map(move |k| [c.clone(), vec![k]].concat())).collect();
    }
    let evaluated: Vec<(Vec<f64>, f64)> = cells
        .par_iter()
        .map(|c| {
            let z: Vec<f64> = c.iter().map(|&k| k as f64 * step).collect();
            let t = at(&z);
            let v = if c.iter().all(|&k| k == 0) { top } else { lp(&t) };
            (t, v)
        })
        .collect();
    let kept: Vec<(Vec<f64>, f64)> = evaluated.into_iter().filter(|(_, v)| v.is_finite() && top - v <= cutoff).collect();
    if kept.is_empty() {
        return Err(Error::ModeSearch("no grid point within the cutoff".into()));
    }
    let log_posterior: Vec<f64> = kept.iter().map(|k| k.1).collect();
    // Equal cell volumes in z: weights are the normalized posterior values.
    let norm = log_sum_exp(&log_posterior);
    let best = (0..kept.len()).max_by(|&a, &b| log_posterior[a].total_cmp(&log_posterior[b])).unwrap_or(0);
    Ok(ThetaGrid {
        mode: kept[best].0.clone(),
        log_weights: log_posterior.iter().map(|v| v - norm).collect(),
        points: kept.into_iter().map(|k| k.0).collect(),
        log_posterior,
        curvature: (0..d).map(|i| (0..d).map(|j| hess[(i, j)]).collect()).collect(),
    })
}

/// Every step of the strategy ladder at one θ.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub theta: Vec<f64>,
    pub strategy: Strategy,
    pub laplace: GaussianApprox<f64>,
    pub mean_correction: Option<MeanCorrection>,
    pub var_correction: Option<VarCorrection>,
    pub skew: Option<SkewFit>,
}

impl Conditional {
    /// Gaussian core of the final approximation: the corrected precision
    /// when the variance step ran, the Laplace precision otherwise.
    pub fn core(&self) -> &GaussianApprox<f64> {
        match &self.var_correction {
            Some(v) => &v.approx,
            None => &self.laplace,
        }
    }

    pub fn mean(&self) -> &[f64] {
        match (&self.var_correction, &self.mean_correction) {
            (Some(v), _) => &v.approx.mean,
            (None, Some(m)) => &m.mean,
            _ => &self.laplace.mean,
        }
    }

    pub fn sd(&self) -> Vec<f64> {
        self.core().marginal_variances().into_iter().map(f64::sqrt).collect()
    }

    pub fn skewness(&self) -> Vec<f64> {
        match &self.skew {
            Some(s) => s.skewness.clone(),
            None => vec![0.0; self.laplace.dim()],
        }
    }
}

/// Run the ladder up to `strategy` at one θ.
pub fn conditional_fit(
    model: &LatentModel<f64>,
    data: &Dataset<f64>,
    theta: &[f64],
    strategy: Strategy,
    opts: &InlaOptions,
) -> Result<Conditional> {
    let laplace = laplace_fit(model, data, theta, None, opts.laplace).map_err(|e| e.in_stage("laplace"))?;
    let mut out = Conditional { theta: theta.to_vec(), strategy, laplace, mean_correction: None, var_correction: None, skew: None };
    if strategy == Strategy::Gaussian {
        return Ok(out);
    }
    let set = opts.correction_set.clone().unwrap_or_else(|| model.default_correction_set());
    let problem = VbProblem::new(model, data, &out.laplace, opts.gh_nodes).map_err(|e| e.in_stage("vb-mean"))?;
    let mc = vb_mean_correct(&problem, &set, opts.bfgs).map_err(|e| e.in_stage("vb-mean"))?;
    let vc = if strategy >= Strategy::VbMeanVar {
        Some(vb_var_correct(&problem, &mc, &set, opts.bfgs).map_err(|e| e.in_stage("vb-mean-var"))?)
    } else {
        None
    };
    drop(problem);
    out.mean_correction = Some(mc);
    out.var_correction = vc;
    if strategy == Strategy::SgcVb {
        let skew_set = opts.skew_set.clone().unwrap_or_else(|| model.fixed_effect_indices());
        if !skew_set.is_empty() {
            let fit = optimize_skewness(model, data, theta, out.core(), &skew_set, &opts.skew).map_err(|e| e.in_stage("sgc-vb"))?;
            out.skew = Some(fit);
        }
    }
    Ok(out)
}

/// Posterior summary of one latent component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub density: DensityGrid<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageObjective {
    pub objective: f64,
    pub objective_at_zero: f64,
    pub iterations: usize,
}

/// Final objective values of each ladder step at one θ point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointObjectives {
    pub theta: Vec<f64>,
    pub vb_mean: Option<StageObjective>,
    pub vb_mean_var: Option<StageObjective>,
    pub skew: Vec<ComponentFit>,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub explore: f64,
    pub conditionals: f64,
    pub assembly: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub marginals: Vec<Marginal>,
    pub theta_grid: ThetaGrid,
    pub objectives: Vec<PointObjectives>,
    pub warnings: Vec<String>,
    /// Kept out of the JSON so that reports are reproducible byte for byte.
    #[serde(skip)]
    pub timings: Timings,
}

impl FitReport {
    pub fn means(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean).collect()
    }

    pub fn sds(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sd).collect()
    }
}

/// A report together with the conditional fits it was assembled from.
#[derive(Debug, Clone)]
pub struct InlaFit {
    pub report: FitReport,
    pub conditionals: Vec<Conditional>,
}

fn objectives_of(c: &Conditional) -> PointObjectives {
    let stage = |objective: f64, objective_at_zero: f64, trace_len: usize| StageObjective {
        objective,
        objective_at_zero,
        iterations: trace_len.saturating_sub(1),
    };
    PointObjectives {
        theta: c.theta.clone(),
        vb_mean: c.mean_correction.as_ref().map(|m| stage(m.objective, m.objective_at_zero, m.trace.len())),
        vb_mean_var: c.var_correction.as_ref().map(|v| stage(v.objective, v.objective_at_zero, v.trace.len())),
        skew: c.skew.as_ref().map(|s| s.components.clone()).unwrap_or_default(),
    }
}

/// Stage 3: mixture over θ of the conditional marginals.
pub fn latent_marginals(
    model: &LatentModel<f64>,
    data: &Dataset<f64>,
    grid: &ThetaGrid,
    strategy: Strategy,
    opts: &InlaOptions,
) -> Result<InlaFit> {
    let t0 = Instant::now();
    let fits: Vec<Result<Conditional>> = grid.points.par_iter().map(|t| conditional_fit(model, data, t, strategy, opts)).collect();
    let conditionals_time = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    let mut log_w = Vec::new();
    let mut first_error = None;
    for ((fit, theta), &lw) in fits.into_iter().zip(&grid.points).zip(&grid.log_weights) {
        match fit {
            Ok(c) => {
                kept.push(c);
                log_w.push(lw);
            }
            Err(e) => {
                warnings.push(format!("θ = {theta:?} dropped: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    if kept.is_empty() {
        return Err(first_error.unwrap_or_else(|| Error::InvalidParameter("empty θ grid".into())));
    }
    let norm = log_sum_exp(&log_w);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - norm).exp()).collect();
    let marginals = assemble(&kept, &weights, opts)?;
    let mut theta_grid = grid.clone();
    if kept.len() < grid.len() {
        theta_grid.points = kept.iter().map(|c| c.theta.clone()).collect();
        theta_grid.log_posterior = kept
            .iter()
            .map(|c| grid.points.iter().position(|p| *p == c.theta).map_or(f64::NAN, |i| grid.log_posterior[i]))
            .collect();
        theta_grid.log_weights = log_w.iter().map(|w| w - norm).collect();
    }
    let report = FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy,
        marginals,
        theta_grid,
        objectives: kept.iter().map(objectives_of).collect(),
        warnings,
        timings: Timings { explore: 0.0, conditionals: conditionals_time, assembly: t1.elapsed().as_secs_f64() },
    };
    Ok(InlaFit { report, conditionals: kept })
}

fn conditional_pdf(mean: f64, sd: f64, law: Option<&SkewNormalStd>, x: f64) -> f64 {
    let u = (x - mean) / sd;
    match law {
        Some(l) => l.pdf(u) / sd,
        None => norm_pdf(u) / sd,
    }
}

fn assemble(conds: &[Conditional], weights: &[f64], opts: &InlaOptions) -> Result<Vec<Marginal>> {
    let p = conds[0].laplace.dim();
    let stats: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = conds.iter().map(|c| (c.mean().to_vec(), c.sd(), c.skewness())).collect();
    let points = opts.marginal_points.max(3);
    let width = opts.marginal_width;
    (0..p)
        .into_par_iter()
        .map(|j| {
            let laws: Vec<Option<SkewNormalStd>> =
                stats.iter().map(|s| if s.2[j] == 0.0 { Ok(None) } else { SkewNormalStd::new(s.2[j]).map(Some) }).collect::<Result<_>>()?;
            let lo = stats.iter().map(|s| s.0[j] - width * s.1[j]).fold(f64::INFINITY, f64::min);
            let hi = stats.iter().map(|s| s.0[j] + width * s.1[j]).fold(f64::NEG_INFINITY, f64::max);
            let density = if conds.len() == 1 {
                DensityGrid::from_fn(lo, hi, points, |x| conditional_pdf(stats[0].0[j], stats[0].1[j], laws[0].as_ref(), x))
            } else {
                let parts: Vec<DensityGrid<f64>> = stats
                    .iter()
                    .zip(&laws)
                    .map(|(s, l)| DensityGrid::from_fn(lo, hi, points, |x| conditional_pdf(s.0[j], s.1[j], l.as_ref(), x)))
                    .collect();
                let refs: Vec<(f64, &DensityGrid<f64>)> = weights.iter().copied().zip(parts.iter()).collect();
                mixture(&refs, lo, (hi - lo) / (points - 1) as f64, points)
            };
            let density = density.normalized()?;
            let m = density.moments();
            Ok(Marginal { index: j, mean: m.mean, sd: m.sd, skewness: m.skewness, density })
        })
        .collect()
}

/// Validate, explore θ and assemble the marginals for `strategy`.
pub fn fit_inla(model: &LatentModel<f64>, data: &Dataset<f64>, strategy: Strategy, opts: &InlaOptions) -> Result<InlaFit> {
    let report = validate_model(model, data);
    if !report.is_ok() {
        let msg = serde_json::to_string(&report.failures).unwrap_or_else(|_| format!("{:?}", report.failures));
        return Err(Error::InvalidModel(msg));
    }
    let t0 = Instant::now();
    let grid = explore_theta_with(model, data, opts).map_err(|e| e.in_stage("theta exploration"))?;
    let explore = t0.elapsed().as_secs_f64();
    let mut fit = latent_marginals(model, data, &grid, strategy, opts).map_err(|e| e.in_stage("latent marginals"))?;
    fit.report.timings.explore = explore;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{LikelihoodFamily, Param};
    use crate::model::{Hyperprior, PriorBlock};
    use crate::sparse::CscMatrix;

    fn conjugate(fixed: bool) -> (LatentModel<f64>, Dataset<f64>) {
        let y = vec![0.4, -0.3, 1.2, 0.8, 0.1, -0.6];
        let n = y.len();
        let t: Vec<_> = (0..n).flat_map(|i| [(i, 0, 1.0), (i, 1, i as f64 / n as f64 - 0.5)]).collect();
        let m = LatentModel {
            design: CscMatrix::from_triplets(n, 2, &t).unwrap(),
            blocks: vec![PriorBlock::Fixed { size: 2, precision: 0.1 }],
            likelihood: LikelihoodFamily::Gaussian { precision: Param::Theta(0) },
            hyperprior: vec![Hyperprior::LogGamma { shape: 1.0, rate: 0.5 }],
            fixed_theta: if fixed { Some(vec![0.3]) } else { None },
        };
        (m, Dataset::new(y))
    }

    #[test]
    fn fixed_theta_gives_one_point() {
        let (m, d) = conjugate(true);
        let g = explore_theta(&m, &d).unwrap();
        assert_eq!(g.points, vec![vec![0.3]]);
        assert_eq!(g.weights(), vec![1.0]);
    }

    #[test]
    fn grid_weights_normalize_and_mode_is_best() {
        let (m, d) = conjugate(false);
        let g = explore_theta(&m, &d).unwrap();
        assert!(g.len() >= 5);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = g.log_posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let at_mode = g.points.iter().position(|p| *p == g.mode).unwrap();
        assert_eq!(g.log_posterior[at_mode], best);
    }

    #[test]
    fn gaussian_and_vb_mean_agree_for_gaussian_likelihood() {
        let (m, d) = conjugate(true);
        let opts = InlaOptions::default();
        let a = fit_inla(&m, &d, Strategy::Gaussian, &opts).unwrap().report;
        let b = fit_inla(&m, &d, Strategy::VbMean, &opts).unwrap().report;
        for (x, y) in a.marginals.iter().zip(&b.marginals) {
            assert!((x.mean - y.mean).abs() < 1e-6 && (x.sd - y.sd).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }
}
