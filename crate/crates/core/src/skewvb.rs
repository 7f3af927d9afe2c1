//! Variational fit of marginal skewness under the SGC family.
//!
//! For a skewed component `k` the latent field is whitened with `k` first,
//! so `η_i = m_i + Σ_j c_ij γ_j` with independent `γ_j`. Skewing `γ_1`
//! skews the marginal of `f_k` and leaves every other summand Gaussian, so
//! each `η_i` is a skew-normal term convolved with a Gaussian. Densities are
//! assembled on an FFT lattice; the blocked path reaches the same
//! coefficients from a small block of inverse columns instead of a dense
//! factor of `Q⁻¹`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cholesky::SelectedInverse;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::gaussian::{eta_marginal, GaussianApprox};
use crate::model::{Dataset, LatentModel};
use crate::optim::brent_min;
use crate::quadrature::Rule;
use crate::sgc::SgcDistribution;
use crate::skewnormal::SkewNormalStd;
use crate::sparse::{CscMatrix, SparseVec};
use crate::special::{norm_logpdf, norm_pdf};

/// Largest skewness magnitude handled by the optimizer and the moment table.
pub const SKEWNESS_BOUND: f64 = 0.95;

/// Number of Gauss–Hermite nodes for the Jacobian term and the table fit.
const KLD_NODES: usize = 201;

fn kld_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| Rule::gauss_hermite_normal(KLD_NODES))
}

/// Nodes with weight below this contribute nothing at double precision for
/// the polynomially bounded integrands used here.
const NEGLIGIBLE_WEIGHT: f64 = 1e-18;

/// `E[h(Z)]` over the nodes that carry weight; a non-finite value at such a
/// node is an error.
fn gh_expect(rule: &Rule, mut h: impl FnMut(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        if w < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let v = h(z);
        if v.is_finite() {
            acc += w * v;
        } else {
            return Err(Error::Domain(format!("non-finite integrand at Gauss–Hermite node {z}")));
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Lattice densities

/// Lattice used for each `η_i` density: `points` abscissae spanning
/// `mean ± half_width · sd`, zero padded by `padding` for the FFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FftGrid {
    pub points: usize,
    pub half_width: f64,
    pub padding: usize,
    /// Largest probability allowed outside the output window.
    pub tail_tolerance: f64,
}

impl Default for FftGrid {
    fn default() -> Self {
        FftGrid { points: 1024, half_width: 8.0, padding: 2, tail_tolerance: 1e-7 }
    }
}

impl FftGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points < 16 || !self.points.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("FFT points must be a power of two ≥ 16, got {}", self.points)));
        }
        if self.padding < 2 || !self.padding.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("FFT padding must be a power of two ≥ 2, got {}", self.padding)));
        }
        if !(self.half_width >= 4.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("FFT half width must be ≥ 4 sd, got {}", self.half_width)));
        }
        Ok(())
    }
}

/// CDF of a standardized skew-normal tabulated for fast cell masses, with
/// cubic Hermite interpolation using the exact density as slope.
#[derive(Debug, Clone)]
pub struct SnCdfTable {
    pub law: SkewNormalStd,
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl SnCdfTable {
    const HALF_RANGE: f64 = 14.0;
    const NODES: usize = 4097;

    /// The CDF is accumulated from the density by three-point
    /// Gauss–Legendre on each cell, anchored at the left end.
    pub fn new(skewness: f64) -> Result<Self> {
        let law = SkewNormalStd::new(skewness)?;
        let lo = -Self::HALF_RANGE;
        let step = 2.0 * Self::HALF_RANGE / (Self::NODES - 1) as f64;
        let pdf: Vec<f64> = (0..Self::NODES).map(|i| law.pdf(lo + step * i as f64)).collect();
        let gl = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
        let glw = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut cdf = Vec::with_capacity(Self::NODES);
        let mut acc = law.cdf(lo);
        cdf.push(acc);
        for i in 0..Self::NODES - 1 {
            let mid = lo + step * (i as f64 + 0.5);
            acc += 0.5 * step * gl.iter().zip(&glw).map(|(&x, &w)| w * law.pdf(mid + 0.5 * step * x)).sum::<f64>();
            cdf.push(acc.min(1.0));
        }
        Ok(SnCdfTable { law, lo, step, cdf, pdf })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let t = (x - self.lo) / self.step;
        if t <= 0.0 {
            return 0.0;
        }
        let last = Self::NODES - 1;
        if t >= last as f64 {
            return 1.0;
        }
        let i = (t.floor() as usize).min(last - 1);
        let u = t - i as f64;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        (h00 * self.cdf[i] + h10 * self.step * self.pdf[i] + h01 * self.cdf[i + 1] + h11 * self.step * self.pdf[i + 1])
            .clamp(0.0, 1.0)
    }

    /// Standardized range outside which the law carries no mass in double precision.
    pub fn half_range(&self) -> f64 {
        Self::HALF_RANGE
    }
}

/// Evaluates densities of `m + Σ c_j X_j + N(0, v)` with independent
/// standardized skew-normal `X_j`.
#[derive(Clone)]
pub struct DensityEngine {
    pub grid: FftGrid,
    n2: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Signed frequency index of each FFT bin.
    bins: Vec<f64>,
    /// Box-averaging factor `sin(h)/h` of each bin for unit-step cells.
    sinc: Vec<f64>,
}

impl std::fmt::Debug for DensityEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityEngine").field("grid", &self.grid).finish()
    }
}

/// Spectrum entries below this are dropped.
const SPECTRUM_FLOOR: f64 = 1e-18;

impl DensityEngine {
    pub fn new(grid: FftGrid) -> Result<Self> {
        grid.validate()?;
        let n2 = grid.points * grid.padding;
        let mut planner = FftPlanner::new();
        let bins: Vec<f64> = (0..n2).map(|k| if k < n2 / 2 { k as f64 } else { k as f64 - n2 as f64 }).collect();
        let sinc = bins
            .iter()
            .map(|&b| {
                let half = PI * b / n2 as f64;
                if half == 0.0 {
                    1.0
                } else {
                    half.sin() / half
                }
            })
            .collect();
        Ok(DensityEngine { grid, n2, forward: planner.plan_fft_forward(n2), inverse: planner.plan_fft_inverse(n2), bins, sinc })
    }

    /// Density of `mean + Σ coef · X_s + N(0, gaussian_var)` on the lattice.
    pub fn density(&self, mean: f64, gaussian_var: f64, skewed: &[(f64, &SnCdfTable)]) -> Result<DensityGrid<f64>> {
        // Unskewed tables stay on the lattice so that the density is
        // continuous in the skewness at zero.
        let skewed: Vec<(f64, &SnCdfTable)> = skewed.iter().copied().filter(|(c, _)| *c != 0.0).collect();
        let gaussian_var = gaussian_var.max(0.0);
        let var = gaussian_var + skewed.iter().map(|(c, _)| c * c).sum::<f64>();
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::Domain(format!("linear predictor with mean {mean} and variance {var}")));
        }
        let sd = var.sqrt();
        let points = self.grid.points;
        let step = 2.0 * self.grid.half_width * sd / (points - 1) as f64;
        let x0 = mean - self.grid.half_width * sd;
        if skewed.is_empty() {
            let dens = (0..points).map(|i| norm_pdf((x0 + step * i as f64 - mean) / sd) / sd).collect();
            return DensityGrid::new(x0, step, dens)?.normalized();
        }

        let n2 = self.n2;
        let pad = (n2 - points) / 2;
        let dt = 2.0 * PI / (n2 as f64 * step);
        let mut spectrum: Vec<Complex<f64>> = self
            .bins
            .iter()
            .map(|&b| {
                let t = b * dt;
                let e = 0.5 * gaussian_var * t * t;
                Complex::new(if e < 40.0 { (-e).exp() } else { 0.0 }, 0.0)
            })
            .collect();

        let mut shift = x0 - mean - pad as f64 * step;
        let mut buf = vec![Complex::new(0.0, 0.0); n2];
        for (coef, table) in &skewed {
            buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            // Cell masses of coef · X on cells centred at multiples of `step`.
            let reach = ((table.half_range() * coef.abs() / step).ceil() as i64 + 1).min((n2 / 2 - 1) as i64);
            let edge = |q: i64| table.cdf((q as f64 - 0.5) * step / coef);
            let mut prev = edge(-reach);
            let (mut total, mut first) = (0.0, 0.0);
            for q in -reach..=reach {
                let next = edge(q + 1);
                let mass = (next - prev).abs();
                prev = next;
                total += mass;
                first += mass * q as f64;
                buf[q.rem_euclid(n2 as i64) as usize] = Complex::new(mass, 0.0);
            }
            if !(total > 0.5) {
                return Err(Error::Domain(format!("skew-normal term lost its mass on the lattice (coef {coef})")));
            }
            // Binning a term narrow against the lattice biases its mean,
            // which is zero by construction; shift it back in frequency.
            shift += first / total * step;
            self.inverse.process(&mut buf);
            for ((s, b), &sinc) in spectrum.iter_mut().zip(&buf).zip(&self.sinc) {
                if s.re != 0.0 || s.im != 0.0 {
                    // Undo the box averaging of the cell masses.
                    *s *= b / (total * sinc);
                }
            }
        }
        for (s, &b) in spectrum.iter_mut().zip(&self.bins) {
            if s.norm_sqr() < SPECTRUM_FLOOR * SPECTRUM_FLOOR {
                *s = Complex::new(0.0, 0.0);
            } else {
                *s *= Complex::from_polar(1.0, -b * dt * shift);
            }
        }
        self.forward.process(&mut spectrum);
        let scale = 1.0 / (n2 as f64 * step);
        let full: Vec<f64> = spectrum.iter().map(|c| c.re * scale).collect();
        let total: f64 = full.iter().sum::<f64>() * step;
        let window = &full[pad..pad + points];
        let inside: f64 = window.iter().sum::<f64>() * step;
        let outside = (total - inside).max(0.0);
        if outside > self.grid.tail_tolerance {
            return Err(Error::GridTooNarrow(outside));
        }
        let dens = window.iter().map(|&d| d.max(0.0)).collect();
        DensityGrid::new(x0, step, dens)?.normalized()
    }
}

/// One table per distinct skewness in an assignment.
fn tables_for(assignment: &[(usize, f64)]) -> Result<BTreeMap<u64, SnCdfTable>> {
    let mut out = BTreeMap::new();
    for &(_, s) in assignment {
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(s.to_bits()) {
            e.insert(SnCdfTable::new(s)?);
        }
    }
    Ok(out)
}

/// Densities of `η_i = m_i + Σ_j c_ij γ_j` for coefficient rows `c_i`,
/// Gaussian residual variances and a skew assignment `(column, s)`.
fn densities_from_coefficients(
    engine: &DensityEngine,
    eta_mean: &[f64],
    coeffs: &DMatrix<f64>,
    residual_var: Option<&[f64]>,
    assignment: &[(usize, f64)],
) -> Result<Vec<DensityGrid<f64>>> {
    for &(j, s) in assignment {
        if j >= coeffs.ncols() {
            return Err(Error::Dimension(format!("skew assignment column {j} out of {}", coeffs.ncols())));
        }
        if !s.is_finite() || s.abs() > SKEWNESS_BOUND + 1e-12 {
            return Err(Error::SkewnessOutOfRange(s));
        }
    }
    let tables = tables_for(assignment)?;
    (0..coeffs.nrows())
        .into_par_iter()
        .map(|i| {
            let row = coeffs.row(i);
            let mut gauss = residual_var.map_or(0.0, |r| r[i]);
            for j in 0..row.len() {
                if !assignment.iter().any(|&(a, _)| a == j) {
                    gauss += row[j] * row[j];
                }
            }
            let skewed: Vec<(f64, &SnCdfTable)> = assignment.iter().map(|&(j, s)| (row[j], &tables[&s.to_bits()])).collect();
            engine.density(eta_mean[i], gauss, &skewed)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Whitening

/// Dense whitening `f − μ = L γ` in a chosen order, with predictor
/// coefficients `c_i = A_i L`.
#[derive(Debug, Clone)]
pub struct WhitenedModel {
    /// `order[pos]` is the latent index placed at position `pos`.
    pub order: Vec<usize>,
    /// Lower Cholesky factor of the reordered covariance.
    pub chol: DMatrix<f64>,
    /// Row `i` holds `c_i`, one column per `γ_j`.
    pub coeffs: DMatrix<f64>,
    pub eta_mean: Vec<f64>,
}

fn check_permutation(order: &[usize], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    if order.len() != p {
        return Err(Error::Dimension(format!("ordering of length {} for {p} components", order.len())));
    }
    for &o in order {
        if o >= p || seen[o] {
            return Err(Error::InvalidParameter(format!("ordering is not a permutation (index {o})")));
        }
        seen[o] = true;
    }
    Ok(())
}

/// Dense covariance `Q⁻¹` of an approximation.
pub fn dense_covariance(approx: &GaussianApprox<f64>, dense_limit: usize) -> Result<DMatrix<f64>> {
    let p = approx.dim();
    if p > dense_limit {
        return Err(Error::DenseLimitExceeded { dim: p, limit: dense_limit });
    }
    let cols: Vec<Vec<f64>> = (0..p).into_par_iter().map(|j| approx.factor.inverse_column(j)).collect();
    let mut cov = DMatrix::from_fn(p, p, |i, j| cols[j][i]);
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(cov)
}

fn whiten_from_covariance(cov: &DMatrix<f64>, approx: &GaussianApprox<f64>, rows: &[SparseVec<f64>], order: &[usize]) -> Result<WhitenedModel> {
    let p = approx.dim();
    check_permutation(order, p)?;
    let permuted = DMatrix::from_fn(p, p, |a, b| cov[(order[a], order[b])]);
    let chol = permuted
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0 })?
        .l();
    let mut pos = vec![0; p];
    for (k, &o) in order.iter().enumerate() {
        pos[o] = k;
    }
    let n = rows.len();
    let mut coeffs = DMatrix::zeros(n, p);
    let mut eta_mean = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        for &(j, a) in row {
            eta_mean[i] += a * approx.mean[j];
            let r = pos[j];
            for c in 0..=r {
                coeffs[(i, c)] += a * chol[(r, c)];
            }
        }
    }
    Ok(WhitenedModel { order: order.to_vec(), chol, coeffs, eta_mean })
}

/// Whiten `approx` in `order` for the design `a`.
pub fn whiten(approx: &GaussianApprox<f64>, a: &CscMatrix<f64>, order: &[usize], dense_limit: usize) -> Result<WhitenedModel> {
    if a.ncols() != approx.dim() {
        return Err(Error::Dimension(format!("design has {} columns for {} latent components", a.ncols(), approx.dim())));
    }
    let cov = dense_covariance(approx, dense_limit)?;
    whiten_from_covariance(&cov, approx, &a.rows(), order)
}

/// `η_i` densities when the whitened components in `assignment` (position,
/// skewness) are skewed and all others standard normal.
pub fn eta_density_fft(w: &WhitenedModel, assignment: &[(usize, f64)], engine: &DensityEngine) -> Result<Vec<DensityGrid<f64>>> {
    densities_from_coefficients(engine, &w.eta_mean, &w.coeffs, None, assignment)
}

// ---------------------------------------------------------------------------
// Blocking

/// Split of the latent field into a small block `f²` (optimized component
/// first) and the bulk `f¹`, reduced to coefficients of the whitened block
/// `γ² = L₂⁻¹ (f² − μ²)` in each `η_i` plus the conditional variance of
/// `z₁ = A¹ f¹` given the block.
#[derive(Debug, Clone)]
pub struct BlockSplit {
    pub block: Vec<usize>,
    /// `L₂ L₂ᵀ = Σ₂₂`.
    pub chol: DMatrix<f64>,
    /// Row `i`: coefficients of `γ²` in `η_i`, through `z₂` directly and
    /// through the conditional mean of `z₁`.
    pub coeffs: DMatrix<f64>,
    pub residual_var: Vec<f64>,
    pub eta_mean: Vec<f64>,
}

/// Block for component `k`: `k`, then the other members of `set`, then the
/// strongest precision neighbours of the block so far, up to `size`.
pub fn select_block(precision: &CscMatrix<f64>, k: usize, set: &[usize], size: usize) -> Vec<usize> {
    let p = precision.ncols();
    let size = size.max(1).min(p);
    let diag = precision.diagonal_values();
    let mut block = vec![k];
    let mut in_block = vec![false; p];
    in_block[k] = true;
    for &j in set {
        if block.len() >= size {
            break;
        }
        if j < p && !in_block[j] {
            in_block[j] = true;
            block.push(j);
        }
    }
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    let update = |scores: &mut BTreeMap<usize, f64>, b: usize, in_block: &[bool]| {
        for (i, v) in precision.col(b) {
            if !in_block[i] && v != 0.0 {
                let s = v.abs() / (diag[i] * diag[b]).sqrt();
                let e = scores.entry(i).or_insert(0.0);
                *e = e.max(s);
            }
        }
    };
    for &b in &block {
        update(&mut scores, b, &in_block);
    }
    while block.len() < size {
        let best = scores.iter().fold(None, |acc: Option<(usize, f64)>, (&i, &s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        });
        let Some((j, _)) = best else { break };
        scores.remove(&j);
        in_block[j] = true;
        block.push(j);
        update(&mut scores, j, &in_block);
    }
    block
}

fn eta_variances(approx: &GaussianApprox<f64>, rows: &[SparseVec<f64>], sel: &SelectedInverse<f64>) -> Vec<(f64, f64)> {
    rows.iter().map(|r| eta_marginal(approx, r, Some(sel))).collect()
}

fn block_split_with(approx: &GaussianApprox<f64>, rows: &[SparseVec<f64>], moments: &[(f64, f64)], block: Vec<usize>) -> Result<BlockSplit> {
    let p = approx.dim();
    let b = block.len();
    if b == 0 || block.iter().any(|&j| j >= p) {
        return Err(Error::InvalidParameter("block must be non-empty and within the latent field".into()));
    }
    let cols: Vec<Vec<f64>> = block.iter().map(|&j| approx.factor.inverse_column(j)).collect();
    let s22 = DMatrix::from_fn(b, b, |r, c| 0.5 * (cols[c][block[r]] + cols[r][block[c]]));
    let chol = s22.cholesky().ok_or(Error::NotPositiveDefinite { pivot: 0 })?.l();
    let n = rows.len();
    let mut coeffs = DMatrix::zeros(n, b);
    let mut residual_var = vec![0.0; n];
    let mut eta_mean = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        // Cov(η_i, f²), then coefficients L₂⁻¹ Cov(f², η_i).
        let mut w = nalgebra::DVector::from_fn(b, |c, _| row.iter().map(|&(j, a)| a * cols[c][j]).sum::<f64>());
        forward_substitute(&chol, &mut w);
        let explained: f64 = w.iter().map(|v| v * v).sum();
        for c in 0..b {
            coeffs[(i, c)] = w[c];
        }
        eta_mean[i] = moments[i].0;
        residual_var[i] = (moments[i].1 - explained).max(0.0);
    }
    Ok(BlockSplit { block, chol, coeffs, residual_var, eta_mean })
}

fn forward_substitute(l: &DMatrix<f64>, x: &mut nalgebra::DVector<f64>) {
    for r in 0..x.len() {
        let mut v = x[r];
        for c in 0..r {
            v -= l[(r, c)] * x[c];
        }
        x[r] = v / l[(r, r)];
    }
}

/// Prepare a block split for `block` (its first entry is the component whose
/// skewness is fitted).
pub fn block_split(approx: &GaussianApprox<f64>, a: &CscMatrix<f64>, block: Vec<usize>) -> Result<BlockSplit> {
    let rows = a.rows();
    let sel = approx.selected_inverse();
    let moments = eta_variances(approx, &rows, &sel);
    block_split_with(approx, &rows, &moments, block)
}

/// `η_i` densities with skewed whitened block components `(position, s)`.
pub fn eta_density_blocked(split: &BlockSplit, assignment: &[(usize, f64)], engine: &DensityEngine) -> Result<Vec<DensityGrid<f64>>> {
    densities_from_coefficients(engine, &split.eta_mean, &split.coeffs, Some(&split.residual_var), assignment)
}

// ---------------------------------------------------------------------------
// Expected negative log-likelihood

/// `Σ_i E[−ℓ_i(η_i)]` against tabulated `η_i` densities. Grid points where
/// the likelihood is undefined are dropped and the remaining mass
/// renormalized.
pub fn expected_nll_sgc(model: &LatentModel<f64>, data: &Dataset<f64>, theta: &[f64], densities: &[DensityGrid<f64>]) -> Result<f64> {
    if densities.len() != data.len() {
        return Err(Error::Dimension(format!("{} densities for {} observations", densities.len(), data.len())));
    }
    let mut total = 0.0;
    for (i, d) in densities.iter().enumerate() {
        total += expected_nll_one(model, theta, data.y[i], d)?;
    }
    Ok(total)
}

fn expected_nll_one(model: &LatentModel<f64>, theta: &[f64], y: f64, d: &DensityGrid<f64>) -> Result<f64> {
    let n = d.len();
    let (mut acc, mut mass) = (0.0, 0.0);
    for k in 0..n {
        let p = d.density[k];
        if p == 0.0 {
            continue;
        }
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 } * p;
        match model.likelihood.loglik(theta, y, d.x(k)) {
            Ok(l) if l.is_finite() => {
                acc -= w * l;
                mass += w;
            }
            _ => {}
        }
    }
    let full = d.mass() / d.step;
    if !(mass > 0.5 * full) {
        return Err(Error::Domain(format!("likelihood undefined over most of the η density for y = {y}")));
    }
    Ok(acc / mass)
}

// ---------------------------------------------------------------------------
// KLD between SGC and its Gaussian core

/// `E[X^j Y^j']` for a centred bivariate Gaussian with variances `a`, `c`
/// and covariance `b`, for `j, j' ≤ 3`.
pub fn gaussian_even_moments(a: f64, c: f64, b: f64, j: usize, jp: usize) -> f64 {
    match (j, jp) {
        (0, 0) => 1.0,
        (2, 0) => a,
        (0, 2) => c,
        (1, 1) => b,
        (2, 2) => a * c + 2.0 * b * b,
        (3, 1) => 3.0 * a * b,
        (1, 3) => 3.0 * c * b,
        (3, 3) => 9.0 * a * c * b + 6.0 * b * b * b,
        (j, jp) if (j + jp) % 2 == 1 && j <= 3 && jp <= 3 => 0.0,
        _ => panic!("moment order ({j}, {jp}) outside 0..=3"),
    }
}

/// Degree-3 power-series coefficients `b_0..b_3` of the standardized
/// skew-normal quantile map `g(z) ≈ Σ b_j z^j`, tabulated on a skewness grid.
#[derive(Debug, Clone)]
pub struct MomentCoeffTable {
    pub step: f64,
    pub bound: f64,
    coeffs: Vec<[f64; 4]>,
}

impl MomentCoeffTable {
    /// Hermite least-squares fit under the standard normal weight.
    pub fn fit(s: f64) -> Result<[f64; 4]> {
        if s == 0.0 {
            return Ok([0.0, 1.0, 0.0, 0.0]);
        }
        let law = SkewNormalStd::new(s)?;
        let rule = kld_rule();
        let mut a = [0.0; 4];
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            if w < NEGLIGIBLE_WEIGHT {
                continue;
            }
            let g = law.map(z).0;
            if !g.is_finite() {
                return Err(Error::Domain(format!("skew-normal quantile map not finite at {z}")));
            }
            let he = [1.0, z, z * z - 1.0, z * z * z - 3.0 * z];
            for n in 0..4 {
                a[n] += w * g * he[n];
            }
        }
        a[2] /= 2.0;
        a[3] /= 6.0;
        Ok([a[0] - a[2], a[1] - 3.0 * a[3], a[2], a[3]])
    }

    pub fn new(step: f64, bound: f64) -> Result<Self> {
        let count = (2.0 * bound / step).round() as usize + 1;
        let coeffs = (0..count)
            .into_par_iter()
            .map(|i| {
                let s = (-bound + step * i as f64).clamp(-bound, bound);
                let s = if s.abs() < 0.5 * step { 0.0 } else { s };
                Self::fit(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentCoeffTable { step, bound, coeffs })
    }

    /// Shared table with step 0.01 on `[−0.95, 0.95]`.
    pub fn global() -> &'static MomentCoeffTable {
        static TABLE: OnceLock<MomentCoeffTable> = OnceLock::new();
        TABLE.get_or_init(|| MomentCoeffTable::new(0.01, SKEWNESS_BOUND).expect("skew-normal moment table"))
    }

    /// Coefficients at `s`, linearly interpolated.
    pub fn coefficients(&self, s: f64) -> Result<[f64; 4]> {
        if s == 0.0 {
            return Ok([0.0, 1.0, 0.0, 0.0]);
        }
        if !s.is_finite() || s.abs() > self.bound + 1e-12 {
            return Err(Error::SkewnessOutOfRange(s));
        }
        let t = ((s + self.bound) / self.step).clamp(0.0, (self.coeffs.len() - 1) as f64);
        let i = (t.floor() as usize).min(self.coeffs.len() - 2);
        let u = t - i as f64;
        let (lo, hi) = (self.coeffs[i], self.coeffs[i + 1]);
        Ok(std::array::from_fn(|j| lo[j] + u * (hi[j] - lo[j])))
    }

    /// Cross products `C_{jj'} = b_j(s_k) b_{j'}(s_l)`.
    pub fn cross(&self, sk: f64, sl: f64) -> Result<[[f64; 4]; 4]> {
        let (bk, bl) = (self.coefficients(sk)?, self.coefficients(sl)?);
        Ok(std::array::from_fn(|j| std::array::from_fn(|jp| bk[j] * bl[jp])))
    }

    /// `E[g_k(Z_k) g_l(Z_l)]` for standard normals with correlation `rho`.
    pub fn cross_moment(&self, sk: f64, sl: f64, rho: f64) -> Result<f64> {
        let c = self.cross(sk, sl)?;
        let mut acc = 0.0;
        for (j, row) in c.iter().enumerate() {
            for (jp, &cjj) in row.iter().enumerate() {
                if (j + jp) % 2 == 0 {
                    acc += cjj * gaussian_even_moments(1.0, 1.0, rho, j, jp);
                }
            }
        }
        Ok(acc)
    }
}

/// `−E[ln g'(Z)]`, the Jacobian part of the divergence for one component.
pub fn kld_jacobian_term(s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let law = SkewNormalStd::new(s)?;
    Ok(-gh_expect(kld_rule(), |z| law.log_map_derivative(z))?)
}

/// Divergence of one skewed component `k` against the reference,
/// `−E[ln g'(Z)] + w (E[g(Z) Z] − 1)`, where `w = Σ_l Q_kl σ_k σ_l ρ_kl`
/// and `E[g(Z_k) Z_l] = ρ_kl E[g(Z) Z]` when only `k` is skewed.
fn component_kld(s: f64, quad_weight: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let law = SkewNormalStd::new(s)?;
    let (mut jac, mut cross) = (0.0, 0.0);
    for (&z, &w) in kld_rule().nodes.iter().zip(&kld_rule().weights) {
        if w < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let (g, _) = law.map(z);
        let log_gp = norm_logpdf(z) - law.logpdf(g);
        if !(g.is_finite() && log_gp.is_finite()) {
            return Err(Error::Domain(format!("skew-normal quantile map not finite at {z}")));
        }
        jac -= w * log_gp;
        cross += w * g * z;
    }
    Ok(jac + quad_weight * (cross - 1.0))
}

/// Off-diagonal precision pattern pairs `(k, l, Q_kl σ_k σ_l, ρ_kl)` with `k < l`.
#[derive(Debug, Clone)]
pub struct KldPairs {
    pairs: Vec<(usize, usize, f64, f64)>,
}

impl KldPairs {
    pub fn new(precision: &CscMatrix<f64>, sel: &SelectedInverse<f64>) -> Result<Self> {
        let p = precision.ncols();
        let sd: Vec<f64> = (0..p).map(|i| sel.get(i, i).map(f64::sqrt)).collect::<Option<_>>().ok_or_else(|| Error::Dimension("selected inverse lacks its diagonal".into()))?;
        let mut pairs = Vec::new();
        for l in 0..p {
            for (k, q) in precision.col(l) {
                if k < l && q != 0.0 {
                    let s = sel.get(k, l).ok_or_else(|| Error::Dimension(format!("selected inverse lacks entry ({k}, {l})")))?;
                    pairs.push((k, l, q * sd[k] * sd[l], s / (sd[k] * sd[l])));
                }
            }
        }
        Ok(KldPairs { pairs })
    }

    /// Pairs that involve component `k`.
    pub fn touching(&self, k: usize) -> KldPairs {
        KldPairs { pairs: self.pairs.iter().copied().filter(|&(a, b, _, _)| a == k || b == k).collect() }
    }

    /// Quadratic-form part of the divergence. Diagonal pairs vanish because
    /// the quantile maps preserve unit variance.
    pub fn quadratic_term(&self, skewness: impl Fn(usize) -> f64, table: &MomentCoeffTable) -> Result<f64> {
        let mut acc = 0.0;
        for &(k, l, qss, rho) in &self.pairs {
            let (sk, sl) = (skewness(k), skewness(l));
            if sk == 0.0 && sl == 0.0 {
                continue;
            }
            acc += qss * (table.cross_moment(sk, sl, rho)? - rho);
        }
        Ok(acc)
    }
}

/// `KLD(SGC ‖ N(μ, Q⁻¹))` for the same mean and precision.
pub fn kld_sgc_gaussian(dist: &SgcDistribution<f64>, table: &MomentCoeffTable) -> Result<f64> {
    let mut i1 = 0.0;
    for &s in &dist.skewness {
        i1 += kld_jacobian_term(s)?;
    }
    if dist.skewness.iter().all(|&s| s == 0.0) {
        return Ok(0.0);
    }
    let sel = dist.factor.selected_inverse();
    let pairs = KldPairs::new(&dist.precision, &sel)?;
    let i2 = pairs.quadratic_term(|i| dist.skewness[i], table)?;
    Ok(i1 + i2)
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityPath {
    Auto,
    Fft,
    Blocked,
}

/// Gaussian against which the skewed law is penalized. `Prior` gives the
/// variational bound `E[−log L] + KLD(q ‖ prior)` up to terms free of the
/// skewness; `Posterior` measures the divergence from the corrected
/// Gaussian with the same mean and precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KldReference {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewOptions {
    pub grid: FftGrid,
    pub reference: KldReference,
    pub path: DensityPath,
    pub dense_limit: usize,
    pub block_size: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SkewOptions {
    fn default() -> Self {
        SkewOptions { grid: FftGrid::default(), reference: KldReference::Prior, path: DensityPath::Auto, dense_limit: 1000, block_size: 30, tol: 1e-4, max_iter: 100 }
    }
}

/// Outcome for one skewed component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub index: usize,
    pub skewness: f64,
    pub objective: f64,
    pub objective_at_zero: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Why the component was left Gaussian, if it was.
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewFit {
    pub skewness: Vec<f64>,
    pub components: Vec<ComponentFit>,
    pub path: DensityPath,
}

/// Per-component problem: `η_i = m_i + c_i X_s + N(0, r_i)`.
struct ComponentProblem<'a> {
    model: &'a LatentModel<f64>,
    data: &'a Dataset<f64>,
    theta: &'a [f64],
    engine: &'a DensityEngine,
    eta_mean: Vec<f64>,
    coef: Vec<f64>,
    residual: Vec<f64>,
    quad_weight: f64,
}

impl ComponentProblem<'_> {
    fn objective(&self, s: f64) -> Result<f64> {
        let table = SnCdfTable::new(s)?;
        let nll = (0..self.eta_mean.len())
            .into_par_iter()
            .map(|i| {
                let d = self.engine.density(self.eta_mean[i], self.residual[i], &[(self.coef[i], &table)])?;
                expected_nll_one(self.model, self.theta, self.data.y[i], &d)
            })
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum::<f64>();
        Ok(nll + component_kld(s, self.quad_weight)?)
    }
}

/// Fit the skewness of each component in `set` separately; all other
/// components keep zero skewness.
pub fn optimize_skewness(
    model: &LatentModel<f64>,
    data: &Dataset<f64>,
    theta: &[f64],
    corrected: &GaussianApprox<f64>,
    set: &[usize],
    opts: &SkewOptions,
) -> Result<SkewFit> {
    let p = corrected.dim();
    if model.n_latent() != p || data.len() != model.n_obs() {
        return Err(Error::Dimension(format!("model with {} latent / {} obs against approximation of {p} and {} data", model.n_latent(), model.n_obs(), data.len())));
    }
    if let Some(&bad) = set.iter().find(|&&k| k >= p) {
        return Err(Error::InvalidParameter(format!("skew component {bad} out of {p}")));
    }
    let engine = DensityEngine::new(opts.grid)?;
    let path = match opts.path {
        DensityPath::Auto if p <= opts.dense_limit => DensityPath::Fft,
        DensityPath::Auto => DensityPath::Blocked,
        other => other,
    };
    let rows = model.design.rows();
    let sel = corrected.selected_inverse();
    let pairs = match opts.reference {
        KldReference::Prior => KldPairs::new(&model.prior_precision(theta)?, &sel)?,
        KldReference::Posterior => KldPairs::new(&corrected.precision, &sel)?,
    };
    let moments = eta_variances(corrected, &rows, &sel);
    let cov = if path == DensityPath::Fft { Some(dense_covariance(corrected, opts.dense_limit)?) } else { None };

    let components = set
        .par_iter()
        .map(|&k| -> Result<ComponentFit> {
            let (eta_mean, coef, residual) = match &cov {
                Some(cov) => {
                    let mut order = vec![k];
                    order.extend((0..p).filter(|&j| j != k));
                    let w = whiten_from_covariance(cov, corrected, &rows, &order)?;
                    let coef: Vec<f64> = (0..rows.len()).map(|i| w.coeffs[(i, 0)]).collect();
                    let residual = (0..rows.len()).map(|i| w.coeffs.row(i).iter().skip(1).map(|c| c * c).sum()).collect();
                    (w.eta_mean, coef, residual)
                }
                None => {
                    let block = select_block(&corrected.precision, k, set, opts.block_size);
                    let split = block_split_with(corrected, &rows, &moments, block)?;
                    let coef: Vec<f64> = (0..rows.len()).map(|i| split.coeffs[(i, 0)]).collect();
                    let residual = (0..rows.len())
                        .map(|i| split.residual_var[i] + split.coeffs.row(i).iter().skip(1).map(|c| c * c).sum::<f64>())
                        .collect();
                    (split.eta_mean, coef, residual)
                }
            };
            let quad_weight = pairs.touching(k).pairs.iter().map(|&(_, _, qss, rho)| qss * rho).sum();
            let prob = ComponentProblem { model, data, theta, engine: &engine, eta_mean, coef, residual, quad_weight };
            let at_zero = prob.objective(0.0)?;
            let mut failure = None;
            let res = brent_min(
                |s| match prob.objective(s) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) => f64::INFINITY,
                    Err(e) => {
                        failure.get_or_insert_with(|| e.to_string());
                        f64::INFINITY
                    }
                },
                -SKEWNESS_BOUND,
                SKEWNESS_BOUND,
                opts.tol,
                opts.max_iter,
            );
            let fallback = if !res.converged {
                Some(format!("no convergence after {} evaluations", res.evaluations))
            } else if !res.value.is_finite() {
                Some(failure.unwrap_or_else(|| "objective not finite".into()))
            } else if res.value > at_zero {
                Some("objective above its value at zero skewness".into())
            } else {
                None
            };
            let (skewness, objective) = if fallback.is_some() { (0.0, at_zero) } else { (res.x, res.value) };
            Ok(ComponentFit { index: k, skewness, objective, objective_at_zero: at_zero, evaluations: res.evaluations, converged: res.converged, fallback })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut skewness = vec![0.0; p];
    for c in &components {
        skewness[c.index] = c.skewness;
    }
    Ok(SkewFit { skewness, components, path })
}

/// SGC approximation with the mean and precision of `corrected` and
/// skewness fitted on `set`.
pub fn fit_sgc(
    model: &LatentModel<f64>,
    data: &Dataset<f64>,
    theta: &[f64],
    corrected: &GaussianApprox<f64>,
    set: &[usize],
    opts: &SkewOptions,
) -> Result<(SgcDistribution<f64>, SkewFit)> {
    let fit = optimize_skewness(model, data, theta, corrected, set, opts)?;
    let dist = SgcDistribution::from_gaussian(corrected, fit.skewness.clone())?;
    Ok((dist, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isserlis_moments() {
        assert_eq!(gaussian_even_moments(2.0, 3.0, 0.5, 1, 1), 0.5);
        assert_eq!(gaussian_even_moments(2.0, 3.0, 0.5, 2, 0), 2.0);
        assert_eq!(gaussian_even_moments(2.0, 3.0, 0.5, 2, 1), 0.0);
        assert!((gaussian_even_moments(2.0, 3.0, 0.5, 2, 2) - 6.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_sum_density() {
        let engine = DensityEngine::new(FftGrid::default()).unwrap();
        let d = engine.density(1.0, 2.0, &[]).unwrap();
        let sup = (0..d.len()).map(|i| (d.density[i] - norm_pdf((d.x(i) - 1.0) / 2f64.sqrt()) / 2f64.sqrt()).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-8, "{sup}");
    }

    #[test]
    fn skewed_term_alone_matches_pdf() {
        let engine = DensityEngine::new(FftGrid::default()).unwrap();
        let t = SnCdfTable::new(0.8).unwrap();
        let d = engine.density(0.0, 0.0, &[(2.0, &t)]).unwrap();
        let sup = (0..d.len()).map(|i| (d.density[i] - t.law.pdf(d.x(i) / 2.0) / 2.0).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-5, "{sup}");
        let m = d.moments();
        assert!(m.mean.abs() < 1e-6 && (m.sd - 2.0).abs() < 1e-5 && (m.skewness - 0.8).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn table_interpolates_fitted_coefficients() {
        let table = MomentCoeffTable::new(0.05, 0.95).unwrap();
        let exact = MomentCoeffTable::fit(0.5).unwrap();
        let interp = table.coefficients(0.5).unwrap();
        for j in 0..4 {
            assert!((exact[j] - interp[j]).abs() < 1e-9);
        }
        assert!(matches!(table.coefficients(0.96), Err(Error::SkewnessOutOfRange(_))));
    }
}
