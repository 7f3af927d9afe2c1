//! Low-rank variational corrections of a Laplace approximation: a shift of
//! the mean through the right-hand side of `Q_f μ = b_f + δ`, and a diagonal
//! perturbation `Q_f + diag(δ)` of the precision.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cholesky::CholeskyFactor;
use crate::error::{Error, Result};
use crate::gaussian::{eta_marginal, GaussianApprox, TaylorSite};
use crate::model::{Dataset, LatentModel};
use crate::optim::{bfgs, BfgsOptions, TraceRow};
use crate::quadrature::Rule;
use crate::sparse::{CscMatrix, SparseVec};

/// `E[−ℓ(y, η)]` for `η ~ N(m, v)` by Gauss–Hermite, with its exact
/// derivatives in `m` and `v`.
#[derive(Debug, Clone, Copy)]
pub struct GhExpectation {
    pub value: f64,
    pub d_mean: f64,
    pub d_var: f64,
}

pub fn expected_nll(model: &LatentModel<f64>, theta: &[f64], rule: &Rule, y: f64, m: f64, v: f64) -> Result<GhExpectation> {
    let sd = v.max(0.0).sqrt();
    let (mut value, mut d_mean, mut d_var) = (0.0, 0.0, 0.0);
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let s = model.likelihood.eval(theta, y, m + sd * z)?;
        value -= w * s.loglik;
        d_mean -= w * s.d1;
        if sd > 0.0 {
            d_var -= w * s.d1 * z / (2.0 * sd);
        }
    }
    Ok(GhExpectation { value, d_mean, d_var })
}

/// Shared inputs of both corrections at one hyperparameter value.
pub struct VbProblem<'a> {
    pub model: &'a LatentModel<f64>,
    pub data: &'a Dataset<f64>,
    pub theta: Vec<f64>,
    pub approx: &'a GaussianApprox<f64>,
    pub rule: Rule,
    q_prior: CscMatrix<f64>,
    log_det_prior: f64,
    rows: Vec<SparseVec<f64>>,
    laplace_var: Vec<f64>,
    trace_prior_cov: f64,
}

/// `δ` on the index set `set`, scattered to a full-length vector.
fn scatter(p: usize, set: &[usize], delta: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; p];
    for (&j, &d) in set.iter().zip(delta) {
        full[j] += d;
    }
    full
}

/// Corrected mean solving `Q_f μ = Aᵀ b + δ`.
pub fn solve_corrected_mean(approx: &GaussianApprox<f64>, site: &TaylorSite<f64>, a: &CscMatrix<f64>, delta: &[(usize, f64)]) -> Result<Vec<f64>> {
    let mut rhs = site.latent_rhs(a)?;
    for &(j, d) in delta {
        rhs[j] += d;
    }
    Ok(approx.factor.solve(&rhs))
}

/// `tr(Q_θ Σ)` from selected-inverse entries of `Σ`.
fn trace_product(q_prior: &CscMatrix<f64>, factor: &CholeskyFactor<f64>) -> f64 {
    let sel = factor.selected_inverse();
    let mut acc = 0.0;
    for (i, j, v) in q_prior.triplets() {
        let s = sel.get(i, j).unwrap_or_else(|| factor.inverse_column(j)[i]);
        acc += v * s;
    }
    acc
}

impl<'a> VbProblem<'a> {
    pub fn new(model: &'a LatentModel<f64>, data: &'a Dataset<f64>, approx: &'a GaussianApprox<f64>, gh_nodes: usize) -> Result<Self> {
        let theta = approx.theta.clone();
        let q_prior = model.prior_precision(&theta)?;
        let log_det_prior = CholeskyFactor::new(&q_prior)?.log_det();
        let rows = model.design.rows();
        let sel = approx.selected_inverse();
        let laplace_var = rows.iter().map(|r| eta_marginal(approx, r, Some(&sel)).1).collect();
        let trace_prior_cov = trace_product(&q_prior, &approx.factor);
        Ok(VbProblem {
            model,
            data,
            theta,
            approx,
            rule: Rule::gauss_hermite_normal(gh_nodes),
            q_prior,
            log_det_prior,
            rows,
            laplace_var,
            trace_prior_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.approx.dim()
    }

    pub fn prior_precision(&self) -> &CscMatrix<f64> {
        &self.q_prior
    }

    /// `Σ_i E[−ℓ_i]` over Gaussian predictor marginals and its derivatives
    /// per observation.
    fn expected_terms(&self, means: &[f64], vars: &[f64]) -> Result<(f64, Vec<GhExpectation>)> {
        let mut total = 0.0;
        let mut terms = Vec::with_capacity(means.len());
        for ((&y, &m), &v) in self.data.y.iter().zip(means).zip(vars) {
            let e = expected_nll(self.model, &self.theta, &self.rule, y, m, v)?;
            total += e.value;
            terms.push(e);
        }
        Ok((total, terms))
    }

    /// `KLD(N(μ, Σ) ‖ N(0, Q_θ⁻¹))` given `tr(Q_θ Σ)` and `log det Σ⁻¹`.
    fn kld(&self, mean: &[f64], trace: f64, log_det_q: f64) -> f64 {
        0.5 * (trace + self.q_prior.quad_form(mean) - self.dim() as f64 + log_det_q - self.log_det_prior)
    }

    pub fn corrected_mean(&self, set: &[usize], delta: &[f64]) -> Vec<f64> {
        let full = scatter(self.dim(), set, delta);
        let shift = self.approx.factor.solve(&full);
        self.approx.mean.iter().zip(&shift).map(|(a, b)| a + b).collect()
    }

    /// Mean-correction objective and its gradient in `δ`.
    pub fn mean_objective_grad(&self, set: &[usize], delta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mu = self.corrected_mean(set, delta);
        let eta = self.model.design.mul_vec(&mu)?;
        let (enll, terms) = self.expected_terms(&eta, &self.laplace_var)?;
        let value = enll + self.kld(&mu, self.trace_prior_cov, self.approx.log_det);
        let dm: Vec<f64> = terms.iter().map(|t| t.d_mean).collect();
        let mut g_mu = self.model.design.tr_mul_vec(&dm)?;
        let qmu = self.q_prior.mul_vec(&mu)?;
        for (g, q) in g_mu.iter_mut().zip(&qmu) {
            *g += q;
        }
        let g_full = self.approx.factor.solve(&g_mu);
        Ok((value, set.iter().map(|&j| g_full[j]).collect()))
    }

    pub fn mean_objective(&self, set: &[usize], delta: &[f64]) -> Result<f64> {
        self.mean_objective_grad(set, delta).map(|v| v.0)
    }

    /// Perturbed precision `Q_f + diag(δ)`.
    pub fn perturbed_precision(&self, set: &[usize], delta: &[f64]) -> CscMatrix<f64> {
        self.approx.precision.add_diagonal(&scatter(self.dim(), set, delta))
    }

    fn perturbed_factor(&self, q: &CscMatrix<f64>) -> Result<CholeskyFactor<f64>> {
        CholeskyFactor::with_symbolic(std::sync::Arc::clone(self.approx.factor.symbolic()), q)
    }

    /// Variance-correction objective at fixed mean `mean`, and its gradient.
    pub fn var_objective_grad(&self, mean: &[f64], set: &[usize], delta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let q = self.perturbed_precision(set, delta);
        let fac = self.perturbed_factor(&q)?;
        let sel = fac.selected_inverse();
        let tmp = GaussianApprox::with_factor(mean.to_vec(), q, fac, self.theta.clone());
        let marg: Vec<(f64, f64)> = self.rows.iter().map(|r| eta_marginal(&tmp, r, Some(&sel))).collect();
        let means: Vec<f64> = marg.iter().map(|m| m.0).collect();
        let vars: Vec<f64> = marg.iter().map(|m| m.1).collect();
        let (enll, terms) = self.expected_terms(&means, &vars)?;
        let trace = trace_product(&self.q_prior, &tmp.factor);
        let value = enll + self.kld(mean, trace, tmp.log_det);
        let mut grad = Vec::with_capacity(set.len());
        for &j in set {
            let col = tmp.factor.inverse_column(j);
            let a_col = self.model.design.mul_vec(&col)?;
            let dv: f64 = terms.iter().zip(&a_col).map(|(t, &c)| -t.d_var * c * c).sum();
            let sqs = self.q_prior.quad_form(&col);
            grad.push(dv + 0.5 * (col[j] - sqs));
        }
        Ok((value, grad))
    }

    pub fn var_objective(&self, mean: &[f64], set: &[usize], delta: &[f64]) -> Result<f64> {
        self.var_objective_grad(mean, set, delta).map(|v| v.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanCorrection {
    pub set: Vec<usize>,
    pub delta: Vec<f64>,
    pub mean: Vec<f64>,
    pub objective: f64,
    pub objective_at_zero: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct VarCorrection {
    pub set: Vec<usize>,
    pub delta: Vec<f64>,
    /// Corrected Gaussian `N(μ^corr, (Q_f + diag δ)⁻¹)`.
    pub approx: GaussianApprox<f64>,
    pub objective: f64,
    pub objective_at_zero: f64,
    pub trace: Vec<TraceRow>,
}

fn check_set(set: &[usize], p: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("correction index set is empty".into()));
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != set.len() || sorted.last().is_some_and(|&j| j >= p) {
        return Err(Error::InvalidParameter("correction index set has duplicates or out-of-range entries".into()));
    }
    Ok(())
}

/// Minimize the mean-correction objective over `δ` supported on `set`.
pub fn vb_mean_correct(problem: &VbProblem, set: &[usize], opts: BfgsOptions) -> Result<MeanCorrection> {
    check_set(set, problem.dim())?;
    let k = set.len();
    // The Hessian in δ is Σ_CC (Q_f⁻¹ restricted to the set) for a Gaussian
    // likelihood, so its inverse is a good starting metric.
    let mut cov = DMatrix::zeros(k, k);
    for (b, &j) in set.iter().enumerate() {
        let col = problem.approx.factor.inverse_column(j);
        for (a, &i) in set.iter().enumerate() {
            cov[(a, b)] = col[i];
        }
    }
    let h0 = cov.try_inverse().unwrap_or_else(|| DMatrix::identity(k, k));
    let objective_at_zero = problem.mean_objective(set, &vec![0.0; k])?;
    let r = bfgs(&vec![0.0; k], h0, |d| problem.mean_objective_grad(set, d), opts)?;
    Ok(MeanCorrection {
        set: set.to_vec(),
        mean: problem.corrected_mean(set, &r.x),
        delta: r.x,
        objective: r.value,
        objective_at_zero,
        trace: r.trace,
    })
}

/// Minimize the variance-correction objective over `δ` supported on `set`,
/// keeping the mean at `mean_corr`.
pub fn vb_var_correct(problem: &VbProblem, mean_corr: &MeanCorrection, set: &[usize], opts: BfgsOptions) -> Result<VarCorrection> {
    check_set(set, problem.dim())?;
    let k = set.len();
    let mean = &mean_corr.mean;
    let sel = problem.approx.selected_inverse();
    let h0 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        set.iter().map(|&j| {
            let s = sel.get(j, j).unwrap_or(1.0);
            2.0 / (s * s)
        }),
    ));
    let objective_at_zero = problem.var_objective(mean, set, &vec![0.0; k])?;
    let r = bfgs(&vec![0.0; k], h0, |d| problem.var_objective_grad(mean, set, d), opts)?;
    let q = problem.perturbed_precision(set, &r.x);
    let fac = problem.perturbed_factor(&q).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::InvalidParameter(format!("variance correction indefinite at index {pivot}")),
        other => other,
    })?;
    Ok(VarCorrection {
        set: set.to_vec(),
        delta: r.x,
        approx: GaussianApprox::with_factor(mean.clone(), q, fac, problem.theta.clone()),
        objective: r.value,
        objective_at_zero,
        trace: r.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{laplace_fit, LaplaceOptions};
    use crate::likelihood::{LikelihoodFamily, Param};
    use crate::model::PriorBlock;

    fn scalar(family: LikelihoodFamily, y: Vec<f64>) -> (LatentModel<f64>, Dataset<f64>) {
        let n = y.len();
        let t: Vec<_> = (0..n).map(|i| (i, 0, 1.0)).collect();
        let m = LatentModel {
            design: CscMatrix::from_triplets(n, 1, &t).unwrap(),
            blocks: vec![PriorBlock::Fixed { size: 1, precision: 0.5 }],
            likelihood: family,
            hyperprior: vec![],
            fixed_theta: Some(vec![]),
        };
        (m, Dataset::new(y))
    }

    #[test]
    fn gaussian_likelihood_needs_no_correction() {
        let (m, d) = scalar(LikelihoodFamily::Gaussian { precision: Param::Fixed(2.0) }, vec![0.3, 1.1, -0.4]);
        let g = laplace_fit(&m, &d, &[], None, LaplaceOptions::default()).unwrap();
        let prob = VbProblem::new(&m, &d, &g, 15).unwrap();
        let mc = vb_mean_correct(&prob, &[0], BfgsOptions::default()).unwrap();
        assert!(mc.delta[0].abs() < 1e-6);
        let vc = vb_var_correct(&prob, &mc, &[0], BfgsOptions::default()).unwrap();
        assert!(vc.delta[0].abs() < 1e-6);
    }

    #[test]
    fn scalar_var_objective_formula() {
        let (m, d) = scalar(LikelihoodFamily::Poisson, vec![2.0]);
        let g = laplace_fit(&m, &d, &[], None, LaplaceOptions::default()).unwrap();
        let prob = VbProblem::new(&m, &d, &g, 15).unwrap();
        let q = g.precision.get(0, 0);
        let mu = g.mean.clone();
        let delta = 0.3;
        let v = 1.0 / (q + delta);
        let e = expected_nll(&m, &[], &prob.rule, 2.0, mu[0], v).unwrap().value;
        let want = e + 0.5 * (0.5 * v + 0.5 * mu[0] * mu[0] - 1.0 + (q + delta).ln() - 0.5f64.ln());
        let got = prob.var_objective(&mu, &[0], &[delta]).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}
