//! Data simulators for the reproduction experiments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal, StudentT};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodFamily, Param};
use crate::model::{Dataset, Hyperprior, LatentModel, PriorBlock};
use crate::rng::substream;
use crate::special::logistic;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    PoissonIntercept,
    StudentT,
    Gpd,
    SensSpec,
    SkewSim,
    ImbalancedLogistic,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::PoissonIntercept,
        ExperimentName::StudentT,
        ExperimentName::Gpd,
        ExperimentName::SensSpec,
        ExperimentName::SkewSim,
        ExperimentName::ImbalancedLogistic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::PoissonIntercept => "poisson-intercept",
            ExperimentName::StudentT => "student-t",
            ExperimentName::Gpd => "gpd",
            ExperimentName::SensSpec => "sens-spec",
            ExperimentName::SkewSim => "skew-sim",
            ExperimentName::ImbalancedLogistic => "imbalanced-logistic",
        }
    }

    pub fn default_n(&self) -> usize {
        match self {
            ExperimentName::PoissonIntercept => 300,
            ExperimentName::StudentT | ExperimentName::Gpd => 10,
            ExperimentName::SensSpec => 50,
            ExperimentName::SkewSim => 20,
            ExperimentName::ImbalancedLogistic => 90,
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// Tunable constants of the simulators.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationSettings {
    pub poisson_beta: f64,
    pub poisson_u_precision: f64,
    pub gpd_xi: f64,
    pub gpd_alpha: f64,
    pub sens_spec_eta: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub vague_precision: f64,
    pub skew_sim_beta: [f64; 4],
    pub skew_sim_rho: f64,
    pub imbalanced_positives: usize,
    pub imbalanced_shift: [f64; 3],
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            poisson_beta: -1.0,
            poisson_u_precision: 1.0,
            gpd_xi: 0.5,
            gpd_alpha: 0.5,
            sens_spec_eta: 0.0,
            sensitivity: 0.8,
            specificity: 0.985,
            vague_precision: 0.001,
            skew_sim_beta: [-2.0, -3.0, -3.0, 1.0],
            skew_sim_rho: 3f64.sqrt() / 2.0,
            imbalanced_positives: 10,
            imbalanced_shift: [1.0, 0.5, 0.0],
        }
    }
}

/// A simulated dataset with its model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: ExperimentName,
    pub model: LatentModel<f64>,
    pub data: Dataset<f64>,
    /// Names of the reported latent components.
    pub param_names: Vec<String>,
    /// Indices of the reported latent components.
    pub tracked: Vec<usize>,
    /// Values used to generate the data for the reported components.
    pub truth: Vec<f64>,
}

impl Experiment {
    /// Counts of each distinct response value, ascending.
    pub fn response_counts(&self) -> Vec<(f64, usize)> {
        let mut v = self.data.y.clone();
        v.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for y in v {
            match out.last_mut() {
                Some((last, c)) if *last == y => *c += 1,
                _ => out.push((y, 1)),
            }
        }
        out
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Design `[1 | x_1 … x_k]` plus optional identity block for a random effect.
fn design(cols: &[Vec<f64>], n: usize, with_identity: bool) -> Result<CscMatrix<f64>> {
    let k = cols.len();
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, 0, 1.0));
        for (j, c) in cols.iter().enumerate() {
            t.push((i, j + 1, c[i]));
        }
        if with_identity {
            t.push((i, k + 1 + i, 1.0));
        }
    }
    CscMatrix::from_triplets(n, k + 1 + if with_identity { n } else { 0 }, &t)
}

fn beta_names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("beta{j}")).collect()
}

/// Simulate experiment `name` with `n` observations from `seed`.
pub fn simulate(name: ExperimentName, n: Option<usize>, seed: u64, s: &SimulationSettings) -> Result<Experiment> {
    let n = n.unwrap_or_else(|| name.default_n());
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let mut rng = substream(seed, "data");
    let vague = Hyperprior::LogGamma { shape: 1.0, rate: 5e-5 };
    let exp = match name {
        ExperimentName::PoissonIntercept => {
            let usd = 1.0 / s.poisson_u_precision.sqrt();
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let eta = s.poisson_beta + usd * normal(&mut rng);
                let d = Poisson::new(eta.exp()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                y.push(d.sample(&mut rng));
            }
            let model = LatentModel {
                design: design(&[], n, true)?,
                blocks: vec![
                    PriorBlock::Fixed { size: 1, precision: s.vague_precision },
                    PriorBlock::Iid { size: n, precision: Param::Theta(0) },
                ],
                likelihood: LikelihoodFamily::Poisson,
                hyperprior: vec![vague],
                fixed_theta: Some(vec![s.poisson_u_precision.ln()]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: vec!["beta".into()], tracked: vec![0], truth: vec![s.poisson_beta] }
        }
        ExperimentName::StudentT => {
            let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let t = StudentT::new(4.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let y = x.iter().map(|&xi| xi + t.sample(&mut rng)).collect();
            let model = LatentModel {
                design: design(&[x], n, false)?,
                blocks: vec![PriorBlock::Fixed { size: 2, precision: s.vague_precision }],
                likelihood: LikelihoodFamily::StudentT { dof: 4.0, precision: Param::Theta(0) },
                hyperprior: vec![vague],
                fixed_theta: Some(vec![0.0]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: beta_names(2), tracked: vec![0, 1], truth: vec![0.0, 1.0] }
        }
        ExperimentName::Gpd => {
            let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let xi = s.gpd_xi;
            let y = x
                .iter()
                .map(|&xv| {
                    let sigma = crate::likelihood::gpd_scale(1.0 + xv, xi, s.gpd_alpha);
                    let u: f64 = rng.random();
                    sigma / xi * ((1.0 - u).powf(-xi) - 1.0)
                })
                .collect();
            let model = LatentModel {
                design: design(&[x], n, false)?,
                blocks: vec![PriorBlock::Fixed { size: 2, precision: s.vague_precision }],
                likelihood: LikelihoodFamily::GeneralizedPareto { xi, alpha: s.gpd_alpha },
                hyperprior: vec![],
                fixed_theta: Some(vec![]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: beta_names(2), tracked: vec![0, 1], truth: vec![1.0, 1.0] }
        }
        ExperimentName::SensSpec => {
            let p = s.specificity.mul_add(-1.0, 1.0) + (s.sensitivity + s.specificity - 1.0) * logistic(s.sens_spec_eta);
            let y = (0..n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
            let model = LatentModel {
                design: design(&[], n, false)?,
                blocks: vec![PriorBlock::Fixed { size: 1, precision: 1e-6 }],
                likelihood: LikelihoodFamily::BernoulliSensSpec { sensitivity: s.sensitivity, specificity: s.specificity },
                hyperprior: vec![],
                fixed_theta: Some(vec![]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: vec!["eta".into()], tracked: vec![0], truth: vec![s.sens_spec_eta] }
        }
        ExperimentName::SkewSim => {
            let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
            let rho = s.skew_sim_rho;
            let mut u = Vec::with_capacity(n);
            let mut prev = normal(&mut rng) / (1.0 - rho * rho).sqrt();
            u.push(prev);
            for _ in 1..n {
                prev = rho * prev + normal(&mut rng);
                u.push(prev);
            }
            let b = s.skew_sim_beta;
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let eta = b[0] + b[1] * cols[0][i] + b[2] * cols[1][i] + b[3] * cols[2][i] + u[i];
                let d = Binomial::new(2, logistic(eta)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                y.push(d.sample(&mut rng) as f64);
            }
            let theta_rho = ((1.0 + rho) / (1.0 - rho)).ln();
            let model = LatentModel {
                design: design(&cols, n, true)?,
                blocks: vec![
                    PriorBlock::Fixed { size: 4, precision: 0.01 },
                    PriorBlock::Ar1 { size: n, rho: Param::Theta(0), precision: Param::Fixed(1.0) },
                ],
                likelihood: LikelihoodFamily::BinomialLogit { trials: 2 },
                hyperprior: vec![Hyperprior::Normal { mean: 0.0, sd: 1.0 / 0.15f64.sqrt() }],
                fixed_theta: Some(vec![theta_rho]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: beta_names(4), tracked: vec![0, 1, 2, 3], truth: b.to_vec() }
        }
        ExperimentName::ImbalancedLogistic => {
            let pos = s.imbalanced_positives.min(n);
            let mut cols = vec![Vec::with_capacity(n); 3];
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let positive = i < pos;
                for (j, c) in cols.iter_mut().enumerate() {
                    let shift = if positive { s.imbalanced_shift[j] } else { 0.0 };
                    c.push(shift + normal(&mut rng));
                }
                y.push(if positive { 1.0 } else { 0.0 });
            }
            let model = LatentModel {
                design: design(&cols, n, false)?,
                blocks: vec![PriorBlock::Fixed { size: 4, precision: s.vague_precision }],
                likelihood: LikelihoodFamily::BinomialLogit { trials: 1 },
                hyperprior: vec![],
                fixed_theta: Some(vec![]),
            };
            Experiment { name, model, data: Dataset::new(y), param_names: beta_names(4), tracked: vec![0, 1, 2, 3], truth: vec![f64::NAN; 4] }
        }
    };
    Ok(exp)
}
