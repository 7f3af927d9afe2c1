#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skewinla::likelihood::{LikelihoodFamily, Param};
use skewinla::model::PriorBlock;
use skewinla::{CscMatrix, Dataset, LatentModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Random sparse symmetric positive definite matrix with roughly `fill`
/// off-diagonal density, made diagonally dominant.
pub fn random_spd(rng: &mut ChaCha8Rng, p: usize, fill: f64) -> CscMatrix {
    let mut t = Vec::new();
    let mut row_abs = vec![0.0; p];
    for j in 0..p {
        for i in (j + 1)..p {
            if rng.random::<f64>() < fill {
                let v: f64 = rng.random_range(-1.0..1.0);
                t.push((i, j, v));
                t.push((j, i, v));
                row_abs[i] += v.abs();
                row_abs[j] += v.abs();
            }
        }
    }
    for (i, r) in row_abs.iter().enumerate() {
        t.push((i, i, r + rng.random_range(0.1..2.0)));
    }
    CscMatrix::from_triplets(p, p, &t).unwrap()
}

pub fn dense(a: &CscMatrix) -> DMatrix<f64> {
    a.to_dense_f64()
}

/// Dense random design with `n` rows and `p` columns; the first column is
/// an intercept.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> CscMatrix {
    let mut t = Vec::with_capacity(n * p);
    for i in 0..n {
        t.push((i, 0, 1.0));
        for j in 1..p {
            t.push((i, j, normal(rng)));
        }
    }
    CscMatrix::from_triplets(n, p, &t).unwrap()
}

/// Gaussian-likelihood model with fixed precisions, so the posterior is
/// available in closed form.
pub struct Conjugate {
    pub model: LatentModel,
    pub data: Dataset,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

pub fn conjugate(seed: u64, n: usize, fixed: usize, iid: usize) -> Conjugate {
    let mut r = rng(seed);
    let p = fixed + iid;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, 0, 1.0));
        for j in 1..fixed {
            t.push((i, j, normal(&mut r)));
        }
        if iid > 0 {
            t.push((i, fixed + i % iid, 1.0));
        }
    }
    let design = CscMatrix::from_triplets(n, p, &t).unwrap();
    let tau = r.random_range(0.5..4.0);
    let y: Vec<f64> = (0..n).map(|_| 1.0 + normal(&mut r)).collect();
    let mut blocks = vec![PriorBlock::Fixed { size: fixed, precision: 0.01 }];
    if iid > 0 {
        blocks.push(PriorBlock::Iid { size: iid, precision: Param::Fixed(2.0) });
    }
    let model = LatentModel {
        design,
        blocks,
        likelihood: LikelihoodFamily::Gaussian { precision: Param::Fixed(tau) },
        hyperprior: vec![],
        fixed_theta: Some(vec![]),
    };
    let a = dense(&model.design);
    let q = dense(&model.prior_precision(&[]).unwrap()) + a.transpose() * &a * tau;
    let cov = q.clone().try_inverse().unwrap();
    let mean = &cov * (a.transpose() * DVector::from_vec(y.clone()) * tau);
    let sd = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    Conjugate { model, data: Dataset::new(y), mean: mean.iter().copied().collect(), sd }
}

/// The four non-Gaussian families exercised by the gradient checks.
pub fn families() -> Vec<LikelihoodFamily> {
    vec![
        LikelihoodFamily::Poisson,
        LikelihoodFamily::StudentT { dof: 4.0, precision: Param::Fixed(1.0) },
        LikelihoodFamily::BinomialLogit { trials: 3 },
        LikelihoodFamily::BernoulliSensSpec { sensitivity: 0.8, specificity: 0.95 },
    ]
}

/// Fixed effects plus an iid block with data simulated from `family`.
pub fn random_glmm(seed: u64, family: &LikelihoodFamily, n: usize, fixed: usize, groups: usize) -> (LatentModel, Dataset) {
    let mut r = rng(seed);
    let p = fixed + groups;
    let mut t = Vec::new();
    let mut x = vec![vec![0.0; p]; n];
    for (i, row) in x.iter_mut().enumerate() {
        row[0] = 1.0;
        for v in row.iter_mut().take(fixed).skip(1) {
            *v = 0.5 * normal(&mut r);
        }
        if groups > 0 {
            row[fixed + i % groups] = 1.0;
        }
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                t.push((i, j, v));
            }
        }
    }
    let design = CscMatrix::from_triplets(n, p, &t).unwrap();
    let u: Vec<f64> = (0..groups).map(|_| 0.5 * normal(&mut r)).collect();
    let y = x
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let eta = 0.3 + row[1..fixed].iter().sum::<f64>() + if groups > 0 { u[i % groups] } else { 0.0 };
            simulate_response(&mut r, family, eta)
        })
        .collect();
    let mut blocks = vec![PriorBlock::Fixed { size: fixed, precision: 0.1 }];
    if groups > 0 {
        blocks.push(PriorBlock::Iid { size: groups, precision: Param::Fixed(4.0) });
    }
    let model = LatentModel { design, blocks, likelihood: family.clone(), hyperprior: vec![], fixed_theta: Some(vec![]) };
    (model, Dataset::new(y))
}

fn simulate_response(r: &mut ChaCha8Rng, family: &LikelihoodFamily, eta: f64) -> f64 {
    use rand_distr::Distribution;
    match family {
        LikelihoodFamily::Poisson => rand_distr::Poisson::new(eta.exp()).unwrap().sample(r),
        LikelihoodFamily::StudentT { dof, .. } => eta + rand_distr::StudentT::new(*dof).unwrap().sample(r),
        LikelihoodFamily::BinomialLogit { trials } => {
            rand_distr::Binomial::new(*trials as u64, 1.0 / (1.0 + (-eta).exp())).unwrap().sample(r) as f64
        }
        LikelihoodFamily::BernoulliSensSpec { .. } => f64::from(r.random::<f64>() < 1.0 / (1.0 + (-eta).exp())),
        LikelihoodFamily::Gaussian { .. } => eta + normal(r),
        LikelihoodFamily::GeneralizedPareto { .. } => unreachable!("not simulated here"),
    }
}

/// Fixed effects plus an AR1 field observed once per site through a
/// binomial or Poisson link; `p` is the latent dimension.
pub fn random_ar1_model(seed: u64, p: usize) -> (LatentModel, Dataset) {
    let mut r = rng(seed);
    let fixed = 3;
    let n = p - fixed;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, 0, 1.0));
        for j in 1..fixed {
            t.push((i, j, normal(&mut r)));
        }
        t.push((i, fixed + i, 1.0));
    }
    let design = CscMatrix::from_triplets(n, p, &t).unwrap();
    let rho: f64 = r.random_range(0.2..0.9);
    let family = if r.random::<bool>() { LikelihoodFamily::BinomialLogit { trials: 2 } } else { LikelihoodFamily::Poisson };
    let y = (0..n)
        .map(|_| {
            let eta = -0.5 + 0.5 * normal(&mut r);
            simulate_response(&mut r, &family, eta)
        })
        .collect();
    let model = LatentModel {
        design,
        blocks: vec![
            PriorBlock::Fixed { size: fixed, precision: 0.1 },
            PriorBlock::Ar1 { size: n, rho: Param::Fixed(rho), precision: Param::Fixed(2.0) },
        ],
        likelihood: family,
        hyperprior: vec![],
        fixed_theta: Some(vec![]),
    };
    (model, Dataset::new(y))
}
