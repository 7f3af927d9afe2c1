mod common;

use nalgebra::DMatrix;
use skewinla::likelihood::LikelihoodFamily;
use skewinla::model::PriorBlock;
use skewinla::oracle::{chain_summary, effective_sample_size, exact_posterior_quadrature, rw_metropolis, rw_metropolis_target, MetropolisConfig};
use skewinla::{CscMatrix, Dataset, LatentModel};

fn poisson_intercept(y: Vec<f64>) -> (LatentModel, Dataset) {
    let n = y.len();
    let t: Vec<_> = (0..n).map(|i| (i, 0, 1.0)).collect();
    let model = LatentModel {
        design: CscMatrix::from_triplets(n, 1, &t).unwrap(),
        blocks: vec![PriorBlock::Fixed { size: 1, precision: 0.01 }],
        likelihood: LikelihoodFamily::Poisson,
        hyperprior: vec![],
        fixed_theta: Some(vec![]),
    };
    (model, Dataset::new(y))
}

#[test]
fn metropolis_recovers_a_standard_normal_target() {
    let cfg = MetropolisConfig { iterations: 60_000, burn_in: 6_000, chains: 2, seed: 3, ..MetropolisConfig::default() };
    let chains = rw_metropolis_target(|x| -0.5 * x.iter().map(|v| v * v).sum::<f64>(), &[2.0, -2.0], &DMatrix::identity(2, 2), &cfg).unwrap();
    let s = chain_summary(&chains, 0).unwrap();
    assert!((s.acceptance_rate - 0.234).abs() < 0.08, "{}", s.acceptance_rate);
    for p in &s.params {
        let mcse = p.sd / p.ess.sqrt();
        assert!(p.mean.abs() < 4.0 * mcse, "{} ± {mcse}", p.mean);
        assert!((p.sd - 1.0).abs() < 0.05);
        assert!(p.skewness.abs() < 0.1);
    }
}

#[test]
fn metropolis_is_reproducible_per_seed() {
    let (model, data) = poisson_intercept(vec![0.0, 2.0, 1.0, 4.0]);
    let cfg = MetropolisConfig { iterations: 2_000, burn_in: 200, chains: 2, seed: 9, ..MetropolisConfig::default() };
    let a = rw_metropolis(&model, &data, &[], &cfg).unwrap();
    let b = rw_metropolis(&model, &data, &[], &cfg).unwrap();
    assert_eq!(a[0].draws, b[0].draws);
    assert_ne!(a[0].draws, a[1].draws);
}

#[test]
fn quadrature_and_metropolis_agree_in_one_dimension() {
    let (model, data) = poisson_intercept(vec![0.0, 1.0, 0.0, 3.0, 1.0, 0.0]);
    let q = exact_posterior_quadrature(&model, &data, &[], 4001, 12.0).unwrap();
    let exact = q.marginals[0].moments();
    let cfg = MetropolisConfig { iterations: 100_000, burn_in: 10_000, chains: 2, seed: 1, ..MetropolisConfig::default() };
    let chains = rw_metropolis(&model, &data, &[], &cfg).unwrap();
    let s = chain_summary(&chains, 0).unwrap();
    let p = &s.params[0];
    assert!((p.mean - exact.mean).abs() < 4.0 * p.sd / p.ess.sqrt());
    assert!((p.sd / exact.sd - 1.0).abs() < 0.02);
    assert!((p.skewness - exact.skewness).abs() < 0.05);
    // Kolmogorov distance between the pooled draws and the exact CDF.
    let mut draws: Vec<f64> = chains.iter().flat_map(|c| c.draws.iter().map(|r| r[0])).collect();
    draws.sort_by(f64::total_cmp);
    let grid = &q.marginals[0];
    let mut cdf = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cdf[i] = cdf[i - 1] + 0.5 * grid.step * (grid.density[i - 1] + grid.density[i]);
    }
    let n = draws.len() as f64;
    let mut ks: f64 = 0.0;
    let mut j = 0;
    for i in 0..grid.len() {
        while j < draws.len() && draws[j] <= grid.x(i) {
            j += 1;
        }
        ks = ks.max((j as f64 / n - cdf[i]).abs());
    }
    assert!(ks < 0.02, "{ks}");
}

#[test]
fn quadrature_is_stable_under_refinement() {
    let (model, data) = poisson_intercept(vec![2.0, 5.0, 3.0, 4.0, 1.0, 6.0]);
    let coarse = exact_posterior_quadrature(&model, &data, &[], 1001, 12.0).unwrap().marginals[0].moments();
    let fine = exact_posterior_quadrature(&model, &data, &[], 8001, 14.0).unwrap().marginals[0].moments();
    assert!((coarse.mean - fine.mean).abs() < 1e-8);
    assert!((coarse.sd - fine.sd).abs() < 1e-8);
    assert!((coarse.skewness - fine.skewness).abs() < 1e-6);
}

#[test]
fn two_dimensional_quadrature_returns_a_joint_table() {
    let (model, data) = common::random_glmm(0, &LikelihoodFamily::Poisson, 8, 2, 0);
    let q = exact_posterior_quadrature(&model, &data, &[], 201, 8.0).unwrap();
    assert_eq!(q.marginals.len(), 2);
    assert_eq!(q.table.as_ref().unwrap().len(), 201 * 201);
    for m in &q.marginals {
        assert!((m.mass() - 1.0).abs() < 1e-6);
    }
    let (model3, data3) = common::random_glmm(0, &LikelihoodFamily::Poisson, 8, 3, 0);
    assert!(exact_posterior_quadrature(&model3, &data3, &[], 51, 8.0).is_err());
}

#[test]
fn effective_sample_size_of_autoregressive_noise() {
    let mut r = common::rng(4);
    let phi = 0.8;
    let mut x = vec![0.0; 200_000];
    for t in 1..x.len() {
        x[t] = phi * x[t - 1] + common::normal(&mut r);
    }
    let ess = effective_sample_size(&x);
    let expected = x.len() as f64 * (1.0 - phi) / (1.0 + phi);
    assert!((ess / expected - 1.0).abs() < 0.1, "{ess} vs {expected}");
    let iid: Vec<f64> = (0..50_000).map(|_| common::normal(&mut r)).collect();
    assert!((effective_sample_size(&iid) / 50_000.0 - 1.0).abs() < 0.1);
}

#[test]
fn dimension_above_the_limit_is_refused() {
    let (model, data) = common::random_ar1_model(0, 210);
    assert!(rw_metropolis(&model, &data, &[], &MetropolisConfig { iterations: 10, burn_in: 0, ..MetropolisConfig::default() }).is_err());
}
