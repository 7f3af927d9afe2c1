mod common;

use nalgebra::{DMatrix, DVector};
use skewinla::experiments::{simulate, ExperimentName, SimulationSettings};
use skewinla::gaussian::{laplace_fit, LaplaceOptions};
use skewinla::inla::{explore_theta, log_theta_posterior};
use skewinla::io::ModelFile;
use skewinla::likelihood::{LikelihoodFamily, Param};
use skewinla::model::{Hyperprior, PriorBlock};
use skewinla::special::LN_SQRT_2PI;
use skewinla::{fit_inla, Dataset, Error, InlaOptions, LatentModel, Strategy};

/// Gaussian likelihood with unknown log precision θ₀: the Laplace step is
/// exact, so `p(θ | y)` is known up to the hyperprior.
fn gaussian_with_free_precision() -> (LatentModel, Dataset) {
    let mut c = common::conjugate(21, 30, 2, 4);
    c.model.likelihood = LikelihoodFamily::Gaussian { precision: Param::Theta(0) };
    c.model.hyperprior = vec![Hyperprior::LogGamma { shape: 1.0, rate: 0.1 }];
    c.model.fixed_theta = None;
    (c.model, c.data)
}

fn exact_log_evidence(model: &LatentModel, data: &Dataset, theta: &[f64]) -> f64 {
    let a = model.design.to_dense_f64();
    let cov = model.prior_precision(theta).unwrap().to_dense_f64().try_inverse().unwrap();
    let n = data.len();
    let s = &a * cov * a.transpose() + DMatrix::identity(n, n) * (-theta[0]).exp();
    let chol = s.cholesky().unwrap();
    let y = DVector::from_vec(data.y.clone());
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * y.dot(&chol.solve(&y)) - 0.5 * log_det - LN_SQRT_2PI * n as f64
}

#[test]
fn theta_posterior_is_exact_for_a_gaussian_likelihood() {
    let (model, data) = gaussian_with_free_precision();
    for t in [-1.0, 0.0, 0.7, 2.0] {
        let got = log_theta_posterior(&model, &data, &[t]).unwrap();
        let exact = exact_log_evidence(&model, &data, &[t]) + model.log_hyperprior(&[t]);
        assert!((got - exact).abs() < 1e-8, "θ = {t}: {got} vs {exact}");
    }
}

#[test]
fn latent_marginals_mix_the_conditionals() {
    let (model, data) = gaussian_with_free_precision();
    let fit = fit_inla(&model, &data, Strategy::Gaussian, &InlaOptions::default()).unwrap();
    let w = fit.report.theta_grid.weights();
    assert!(w.len() > 1);
    assert_eq!(w.len(), fit.conditionals.len());
    for m in &fit.report.marginals {
        let k = m.index;
        let mean: f64 = w.iter().zip(&fit.conditionals).map(|(w, c)| w * c.mean()[k]).sum();
        let second: f64 = w.iter().zip(&fit.conditionals).map(|(w, c)| w * (c.sd()[k].powi(2) + c.mean()[k].powi(2))).sum();
        let sd = (second - mean * mean).sqrt();
        assert!((m.mean - mean).abs() < 1e-4 * sd, "{k}");
        assert!((m.sd / sd - 1.0).abs() < 1e-3, "{k}");
        assert!((m.density.mass() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn theta_grid_is_centred_on_the_mode() {
    let (model, data) = gaussian_with_free_precision();
    let grid = explore_theta(&model, &data).unwrap();
    let h = 1e-4;
    let f = |t: f64| log_theta_posterior(&model, &data, &[t]).unwrap();
    let slope = (f(grid.mode[0] + h) - f(grid.mode[0] - h)) / (2.0 * h);
    assert!(slope.abs() < 1e-3, "{slope}");
    assert!(grid.curvature[0][0] > 0.0);
}

#[test]
fn invalid_models_are_reported_before_fitting() {
    let (mut model, data) = common::random_glmm(0, &LikelihoodFamily::Poisson, 10, 2, 2);
    let mut bad = data.clone();
    bad.y[3] = -1.0;
    assert!(matches!(fit_inla(&model, &bad, Strategy::Gaussian, &InlaOptions::default()), Err(Error::InvalidModel(_))));
    model.blocks = vec![PriorBlock::Fixed { size: 2, precision: 0.1 }];
    assert!(fit_inla(&model, &data, Strategy::Gaussian, &InlaOptions::default()).is_err());
}

#[test]
fn stage_failures_name_the_stage() {
    let (model, data) = common::random_glmm(0, &LikelihoodFamily::Poisson, 10, 2, 2);
    let opts = InlaOptions { correction_set: Some(vec![40]), ..InlaOptions::default() };
    let err = fit_inla(&model, &data, Strategy::VbMean, &opts).unwrap_err();
    assert!(err.to_string().contains("vb-mean"), "{err}");
    assert!(matches!(err.root(), Error::InvalidParameter(_)));
}

#[test]
fn reports_are_deterministic() {
    let e = simulate(ExperimentName::SensSpec, Some(30), 4, &SimulationSettings::default()).unwrap();
    let run = || {
        let fit = fit_inla(&e.model, &e.data, Strategy::SgcVb, &InlaOptions::default()).unwrap();
        let mut buf = Vec::new();
        skewinla::io::write_report_json(&mut buf, &fit.report).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn simulators_depend_only_on_the_seed() {
    let s = SimulationSettings::default();
    for name in ExperimentName::ALL {
        let a = simulate(name, None, 5, &s).unwrap();
        let b = simulate(name, None, 5, &s).unwrap();
        let c = simulate(name, None, 6, &s).unwrap();
        assert_eq!(a.data.y, b.data.y, "{name}");
        assert_eq!(a.model, b.model, "{name}");
        assert!(a.data.y != c.data.y || a.model.design != c.model.design, "{name}");
        assert_eq!(a.data.len(), name.default_n());
        assert_eq!(a.tracked.len(), a.param_names.len());
        assert!(skewinla::model::validate_model(&a.model, &a.data).is_ok(), "{name}");
        assert_eq!(name.as_str().parse::<ExperimentName>().unwrap(), name);
    }
    assert!(simulate(ExperimentName::Gpd, Some(0), 0, &s).is_err());
    assert!("nope".parse::<ExperimentName>().is_err());
}

#[test]
fn model_files_round_trip() {
    let e = simulate(ExperimentName::ImbalancedLogistic, None, 2, &SimulationSettings::default()).unwrap();
    let mut buf = Vec::new();
    ModelFile::new(&e.model, &e.data).write(&mut buf).unwrap();
    let (model, data) = ModelFile::read(buf.as_slice()).unwrap().into_parts().unwrap();
    assert_eq!(model, e.model);
    assert_eq!(data.y, e.data.y);
}

#[test]
fn single_precision_laplace_tracks_double() {
    let (model, data) = common::random_glmm(1, &LikelihoodFamily::Poisson, 40, 3, 4);
    let g64 = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let t: Vec<(usize, usize, f32)> = model.design.triplets().into_iter().map(|(i, j, v)| (i, j, v as f32)).collect();
    let model32: skewinla::model::LatentModel<f32> = skewinla::model::LatentModel {
        design: skewinla::sparse::CscMatrix::from_triplets(40, 7, &t).unwrap(),
        blocks: model.blocks.clone(),
        likelihood: model.likelihood.clone(),
        hyperprior: vec![],
        fixed_theta: Some(vec![]),
    };
    let data32 = skewinla::model::Dataset::new(data.y.iter().map(|&v| v as f32).collect());
    let opts = LaplaceOptions { tol: 1e-4, ..LaplaceOptions::default() };
    let g32 = laplace_fit(&model32, &data32, &[], None, opts).unwrap();
    for (a, b) in g32.mean.iter().zip(&g64.mean) {
        assert!((*a as f64 - b).abs() < 1e-3, "{a} vs {b}");
    }
    let v32 = g32.marginal_variances();
    for (a, b) in v32.iter().zip(g64.marginal_variances()) {
        assert!((*a as f64 / b - 1.0).abs() < 1e-3);
    }
}
