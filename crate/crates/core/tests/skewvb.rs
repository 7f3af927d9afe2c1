mod common;

use common::{random_ar1_model, random_glmm};
use skewinla::gaussian::{laplace_fit, LaplaceOptions};
use skewinla::likelihood::LikelihoodFamily;
use skewinla::quadrature::Rule;
use skewinla::skewnormal::SkewNormalStd;
use skewinla::skewvb::{
    block_split, eta_density_blocked, eta_density_fft, expected_nll_sgc, optimize_skewness, select_block, whiten, DensityEngine, DensityPath,
    FftGrid, SkewOptions, SnCdfTable,
};
use skewinla::special::ln_factorial;
use skewinla::{CscMatrix, Dataset, LatentModel};

fn engine() -> DensityEngine {
    DensityEngine::new(FftGrid::default()).unwrap()
}

#[test]
fn whitened_coefficients_carry_the_predictor_variance() {
    let (model, data) = random_ar1_model(4, 40);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let order: Vec<usize> = (0..40).rev().collect();
    let w = whiten(&g, &model.design, &order, 1000).unwrap();
    for (i, (m, v)) in g.eta_marginals(&model.design).into_iter().enumerate() {
        let s: f64 = w.coeffs.row(i).iter().map(|c| c * c).sum();
        assert!((s - v).abs() < 1e-10 * v, "{i}");
        assert!((w.eta_mean[i] - m).abs() < 1e-12);
    }
    assert!(whiten(&g, &model.design, &order, 10).is_err());
    assert!(whiten(&g, &model.design, &[0, 0], 1000).is_err());
}

#[test]
fn gaussian_lattice_gives_the_closed_form_expectation() {
    let (model, data) = random_glmm(2, &LikelihoodFamily::Poisson, 30, 3, 4);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let w = whiten(&g, &model.design, &(0..g.dim()).collect::<Vec<_>>(), 1000).unwrap();
    let dens = eta_density_fft(&w, &[], &engine()).unwrap();
    let got = expected_nll_sgc(&model, &data, &[], &dens).unwrap();
    let exact: f64 = g
        .eta_marginals(&model.design)
        .iter()
        .zip(&data.y)
        .map(|(&(m, v), &y)| (m + 0.5 * v).exp() - y * m + ln_factorial(y))
        .sum();
    assert!((got - exact).abs() < 1e-6 * exact, "{got} vs {exact}");
}

#[test]
fn skewed_lattice_expectation_matches_quadrature() {
    let (model, data) = random_glmm(5, &LikelihoodFamily::Poisson, 12, 2, 3);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let w = whiten(&g, &model.design, &(0..g.dim()).collect::<Vec<_>>(), 1000).unwrap();
    let s = 0.6;
    let dens = eta_density_fft(&w, &[(0, s)], &engine()).unwrap();
    let got = expected_nll_sgc(&model, &data, &[], &dens).unwrap();
    // η = m + c₀ X + N(0, r): E[e^η] = e^{m + r/2} E[e^{c₀ X}], E[η] = m.
    let law = SkewNormalStd::new(s).unwrap();
    let gh = Rule::gauss_hermite_normal(80);
    let exact: f64 = (0..data.len())
        .map(|i| {
            let c0 = w.coeffs[(i, 0)];
            let r: f64 = w.coeffs.row(i).iter().skip(1).map(|c| c * c).sum();
            let mgf = gh.expect_normal(0.0, 1.0, |z| (c0 * law.map(z).0).exp());
            (w.eta_mean[i] + 0.5 * r).exp() * mgf - data.y[i] * w.eta_mean[i] + ln_factorial(data.y[i])
        })
        .sum();
    assert!((got - exact).abs() < 1e-5 * exact, "{got} vs {exact}");
}

#[test]
fn blocked_and_dense_paths_agree() {
    let (model, data) = random_ar1_model(8, 50);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let set = [0, 1, 2];
    let block = select_block(&g.precision, 0, &set, 4);
    assert_eq!(block.len(), 4);
    assert_eq!(&block[..3], &set);
    let mut order = block.clone();
    order.extend((0..50).filter(|j| !block.contains(j)));
    let w = whiten(&g, &model.design, &order, 1000).unwrap();
    let split = block_split(&g, &model.design, block).unwrap();
    let assignment = [(0, 0.7), (1, -0.5), (2, 0.3)];
    let e = engine();
    let a = eta_density_fft(&w, &assignment, &e).unwrap();
    let b = eta_density_blocked(&split, &assignment, &e).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.sup_distance(y) < 1e-8);
        assert!((x.mass() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn table_cdf_and_engine_reproduce_the_law() {
    let t = SnCdfTable::new(-0.85).unwrap();
    let law = SkewNormalStd::new(-0.85).unwrap();
    for x in [-4.0, -1.2, 0.0, 0.9, 2.2] {
        assert!((t.cdf(x) - law.cdf(x)).abs() < 1e-9, "{x}");
    }
    let d = engine().density(2.0, 0.25, &[(1.5, &t)]).unwrap();
    let m = d.moments();
    assert!((m.mean - 2.0).abs() < 1e-6);
    assert!((m.sd * m.sd - (0.25 + 2.25)).abs() < 1e-5);
    let skew = -0.85 * 1.5f64.powi(3) / 2.5f64.powf(1.5);
    assert!((m.skewness - skew).abs() < 1e-4, "{} vs {skew}", m.skewness);
}

fn transformed(model: &LatentModel, f: impl Fn(usize, usize, f64) -> (usize, usize, f64)) -> LatentModel {
    let t: Vec<_> = model.design.triplets().into_iter().map(|(i, j, v)| f(i, j, v)).collect();
    LatentModel { design: CscMatrix::from_triplets(model.design.nrows(), model.design.ncols(), &t).unwrap(), ..model.clone() }
}

fn fitted_skewness(model: &LatentModel, data: &Dataset, set: &[usize]) -> Vec<f64> {
    let g = laplace_fit(model, data, &[], None, LaplaceOptions::default()).unwrap();
    let opts = SkewOptions { tol: 1e-6, ..SkewOptions::default() };
    let fit = optimize_skewness(model, data, &[], &g, set, &opts).unwrap();
    assert_eq!(fit.path, DensityPath::Fft);
    assert!(fit.components.iter().all(|c| c.objective <= c.objective_at_zero));
    fit.skewness
}

#[test]
fn reflecting_the_field_reflects_the_skewness() {
    let (model, data) = random_glmm(6, &LikelihoodFamily::Poisson, 25, 3, 3);
    let set = [0, 1, 2];
    let s = fitted_skewness(&model, &data, &set);
    let neg = transformed(&model, |i, j, v| (i, j, -v));
    let r = fitted_skewness(&neg, &data, &set);
    assert!(s[0].abs() > 0.01, "{s:?}");
    for k in set {
        assert!((s[k] + r[k]).abs() < 1e-3, "{s:?} vs {r:?}");
    }
}

#[test]
fn relabelling_fixed_effects_permutes_the_skewness() {
    let (model, data) = random_glmm(7, &LikelihoodFamily::BinomialLogit { trials: 2 }, 30, 3, 3);
    let set = [0, 1, 2];
    let s = fitted_skewness(&model, &data, &set);
    let swap = |j: usize| match j {
        1 => 2,
        2 => 1,
        j => j,
    };
    let sw = transformed(&model, |i, j, v| (i, swap(j), v));
    let r = fitted_skewness(&sw, &data, &set);
    for k in set {
        assert!((s[k] - r[swap(k)]).abs() < 1e-3, "{s:?} vs {r:?}");
    }
}

#[test]
fn blocked_path_fits_the_same_skewness() {
    let (model, data) = random_ar1_model(3, 30);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    let set = [0, 1];
    let dense = optimize_skewness(&model, &data, &[], &g, &set, &SkewOptions { path: DensityPath::Fft, tol: 1e-6, ..SkewOptions::default() }).unwrap();
    let blocked =
        optimize_skewness(&model, &data, &[], &g, &set, &SkewOptions { path: DensityPath::Blocked, block_size: 5, tol: 1e-6, ..SkewOptions::default() }).unwrap();
    for k in set {
        assert!((dense.skewness[k] - blocked.skewness[k]).abs() < 1e-4, "{:?} vs {:?}", dense.skewness, blocked.skewness);
    }
}

#[test]
fn out_of_range_component_is_rejected() {
    let (model, data) = random_glmm(0, &LikelihoodFamily::Poisson, 10, 2, 0);
    let g = laplace_fit(&model, &data, &[], None, LaplaceOptions::default()).unwrap();
    assert!(optimize_skewness(&model, &data, &[], &g, &[5], &SkewOptions::default()).is_err());
    assert!(DensityEngine::new(FftGrid { points: 1000, ..FftGrid::default() }).is_err());
}
