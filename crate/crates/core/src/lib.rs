//! Approximate Bayesian inference for latent Gaussian models: Laplace
//! approximation, low-rank variational mean and variance corrections,
//! skewed Gaussian-copula marginals and a nested grid over hyperparameters.
//!
//! The linear algebra, likelihood and distribution kernels are generic over
//! [`scalar::Real`]; the pipeline runs in `f64`, and the aliases below name
//! the `f64` instances.

pub mod cholesky;
pub mod density;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod inla;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sgc;
pub mod skewnormal;
pub mod skewvb;
pub mod sparse;
pub mod special;
pub mod vb;

pub use error::{Error, Result};
pub use inla::{fit_inla, FitReport, InlaOptions, Strategy};
pub use scalar::Real;

pub type CscMatrix = sparse::CscMatrix<f64>;
pub type CholeskyFactor = cholesky::CholeskyFactor<f64>;
pub type SelectedInverse = cholesky::SelectedInverse<f64>;
pub type DensityGrid = density::DensityGrid<f64>;
pub type GaussianApprox = gaussian::GaussianApprox<f64>;
pub type LatentModel = model::LatentModel<f64>;
pub type Dataset = model::Dataset<f64>;
pub type SgcDistribution = sgc::SgcDistribution<f64>;
