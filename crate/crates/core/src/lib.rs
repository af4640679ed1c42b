//! Spatial gradient analysis for jointly modelled Gaussian-process surfaces.
//!
//! A response `Y` and covariate `X` are modelled as `X = α₀ + w_x`,
//! `Y = β₀ + β₁X + w_y` with independent Matérn (ν = 3/2) fields. The crate
//! provides the kernel and its derivatives, Bayesian fitting, exact joint
//! predictive draws of levels and gradients, the directional sensitivity
//! ratio and angular discrepancy processes, and an LGCP variant for point
//! patterns.

pub mod error;
pub mod gradient;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod lgcp;
pub mod linalg;
pub mod model;
pub mod processes;
pub mod special;

pub use error::{Error, Result};
pub use gradient::{
    composition_sample, conditional_gradient_distribution, draw_joint_gradients, stream_rng,
    CompositionDraws, ConditionalGaussian, GradientDraw, PredictionTargets, Target, TargetDraw,
};
pub use grid::{GridSpec, SurfaceGrid, Window};
pub use kernel::{
    cov_matern32, grad_matern32, hess_matern32, local_cov_block, BivariateKernel, Component,
    Field, Functional, JointCovBlock, Location, MaternParams, SeparationVector, UnitVector,
};
pub use lgcp::{
    fit_lgcp, intensity_gradient_surface, intensity_sensitivity_surfaces, lgcp_log_likelihood,
    minimum_contrast_phi, simulate_lgcp, CovariateObservations, IntensitySurface, LgcpChain,
    LgcpPriors, LgcpSample, PointPattern, SurfaceOptions,
};
pub use model::{
    fit_covariate_mcmc, fit_mcmc, log_likelihood, simulate_bivariate_gp, CovariateChain,
    CovariateSample, Dataset, McmcConfig, PosteriorChain, Prior, PriorSpec, ThetaSample,
};
pub use processes::{
    angle_density, angle_of, cauchy_scale, chain_rule_transform, directional_derivative, disc,
    joint_ratio_cdf, lds_ratio, summarize_surface, AngleDensityParams, AngleSample, Link,
    Statistic,
};
