//! The conditional bivariate Gaussian-process data model:
//!
//! ```text
//! X(s)      = α₀ + w_x(s),              w_x ~ GP(0, σ²_x ρ(·; φ_x))
//! Y(s)|X(s) = β₀ + β₁X(s) + w_y(s),     w_y ~ GP(0, σ²_y ρ(·; φ_y))
//! ```
//!
//! with Matérn ν = 3/2 correlations. Fitting uses a blocked adaptive
//! random-walk Metropolis sampler on transformed parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{covariance_matrix, check_distinct, Functional, Location, MaternParams};
use crate::linalg::{standard_normal_vector, Factor};

/// One draw of the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSample {
    pub alpha0: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub phi_x: f64,
    pub phi_y: f64,
}

impl ThetaSample {
    pub const NAMES: [&'static str; 7] = [
        "alpha0", "beta0", "beta1", "sigma2_x", "sigma2_y", "phi_x", "phi_y",
    ];

    /// The simulation truths used for the desk-scale reproduction.
    pub fn simulation_truth() -> Self {
        Self {
            alpha0: 0.0,
            beta0: 0.0,
            beta1: 0.5,
            sigma2_x: 1.0,
            sigma2_y: 1.0,
            phi_x: 1.05,
            phi_y: 1.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} = {v} is not finite")));
            }
        }
        self.k_params()?;
        self.g_params()?;
        Ok(())
    }

    /// Covariance of the response residual field.
    pub fn k_params(&self) -> Result<MaternParams> {
        MaternParams::new(self.sigma2_y, self.phi_y)
    }

    /// Covariance of the covariate field.
    pub fn g_params(&self) -> Result<MaternParams> {
        MaternParams::new(self.sigma2_x, self.phi_x)
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.alpha0,
            self.beta0,
            self.beta1,
            self.sigma2_x,
            self.sigma2_y,
            self.phi_x,
            self.phi_y,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            alpha0: a[0],
            beta0: a[1],
            beta1: a[2],
            sigma2_x: a[3],
            sigma2_y: a[4],
            phi_x: a[5],
            phi_y: a[6],
        }
    }
}

/// Co-located covariate and response observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    locations: Vec<Location>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(locations: Vec<Location>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if locations.len() != x.len() || x.len() != y.len() {
            return Err(Error::Domain(format!(
                "dataset lengths differ: {} locations, {} x, {} y",
                locations.len(),
                x.len(),
                y.len()
            )));
        }
        if let Some(v) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("observation {v} is not finite")));
        }
        check_distinct(&locations)?;
        Ok(Self { locations, x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.locations[i]).collect(),
            idx.iter().map(|&i| self.x[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

/// Prior for a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Prior {
    Normal { mean: f64, var: f64 },
    InverseGamma { shape: f64, scale: f64 },
    Uniform { lower: f64, upper: f64 },
    PointMass { value: f64 },
}

impl Prior {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Prior::Normal { mean, var } => mean.is_finite() && var.is_finite() && var >= 0.0,
            Prior::InverseGamma { shape, scale } => shape > 0.0 && scale > 0.0,
            Prior::Uniform { lower, upper } => {
                lower.is_finite() && upper.is_finite() && lower <= upper
            }
            Prior::PointMass { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("improper prior for {name}: {self:?}")))
        }
    }

    /// The single support point of a degenerate prior.
    pub fn point(&self) -> Option<f64> {
        match *self {
            Prior::Normal { mean, var } if var == 0.0 => Some(mean),
            Prior::Uniform { lower, upper } if lower == upper => Some(lower),
            Prior::PointMass { value } => Some(value),
            _ => None,
        }
    }

    /// Log density, up to an additive constant.
    pub fn ln_density(&self, v: f64) -> f64 {
        match *self {
            Prior::Normal { mean, var } => -0.5 * (v - mean).powi(2) / var,
            Prior::InverseGamma { shape, scale } => {
                if v > 0.0 {
                    -(shape + 1.0) * v.ln() - scale / v
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Uniform { lower, upper } => {
                if v > lower && v < upper {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::PointMass { .. } => 0.0,
        }
    }

    pub(crate) fn transform(&self) -> Transform {
        if self.point().is_some() {
            return Transform::Fixed;
        }
        match *self {
            Prior::Normal { .. } => Transform::Identity,
            Prior::InverseGamma { .. } => Transform::Log,
            Prior::Uniform { lower, upper } => Transform::Logit { lower, upper },
            Prior::PointMass { .. } => Transform::Fixed,
        }
    }
}

/// Maps between the natural and the unconstrained sampling scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    Fixed,
    Identity,
    Log,
    Logit { lower: f64, upper: f64 },
}

impl Transform {
    pub(crate) fn to_unconstrained(&self, v: f64) -> f64 {
        match *self {
            Transform::Fixed | Transform::Identity => v,
            Transform::Log => v.ln(),
            Transform::Logit { lower, upper } => {
                let p = (v - lower) / (upper - lower);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub(crate) fn to_natural(&self, z: f64) -> f64 {
        match *self {
            Transform::Fixed | Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit { lower, upper } => {
                let p = 1.0 / (1.0 + (-z).exp());
                lower + (upper - lower) * p
            }
        }
    }

    /// `log |d natural / d z|` at natural value `v`.
    pub(crate) fn ln_jacobian(&self, v: f64) -> f64 {
        match *self {
            Transform::Fixed | Transform::Identity => 0.0,
            Transform::Log => v.ln(),
            Transform::Logit { lower, upper } => {
                ((v - lower) * (upper - v) / (upper - lower)).ln()
            }
        }
    }
}

/// Priors for all seven parameters. Missing entries take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub alpha0: Prior,
    pub beta0: Prior,
    pub beta1: Prior,
    pub sigma2_x: Prior,
    pub sigma2_y: Prior,
    pub phi_x: Prior,
    pub phi_y: Prior,
}

impl Default for PriorSpec {
    /// `N(0, 100)` for means and slope, `IG(2, 0.1)` for variances and
    /// `U(0.5, 10)` for decays.
    fn default() -> Self {
        let normal = Prior::Normal { mean: 0.0, var: 100.0 };
        let ig = Prior::InverseGamma { shape: 2.0, scale: 0.1 };
        let unif = Prior::Uniform { lower: 0.5, upper: 10.0 };
        Self {
            alpha0: normal,
            beta0: normal,
            beta1: normal,
            sigma2_x: ig,
            sigma2_y: ig,
            phi_x: unif,
            phi_y: unif,
        }
    }
}

impl PriorSpec {
    pub fn as_array(&self) -> [Prior; 7] {
        [
            self.alpha0,
            self.beta0,
            self.beta1,
            self.sigma2_x,
            self.sigma2_y,
            self.phi_x,
            self.phi_y,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, prior) in ThetaSample::NAMES.iter().zip(self.as_array()) {
            prior.validate(name)?;
        }
        for (name, prior) in [("sigma2_x", self.sigma2_x), ("sigma2_y", self.sigma2_y)] {
            if matches!(prior, Prior::Normal { .. } | Prior::Uniform { .. }) {
                return Err(Error::Config(format!("{name} needs an inverse-gamma or point prior")));
            }
        }
        for (name, prior) in [("phi_x", self.phi_x), ("phi_y", self.phi_y)] {
            match prior {
                Prior::Uniform { lower, .. } if lower > 0.0 => {}
                Prior::PointMass { value } if value > 0.0 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{name} needs a uniform prior on positive bounds"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn default_proposal_scales() -> [f64; 7] {
    [0.1; 7]
}

fn default_adapt_target() -> f64 {
    0.44
}

fn default_adapt_window() -> usize {
    25
}

fn yes() -> bool {
    true
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk standard deviations on the unconstrained scale,
    /// ordered as [`ThetaSample::NAMES`].
    #[serde(default = "default_proposal_scales")]
    pub proposal_scales: [f64; 7],
    /// Target acceptance rate for the burn-in scale adaptation.
    #[serde(default = "default_adapt_target")]
    pub adapt_target: f64,
    /// Iterations per adaptation batch.
    #[serde(default = "default_adapt_window")]
    pub adapt_window: usize,
    /// When false the likelihood is dropped and the chain samples the prior.
    #[serde(default = "yes")]
    pub use_likelihood: bool,
}

impl Default for McmcConfig {
    /// 10500 iterations, 500 burn-in, thinning 5: 2000 retained draws.
    fn default() -> Self {
        Self {
            iterations: 10_500,
            burn_in: 500,
            thin: 5,
            seed: 0,
            proposal_scales: default_proposal_scales(),
            adapt_target: default_adapt_target(),
            adapt_window: default_adapt_window(),
            use_likelihood: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("iterations, thin and adapt_window must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.proposal_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("proposal scales must be positive".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::Config("adapt_target must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of draws the chain will keep.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub(crate) fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }
}

/// Post-burn-in acceptance rate of each parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub covariate: f64,
    pub response: f64,
    pub regression: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub samples: Vec<ThetaSample>,
    pub acceptance: BlockAcceptance,
    pub config: McmcConfig,
    pub priors: PriorSpec,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Values of one parameter (index into [`ThetaSample::NAMES`]).
    pub fn trace(&self, param: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.to_array()[param]).collect()
    }
}

/// Covariate-only parameters `(α₀, σ²_x, φ_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSample {
    pub alpha0: f64,
    pub sigma2_x: f64,
    pub phi_x: f64,
}

impl CovariateSample {
    pub fn params(&self) -> Result<MaternParams> {
        MaternParams::new(self.sigma2_x, self.phi_x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateChain {
    pub samples: Vec<CovariateSample>,
    pub acceptance: f64,
    pub config: McmcConfig,
}

/// Correlation matrix factor for one decay value.
#[derive(Debug, Clone)]
struct CorrFactor {
    factor: Factor,
}

impl CorrFactor {
    fn new(locations: &[Location], phi: f64) -> Result<Self> {
        let params = MaternParams::new(1.0, phi)?;
        let pts: Vec<_> = locations.iter().map(|&s| (s, Functional::Level)).collect();
        let factor = Factor::new(covariance_matrix(&params, &pts), "Matérn correlation")?;
        Ok(Self { factor })
    }

    /// `log N(r; 0, σ² R)`.
    fn ln_density(&self, r: &DVector<f64>, sigma2: f64) -> f64 {
        let n = r.len() as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln()
            + self.factor.ln_det()
            + self.factor.quad_form(r) / sigma2)
    }
}

fn x_residual(x: &[f64], alpha0: f64) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().map(|v| v - alpha0))
}

fn y_residual(data: &Dataset, beta0: f64, beta1: f64) -> DVector<f64> {
    DVector::from_iterator(
        data.len(),
        data.y.iter().zip(&data.x).map(|(y, x)| y - beta0 - beta1 * x),
    )
}

/// `log N(x; α₀1, σ²_x R_x)`.
pub fn covariate_log_likelihood(
    locations: &[Location],
    x: &[f64],
    alpha0: f64,
    params: &MaternParams,
) -> Result<f64> {
    let f = CorrFactor::new(locations, params.phi())?;
    Ok(f.ln_density(&x_residual(x, alpha0), params.sigma2()))
}

/// `log N(x; α₀1, σ²_x R_x) + log N(y; β₀1 + β₁x, σ²_y R_y)`.
pub fn log_likelihood(theta: &ThetaSample, data: &Dataset) -> Result<f64> {
    theta.validate()?;
    let lx = covariate_log_likelihood(&data.locations, &data.x, theta.alpha0, &theta.g_params()?)?;
    let fy = CorrFactor::new(&data.locations, theta.phi_y)?;
    let ly = fy.ln_density(&y_residual(data, theta.beta0, theta.beta1), theta.sigma2_y);
    Ok(lx + ly)
}

const BLOCK_COVARIATE: [usize; 3] = [0, 3, 5];
const BLOCK_RESPONSE: [usize; 2] = [4, 6];
const BLOCK_REGRESSION: [usize; 2] = [1, 2];

/// Mutable state of the blocked sampler.
struct BlockSampler<'a> {
    locations: &'a [Location],
    x: &'a [f64],
    y: Option<&'a Dataset>,
    priors: [Prior; 7],
    transforms: [Transform; 7],
    cfg: &'a McmcConfig,
    theta: [f64; 7],
    rx: CorrFactor,
    ry: Option<CorrFactor>,
    ll_x: f64,
    ll_y: f64,
}

struct BlockState {
    params: Vec<usize>,
    log_scale: f64,
    batch_accepts: usize,
    batch_tries: usize,
    batches: usize,
    accepts: usize,
    tries: usize,
}

impl BlockState {
    fn new(params: &[usize], transforms: &[Transform; 7]) -> Self {
        Self {
            params: params
                .iter()
                .copied()
                .filter(|&p| transforms[p] != Transform::Fixed)
                .collect(),
            log_scale: 0.0,
            batch_accepts: 0,
            batch_tries: 0,
            batches: 0,
            accepts: 0,
            tries: 0,
        }
    }

    fn rate(&self) -> f64 {
        if self.tries == 0 {
            // A block with nothing to move is trivially always accepted.
            1.0
        } else {
            self.accepts as f64 / self.tries as f64
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Term {
    Covariate,
    Response,
}

impl<'a> BlockSampler<'a> {
    fn new(
        locations: &'a [Location],
        x: &'a [f64],
        y: Option<&'a Dataset>,
        priors: &PriorSpec,
        cfg: &'a McmcConfig,
    ) -> Result<Self> {
        let priors = priors.as_array();
        let transforms = priors.map(|p| p.transform());
        let theta = initial_theta(x, y, &priors);
        let rx = CorrFactor::new(locations, theta[5])?;
        let ry = match y {
            Some(_) => Some(CorrFactor::new(locations, theta[6])?),
            None => None,
        };
        let mut s = Self {
            locations,
            x,
            y,
            priors,
            transforms,
            cfg,
            theta,
            rx,
            ry,
            ll_x: 0.0,
            ll_y: 0.0,
        };
        s.ll_x = s.term_ll(Term::Covariate, &s.theta, None);
        if s.y.is_some() {
            s.ll_y = s.term_ll(Term::Response, &s.theta, None);
        }
        let lp: f64 = s.ll_x + s.ll_y + (0..7).map(|i| s.ln_prior_jac(i, s.theta[i])).sum::<f64>();
        if !lp.is_finite() {
            return Err(Error::NonFiniteInit(format!("log posterior {lp} at {:?}", s.theta)));
        }
        Ok(s)
    }

    fn ln_prior_jac(&self, i: usize, v: f64) -> f64 {
        match self.transforms[i] {
            Transform::Fixed => 0.0,
            t => self.priors[i].ln_density(v) + t.ln_jacobian(v),
        }
    }

    /// Log-likelihood term at `theta`, using `factor` if given or the cached one.
    fn term_ll(&self, term: Term, theta: &[f64; 7], factor: Option<&CorrFactor>) -> f64 {
        if !self.cfg.use_likelihood {
            return 0.0;
        }
        match term {
            Term::Covariate => {
                let f = factor.unwrap_or(&self.rx);
                f.ln_density(&x_residual(self.x, theta[0]), theta[3])
            }
            Term::Response => {
                let data = self.y.expect("response term needs a dataset");
                let f = factor.unwrap_or_else(|| self.ry.as_ref().unwrap());
                f.ln_density(&y_residual(data, theta[1], theta[2]), theta[4])
            }
        }
    }

    /// One Metropolis update of a block; returns whether it was accepted.
    fn update<R: Rng>(&mut self, block: &BlockState, term: Term, rng: &mut R) -> bool {
        if block.params.is_empty() {
            return true;
        }
        let scale = block.log_scale.exp();
        let mut prop = self.theta;
        for &p in &block.params {
            let t = self.transforms[p];
            let z = t.to_unconstrained(self.theta[p]);
            let step: f64 = rng.sample(rand_distr::StandardNormal);
            prop[p] = t.to_natural(z + scale * self.cfg.proposal_scales[p] * step);
        }
        let mut lp_old = 0.0;
        let mut lp_new = 0.0;
        for &p in &block.params {
            lp_old += self.ln_prior_jac(p, self.theta[p]);
            lp_new += self.ln_prior_jac(p, prop[p]);
        }
        if !lp_new.is_finite() {
            return false;
        }
        // A new decay needs a new correlation factor.
        let phi_idx = if term == Term::Covariate { 5 } else { 6 };
        let new_factor = if self.cfg.use_likelihood && prop[phi_idx] != self.theta[phi_idx] {
            match CorrFactor::new(self.locations, prop[phi_idx]) {
                Ok(f) => Some(f),
                Err(_) => return false,
            }
        } else {
            None
        };
        let ll_new = self.term_ll(term, &prop, new_factor.as_ref());
        let ll_old = if term == Term::Covariate { self.ll_x } else { self.ll_y };
        let log_ratio = ll_new + lp_new - ll_old - lp_old;
        let u: f64 = rng.random();
        if log_ratio.is_finite() && u.ln() < log_ratio {
            self.theta = prop;
            match term {
                Term::Covariate => {
                    self.ll_x = ll_new;
                    if let Some(f) = new_factor {
                        self.rx = f;
                    }
                }
                Term::Response => {
                    self.ll_y = ll_new;
                    if let Some(f) = new_factor {
                        self.ry = Some(f);
                    }
                }
            }
            true
        } else {
            false
        }
    }

    fn run<R: Rng>(&mut self, rng: &mut R) -> (Vec<[f64; 7]>, [f64; 3]) {
        let with_y = self.y.is_some();
        let mut blocks = vec![(BlockState::new(&BLOCK_COVARIATE, &self.transforms), Term::Covariate)];
        if with_y {
            blocks.push((BlockState::new(&BLOCK_RESPONSE, &self.transforms), Term::Response));
            blocks.push((BlockState::new(&BLOCK_REGRESSION, &self.transforms), Term::Response));
        }
        let mut kept = Vec::with_capacity(self.cfg.retained());
        for iter in 0..self.cfg.iterations {
            let adapting = iter < self.cfg.burn_in;
            for (block, term) in blocks.iter_mut() {
                let accepted = self.update(block, *term, rng);
                if adapting {
                    block.batch_tries += 1;
                    block.batch_accepts += accepted as usize;
                    if block.batch_tries == self.cfg.adapt_window {
                        // Robbins–Monro step on the log scale toward the target rate.
                        block.batches += 1;
                        let rate = block.batch_accepts as f64 / block.batch_tries as f64;
                        let gain = (block.batches as f64).powf(-0.6);
                        block.log_scale += gain * (rate - self.cfg.adapt_target) * 2.0;
                        block.batch_accepts = 0;
                        block.batch_tries = 0;
                    }
                } else if !block.params.is_empty() {
                    block.tries += 1;
                    block.accepts += accepted as usize;
                }
            }
            if self.cfg.keeps(iter) {
                kept.push(self.theta);
            }
        }
        let mut rates = [1.0; 3];
        for (k, (block, _)) in blocks.iter().enumerate() {
            rates[k] = block.rate();
        }
        (kept, rates)
    }
}

/// Starting point: least squares for the mean terms, moment estimates for
/// the variances, decays at the geometric mean of their bounds. Point-mass
/// priors override.
fn initial_theta(x: &[f64], data: Option<&Dataset>, priors: &[Prior; 7]) -> [f64; 7] {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let mut theta = [mx, 0.0, 0.0, vx.max(1e-6), 1.0, 1.0, 1.0];
    if let Some(d) = data {
        let my = d.y.iter().sum::<f64>() / n;
        let sxy = x.iter().zip(&d.y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>();
        let b1 = if vx > 0.0 { sxy / (n * vx) } else { 0.0 };
        let b0 = my - b1 * mx;
        let vr = x
            .iter()
            .zip(&d.y)
            .map(|(a, b)| (b - b0 - b1 * a).powi(2))
            .sum::<f64>()
            / n;
        theta[1] = b0;
        theta[2] = b1;
        theta[4] = vr.max(1e-6);
    }
    for (i, prior) in priors.iter().enumerate() {
        if let Some(v) = prior.point() {
            theta[i] = v;
            continue;
        }
        if let Prior::Uniform { lower, upper } = *prior {
            theta[i] = if lower > 0.0 {
                (lower * upper).sqrt()
            } else {
                0.5 * (lower + upper)
            };
        }
    }
    theta
}

/// Samples the posterior of all seven parameters.
pub fn fit_mcmc(data: &Dataset, priors: &PriorSpec, cfg: &McmcConfig) -> Result<PosteriorChain> {
    priors.validate()?;
    cfg.validate()?;
    if data.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 observations, got {}", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = BlockSampler::new(&data.locations, &data.x, Some(data), priors, cfg)?;
    let (kept, rates) = sampler.run(&mut rng);
    Ok(PosteriorChain {
        samples: kept.into_iter().map(ThetaSample::from_array).collect(),
        acceptance: BlockAcceptance {
            covariate: rates[0],
            response: rates[1],
            regression: rates[2],
        },
        config: cfg.clone(),
        priors: *priors,
    })
}

/// Samples the posterior of `(α₀, σ²_x, φ_x)` from covariate observations
/// alone. Only the covariate entries of `priors` are used.
pub fn fit_covariate_mcmc(
    locations: &[Location],
    x: &[f64],
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<CovariateChain> {
    priors.validate()?;
    cfg.validate()?;
    if locations.len() != x.len() || x.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 covariate observations with matching locations (got {} and {})",
            locations.len(),
            x.len()
        )));
    }
    check_distinct(locations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = BlockSampler::new(locations, x, None, priors, cfg)?;
    let (kept, rates) = sampler.run(&mut rng);
    Ok(CovariateChain {
        samples: kept
            .into_iter()
            .map(|t| CovariateSample {
                alpha0: t[0],
                sigma2_x: t[3],
                phi_x: t[5],
            })
            .collect(),
        acceptance: rates[0],
        config: cfg.clone(),
    })
}

/// Draws one exact realization of `(X, Y)` at `locations`.
pub fn simulate_bivariate_gp(
    locations: &[Location],
    theta: &ThetaSample,
    seed: u64,
) -> Result<Dataset> {
    theta.validate()?;
    check_distinct(locations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = locations.len();
    let pts: Vec<_> = locations.iter().map(|&s| (s, Functional::Level)).collect();
    let g = Factor::new(covariance_matrix(&theta.g_params()?, &pts), "covariate covariance")?;
    let k = if theta.phi_y == theta.phi_x {
        // Same correlation: rescale instead of refactorizing.
        None
    } else {
        Some(Factor::new(
            covariance_matrix(&theta.k_params()?, &pts),
            "response covariance",
        )?)
    };
    let wx = g.mul_lower(&standard_normal_vector(n, &mut rng));
    let z = standard_normal_vector(n, &mut rng);
    let wy = match &k {
        Some(k) => k.mul_lower(&z),
        None => g.mul_lower(&z) * (theta.sigma2_y / theta.sigma2_x).sqrt(),
    };
    let x: Vec<f64> = wx.iter().map(|w| theta.alpha0 + w).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(wy.iter())
        .map(|(xi, w)| theta.beta0 + theta.beta1 * xi + w)
        .collect();
    Dataset::new(locations.to_vec(), x, y)
}

/// `n` locations drawn uniformly on `[lo1, hi1] × [lo2, hi2]`.
pub fn uniform_locations(n: usize, window: [f64; 4], seed: u64) -> Vec<Location> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = window[0] + (window[1] - window[0]) * rng.random::<f64>();
            let b = window[2] + (window[3] - window[2]) * rng.random::<f64>();
            Location::new(a, b).expect("finite window")
        })
        .collect()
}

/// Dense `σ²R` for the given locations; exposed for diagnostics.
pub fn level_covariance(locations: &[Location], params: &MaternParams) -> DMatrix<f64> {
    let pts: Vec<_> = locations.iter().map(|&s| (s, Functional::Level)).collect();
    covariance_matrix(params, &pts)
}
