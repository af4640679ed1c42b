//! Posterior-predictive inference for surface levels and gradients at
//! unobserved locations: Gaussian conditioning on the observed levels,
//! exact joint draws, and composition over posterior parameter draws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{
    check_distinct, covariance_matrix, cross_covariance_matrix, BivariateKernel, Component,
    CrossCovariance, Field, Location, DUPLICATE_TOL,
};
use crate::linalg::{standard_normal_vector, Factor};
use crate::model::{Dataset, ThetaSample};

/// Offset applied to targets that coincide with an observation when
/// nudging is enabled.
pub const NUDGE: f64 = 1e-6;

/// Composition fails outright above this fraction of failed draws.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// RNG for the `index`-th independent stream under a master seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub location: Location,
    pub want_level: bool,
    pub want_gradient: bool,
}

/// Prediction locations with per-target flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTargets {
    targets: Vec<Target>,
    nudge_coincident: bool,
}

impl PredictionTargets {
    pub fn new(targets: Vec<Target>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Domain("no prediction targets".into()));
        }
        if let Some(t) = targets.iter().find(|t| !t.want_level && !t.want_gradient) {
            return Err(Error::Domain(format!(
                "target ({}, {}) requests nothing",
                t.location.s1(),
                t.location.s2()
            )));
        }
        Ok(Self {
            targets,
            nudge_coincident: false,
        })
    }

    /// Gradients only at every location.
    pub fn gradients(locations: &[Location]) -> Result<Self> {
        Self::with_flags(locations, false, true)
    }

    /// Levels and gradients at every location.
    pub fn levels_and_gradients(locations: &[Location]) -> Result<Self> {
        Self::with_flags(locations, true, true)
    }

    pub fn with_flags(locations: &[Location], want_level: bool, want_gradient: bool) -> Result<Self> {
        Self::new(
            locations
                .iter()
                .map(|&location| Target {
                    location,
                    want_level,
                    want_gradient,
                })
                .collect(),
        )
    }

    /// Shift targets that coincide with an observed location by
    /// [`NUDGE`] along `s1` instead of rejecting them.
    pub fn nudge_coincident(mut self, yes: bool) -> Self {
        self.nudge_coincident = yes;
        self
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn locations(&self) -> Vec<Location> {
        self.targets.iter().map(|t| t.location).collect()
    }

    fn resolved(&self, obs: &[Location]) -> Result<Vec<Target>> {
        let mut out = self.targets.clone();
        if self.nudge_coincident {
            for t in &mut out {
                if obs.iter().any(|o| o.distance(&t.location) <= DUPLICATE_TOL) {
                    t.location = Location::new(t.location.s1() + NUDGE, t.location.s2())?;
                }
            }
        }
        let all: Vec<Location> = obs.iter().copied().chain(out.iter().map(|t| t.location)).collect();
        check_distinct(&all)?;
        Ok(out)
    }
}

/// Position of one predicted quantity inside a [`ConditionalGaussian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub target: usize,
    pub component: Component,
}

/// Linear predictor `E[T | O] = μ_T + W (o − μ_O)` and residual covariance
/// `Σ_TT − Σ_TO Σ_OO⁻¹ Σ_OT` for a set of target functionals given observed
/// ones.
#[derive(Debug, Clone)]
pub struct Kriging {
    pub weights: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl Kriging {
    pub fn new<C: CrossCovariance>(
        cov: &C,
        obs: &[(Location, C::Component)],
        targets: &[(Location, C::Component)],
    ) -> Result<Self> {
        let prior = covariance_matrix(cov, targets);
        if obs.is_empty() {
            return Ok(Self {
                weights: DMatrix::zeros(targets.len(), 0),
                cov: prior,
            });
        }
        let s_oo = Factor::new(covariance_matrix(cov, obs), "observed covariance")?;
        let s_ot = cross_covariance_matrix(cov, obs, targets);
        let v = s_oo.solve_lower(&s_ot);
        let mut cond = prior - v.transpose() * &v;
        // Restore exact symmetry lost to rounding.
        let n = cond.nrows();
        for j in 0..n {
            for i in 0..j {
                let a = 0.5 * (cond[(i, j)] + cond[(j, i)]);
                cond[(i, j)] = a;
                cond[(j, i)] = a;
            }
        }
        let l = s_oo.l();
        let weights = l
            .transpose()
            .solve_upper_triangular(&v)
            .expect("Cholesky factor has a positive diagonal")
            .transpose();
        Ok(Self { weights, cov: cond })
    }

    pub fn mean(&self, prior_mean: &DVector<f64>, obs_resid: &DVector<f64>) -> DVector<f64> {
        if self.weights.ncols() == 0 {
            return prior_mean.clone();
        }
        prior_mean + &self.weights * obs_resid
    }
}

/// Kriging that keeps only consecutive `block`-sized diagonal blocks of the
/// conditional covariance, for when only per-target joint laws are needed.
#[derive(Debug, Clone)]
pub struct BlockKriging {
    pub weights: DMatrix<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockKriging {
    pub fn new<C: CrossCovariance>(
        cov: &C,
        obs: &[(Location, C::Component)],
        targets: &[(Location, C::Component)],
        block: usize,
    ) -> Result<Self> {
        if block == 0 || targets.len() % block != 0 {
            return Err(Error::Domain(format!(
                "{} targets do not split into blocks of {block}",
                targets.len()
            )));
        }
        let priors = targets.chunks(block).map(|t| covariance_matrix(cov, t));
        if obs.is_empty() {
            return Ok(Self {
                weights: DMatrix::zeros(targets.len(), 0),
                blocks: priors.collect(),
            });
        }
        let s_oo = Factor::new(covariance_matrix(cov, obs), "observed covariance")?;
        let v = s_oo.solve_lower(&cross_covariance_matrix(cov, obs, targets));
        let blocks = priors
            .enumerate()
            .map(|(b, prior)| {
                let vb = v.columns(b * block, block);
                let mut c = prior - vb.transpose() * vb;
                for j in 0..block {
                    for i in 0..j {
                        let a = 0.5 * (c[(i, j)] + c[(j, i)]);
                        c[(i, j)] = a;
                        c[(j, i)] = a;
                    }
                }
                c
            })
            .collect();
        let weights = s_oo
            .l()
            .transpose()
            .solve_upper_triangular(&v)
            .expect("Cholesky factor has a positive diagonal")
            .transpose();
        Ok(Self { weights, blocks })
    }

    pub fn mean(&self, prior_mean: &DVector<f64>, obs_resid: &DVector<f64>) -> DVector<f64> {
        if self.weights.ncols() == 0 {
            return prior_mean.clone();
        }
        prior_mean + &self.weights * obs_resid
    }
}

/// A multivariate normal with a retained lower factor of its covariance.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    slots: Vec<Slot>,
    locations: Vec<Location>,
}

impl ConditionalGaussian {
    /// Factorizes `cov` (with ridge escalation). An all-zero covariance gives
    /// a degenerate distribution whose draws equal the mean.
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        slots: Vec<Slot>,
        locations: Vec<Location>,
    ) -> Result<Self> {
        if mean.len() != cov.nrows() || mean.len() != slots.len() {
            return Err(Error::Domain("mean, covariance and layout sizes differ".into()));
        }
        let factor = if cov.iter().all(|v| *v == 0.0) {
            DMatrix::zeros(cov.nrows(), cov.ncols())
        } else {
            Factor::new(cov.clone(), "conditional covariance")?.l()
        };
        Ok(Self {
            mean,
            cov,
            factor,
            slots,
            locations,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Target locations actually used (after any nudging).
    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn index_of(&self, target: usize, component: Component) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.target == target && s.component == component)
    }

    /// One exact draw of the stacked vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        &self.mean + &self.factor * z
    }
}

/// Predicted quantities at one target from one joint draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetDraw {
    pub location: Location,
    pub y: Option<f64>,
    pub x: Option<f64>,
    pub grad_y: Option<[f64; 2]>,
    pub grad_x: Option<[f64; 2]>,
}

/// One joint draw over all targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDraw {
    pub theta_index: usize,
    pub targets: Vec<TargetDraw>,
}

fn target_slots(targets: &[Target]) -> Vec<Slot> {
    let mut slots = Vec::new();
    for (k, t) in targets.iter().enumerate() {
        if t.want_level {
            slots.push(Slot { target: k, component: Component::Y });
            slots.push(Slot { target: k, component: Component::X });
        }
        if t.want_gradient {
            for field in [Field::Response, Field::Covariate] {
                for axis in 0..2 {
                    slots.push(Slot {
                        target: k,
                        component: Component::grad(field, axis),
                    });
                }
            }
        }
    }
    slots
}

/// Distribution of the requested levels and gradients at `targets` given the
/// observed `(Y, X)` and parameters `theta`.
pub fn conditional_gradient_distribution(
    theta: &ThetaSample,
    data: &Dataset,
    targets: &PredictionTargets,
) -> Result<ConditionalGaussian> {
    let kernel = BivariateKernel::from_theta(theta)?;
    let resolved = targets.resolved(data.locations())?;
    let slots = target_slots(&resolved);
    let obs: Vec<(Location, Component)> = data
        .locations()
        .iter()
        .map(|&s| (s, Component::Y))
        .chain(data.locations().iter().map(|&s| (s, Component::X)))
        .collect();
    let tpts: Vec<(Location, Component)> = slots
        .iter()
        .map(|s| (resolved[s.target].location, s.component))
        .collect();
    let kriging = Kriging::new(&kernel, &obs, &tpts)?;

    let mean_x = theta.alpha0;
    let mean_y = theta.beta0 + theta.beta1 * theta.alpha0;
    let resid = DVector::from_iterator(
        obs.len(),
        data.y()
            .iter()
            .map(|v| v - mean_y)
            .chain(data.x().iter().map(|v| v - mean_x)),
    );
    let prior_mean = DVector::from_iterator(
        slots.len(),
        slots.iter().map(|s| match s.component {
            Component::Y => mean_y,
            Component::X => mean_x,
            _ => 0.0,
        }),
    );
    let mean = kriging.mean(&prior_mean, &resid);
    ConditionalGaussian::new(
        mean,
        kriging.cov,
        slots,
        resolved.iter().map(|t| t.location).collect(),
    )
}

/// Splits a stacked draw back into per-target quantities.
pub fn unpack_draw(dist: &ConditionalGaussian, v: &DVector<f64>, theta_index: usize) -> GradientDraw {
    let mut targets: Vec<TargetDraw> = dist
        .locations
        .iter()
        .map(|&location| TargetDraw {
            location,
            y: None,
            x: None,
            grad_y: None,
            grad_x: None,
        })
        .collect();
    for (slot, &value) in dist.slots.iter().zip(v.iter()) {
        let t = &mut targets[slot.target];
        match (slot.component.field, slot.component.functional) {
            (Field::Response, crate::kernel::Functional::Level) => t.y = Some(value),
            (Field::Covariate, crate::kernel::Functional::Level) => t.x = Some(value),
            (Field::Response, crate::kernel::Functional::Partial(a)) => {
                t.grad_y.get_or_insert([0.0; 2])[a] = value
            }
            (Field::Covariate, crate::kernel::Functional::Partial(a)) => {
                t.grad_x.get_or_insert([0.0; 2])[a] = value
            }
        }
    }
    GradientDraw {
        theta_index,
        targets,
    }
}

/// One exact joint draw from `dist`.
pub fn draw_joint_gradients<R: Rng + ?Sized>(
    dist: &ConditionalGaussian,
    theta_index: usize,
    rng: &mut R,
) -> GradientDraw {
    let v = dist.sample(rng);
    unpack_draw(dist, &v, theta_index)
}

/// Output of [`composition_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionDraws {
    pub draws: Vec<GradientDraw>,
    /// Posterior draws whose conditional could not be factorized.
    pub failed: Vec<usize>,
}

/// One joint predictive draw per posterior parameter draw. Each θ uses its
/// own RNG stream derived from `(seed, theta_index)`, so the output does not
/// depend on how the work is scheduled.
pub fn composition_sample(
    chain: &[ThetaSample],
    data: &Dataset,
    targets: &PredictionTargets,
    seed: u64,
) -> Result<CompositionDraws> {
    if chain.is_empty() {
        return Err(Error::Domain("posterior chain is empty".into()));
    }
    // Location problems are not per-θ failures; surface them directly.
    targets.resolved(data.locations())?;
    let results: Vec<Result<GradientDraw>> = chain
        .par_iter()
        .enumerate()
        .map(|(l, theta)| {
            let dist = conditional_gradient_distribution(theta, data, targets)?;
            let mut rng = stream_rng(seed, l as u64);
            Ok(draw_joint_gradients(&dist, l, &mut rng))
        })
        .collect();
    let mut draws = Vec::with_capacity(chain.len());
    let mut failed = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => draws.push(d),
            Err(e) => {
                log::warn!("composition draw {l} skipped: {e}");
                failed.push(l);
            }
        }
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * chain.len() as f64 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: chain.len(),
        });
    }
    Ok(CompositionDraws { draws, failed })
}
