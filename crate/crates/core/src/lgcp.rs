//! Log-Gaussian Cox process intensities on a regular grid: the gridded
//! Poisson likelihood, elliptical slice sampling of the latent field,
//! minimum-contrast estimation of its decay, and intensity-gradient
//! sensitivity surfaces.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{stream_rng, BlockKriging, MAX_FAILURE_FRACTION};
use crate::grid::{GridSpec, SurfaceGrid, Window};
use crate::kernel::{check_distinct, covariance_matrix, Functional, Location, MaternParams, UnitVector};
use crate::linalg::{standard_normal_vector, Factor};
use crate::model::{CovariateChain, CovariateSample, McmcConfig, Prior, Transform};
use crate::processes::{chain_rule_transform, disc, lds_ratio, summarize_surface, AngleSample, Link, Statistic};
use crate::special::integrate;

/// Events observed in a rectangular window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    events: Vec<Location>,
    window: Window,
}

impl PointPattern {
    pub fn new(events: Vec<Location>, window: Window) -> Result<Self> {
        window.validate()?;
        if let Some((index, s)) = events.iter().enumerate().find(|(_, s)| !window.contains(s)) {
            return Err(Error::OutsideWindow {
                index,
                s1: s.s1(),
                s2: s.s2(),
            });
        }
        Ok(Self { events, window })
    }

    pub fn events(&self) -> &[Location] {
        &self.events
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Event count per grid cell.
pub fn bin_counts(pattern: &PointPattern, grid: &GridSpec) -> Result<Vec<usize>> {
    let mut counts = vec![0; grid.len()];
    for (index, s) in pattern.events.iter().enumerate() {
        let cell = grid.cell_of(s).ok_or(Error::OutsideWindow {
            index,
            s1: s.s1(),
            s2: s.s2(),
        })?;
        counts[cell] += 1;
    }
    Ok(counts)
}

/// One state of the LGCP sampler; `w` holds the latent field per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgcpSample {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_z: f64,
    pub w: Vec<f64>,
}

impl LgcpSample {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_z > 0.0 && self.sigma2_z.is_finite()) {
            return Err(Error::Domain(format!("sigma2_z = {} must be positive", self.sigma2_z)));
        }
        if !self.beta0.is_finite() || !self.beta1.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("LGCP sample has non-finite entries".into()));
        }
        Ok(())
    }

    /// Cellwise log intensity `β₀ + β₁X + w`.
    pub fn log_intensity(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.w)
            .map(|(xi, wi)| self.beta0 + self.beta1 * xi + wi)
            .collect()
    }
}

/// Cellwise `λ` and `Z = log λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySurface {
    pub lambda: SurfaceGrid,
    pub z: SurfaceGrid,
}

impl IntensitySurface {
    pub fn from_sample(sample: &LgcpSample, x_grid: &SurfaceGrid, grid: &GridSpec) -> Result<Self> {
        let x = grid_values(x_grid, grid)?;
        if sample.w.len() != grid.len() {
            return Err(Error::Domain("latent field does not match the grid".into()));
        }
        let z = sample.log_intensity(&x);
        Ok(Self {
            lambda: SurfaceGrid::new(*grid, z.iter().map(|v| Some(v.exp())).collect(), "intensity")?,
            z: SurfaceGrid::new(*grid, z.into_iter().map(Some).collect(), "log intensity")?,
        })
    }
}

/// Covariate values per cell, requiring the surface to sit on `grid`.
pub fn grid_values(x_grid: &SurfaceGrid, grid: &GridSpec) -> Result<Vec<f64>> {
    if x_grid.grid != *grid {
        return Err(Error::Domain("covariate surface is not aligned with the grid".into()));
    }
    x_grid
        .values
        .iter()
        .enumerate()
        .map(|(c, v)| v.filter(|v| v.is_finite()).ok_or_else(|| Error::Domain(format!("covariate missing in cell {c}"))))
        .collect()
}

/// `Σ_l [N_l η_l − |A| exp(η_l)]`.
fn grid_log_likelihood(counts: &[usize], eta: impl Iterator<Item = f64>, area: f64) -> f64 {
    counts
        .iter()
        .zip(eta)
        .map(|(&n, e)| if n == 0 { -area * e.exp() } else { n as f64 * e - area * e.exp() })
        .sum()
}

/// Gridded Poisson log-likelihood `Σᵢ log λ(cell of sᵢ) − Σ_l |A_l| λ(A_l)`.
pub fn lgcp_log_likelihood(
    sample: &LgcpSample,
    pattern: &PointPattern,
    x_grid: &SurfaceGrid,
    grid: &GridSpec,
) -> Result<f64> {
    let x = grid_values(x_grid, grid)?;
    if sample.w.len() != grid.len() {
        return Err(Error::Domain("latent field does not match the grid".into()));
    }
    let counts = bin_counts(pattern, grid)?;
    Ok(grid_log_likelihood(&counts, sample.log_intensity(&x).into_iter(), grid.cell_area()))
}

/// Result of one elliptical slice transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EssOutcome {
    pub state: DVector<f64>,
    pub loglik: f64,
    /// Likelihood evaluations used, including the accepted one.
    pub evaluations: usize,
}

fn ess_from<R, F>(w: &DVector<f64>, current: f64, nu: &DVector<f64>, loglik: F, rng: &mut R) -> EssOutcome
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
{
    let threshold = current + rng.random::<f64>().ln();
    let mut angle = rng.random::<f64>() * 2.0 * PI;
    let (mut lo, mut hi) = (angle - 2.0 * PI, angle);
    let mut evaluations = 0;
    loop {
        let proposal = w * angle.cos() + nu * angle.sin();
        let ll = loglik(&proposal);
        evaluations += 1;
        if ll > threshold {
            return EssOutcome {
                state: proposal,
                loglik: ll,
                evaluations,
            };
        }
        if hi - lo < 1e-12 {
            // The bracket has collapsed onto the current state.
            return EssOutcome {
                state: w.clone(),
                loglik: current,
                evaluations,
            };
        }
        if angle < 0.0 {
            lo = angle;
        } else {
            hi = angle;
        }
        angle = lo + (hi - lo) * rng.random::<f64>();
    }
}

/// One elliptical slice sampling transition for a field with prior
/// `N(0, scale² · A)`, where `prior` factorizes `A`.
pub fn elliptical_slice_step<R, F>(
    w: &DVector<f64>,
    prior: &Factor,
    scale: f64,
    loglik: F,
    rng: &mut R,
) -> Result<EssOutcome>
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
{
    if w.len() != prior.dim() {
        return Err(Error::Domain("state and prior factor sizes differ".into()));
    }
    let current = loglik(w);
    if !current.is_finite() {
        return Err(Error::Domain(format!("log-likelihood at the current state is {current}")));
    }
    let nu = prior.mul_lower(&standard_normal_vector(w.len(), rng)) * scale;
    Ok(ess_from(w, current, &nu, loglik, rng))
}

/// Priors for the LGCP regression and latent variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgcpPriors {
    pub beta0: Prior,
    pub beta1: Prior,
    pub sigma2_z: Prior,
}

impl Default for LgcpPriors {
    fn default() -> Self {
        Self {
            beta0: Prior::Normal { mean: 0.0, var: 100.0 },
            beta1: Prior::Normal { mean: 0.0, var: 100.0 },
            sigma2_z: Prior::InverseGamma { shape: 2.0, scale: 0.1 },
        }
    }
}

impl LgcpPriors {
    pub fn validate(&self) -> Result<()> {
        self.beta0.validate("beta0")?;
        self.beta1.validate("beta1")?;
        self.sigma2_z.validate("sigma2_z")?;
        match self.sigma2_z {
            Prior::InverseGamma { .. } => Ok(()),
            Prior::PointMass { value } if value > 0.0 => Ok(()),
            p => Err(Error::Config(format!(
                "sigma2_z needs an inverse-gamma or positive point-mass prior, got {p:?}"
            ))),
        }
    }
}

/// Post-burn-in acceptance rates of the Metropolis moves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LgcpAcceptance {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgcpChain {
    pub samples: Vec<LgcpSample>,
    pub phi_z: f64,
    pub grid: GridSpec,
    pub acceptance: LgcpAcceptance,
    pub config: McmcConfig,
    pub priors: LgcpPriors,
}

impl LgcpChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Factor of the latent correlation matrix at cell centroids.
pub fn latent_correlation_factor(grid: &GridSpec, phi_z: f64) -> Result<Factor> {
    let params = MaternParams::new(1.0, phi_z)?;
    let pts: Vec<_> = grid.centroids().into_iter().map(|s| (s, Functional::Level)).collect();
    Factor::new(covariance_matrix(&params, &pts), "latent correlation")
}

struct Tuner {
    log_scale: f64,
    accepted: usize,
    proposed: usize,
    batch_accepted: usize,
    batch_proposed: usize,
    batches: usize,
}

impl Tuner {
    fn new(scale: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            accepted: 0,
            proposed: 0,
            batch_accepted: 0,
            batch_proposed: 0,
            batches: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, ok: bool, counting: bool) {
        self.batch_proposed += 1;
        self.batch_accepted += ok as usize;
        if counting {
            self.proposed += 1;
            self.accepted += ok as usize;
        }
    }

    fn adapt(&mut self, target: f64) {
        if self.batch_proposed == 0 {
            return;
        }
        self.batches += 1;
        let rate = self.batch_accepted as f64 / self.batch_proposed as f64;
        self.log_scale += 2.0 * (self.batches as f64).powf(-0.6) * (rate - target);
        self.batch_accepted = 0;
        self.batch_proposed = 0;
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn metropolis<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Samples the posterior of `(β₀, β₁, σ²_z, w)` with `φ_z` fixed.
///
/// Each iteration runs one elliptical slice update of `w`, random-walk
/// updates of `β₀` and of `β₁` (the slope move shifts `β₀` to keep the
/// intercept at the mean covariate fixed), and a log-scale move of `σ²_z`
/// that rescales `w` so its whitened shape stays put. Proposal scales adapt
/// during burn-in only.
pub fn fit_lgcp(
    pattern: &PointPattern,
    x_grid: &SurfaceGrid,
    grid: &GridSpec,
    phi_z: f64,
    priors: &LgcpPriors,
    cfg: &McmcConfig,
) -> Result<LgcpChain> {
    priors.validate()?;
    cfg.validate()?;
    if !(phi_z > 0.0 && phi_z.is_finite()) {
        return Err(Error::Domain(format!("phi_z = {phi_z} must be positive")));
    }
    let counts = bin_counts(pattern, grid)?;
    let x = grid_values(x_grid, grid)?;
    let n_cells = grid.len();
    let xbar = x.iter().sum::<f64>() / n_cells as f64;
    let xsd = (x.iter().map(|v| (v - xbar).powi(2)).sum::<f64>() / n_cells as f64).sqrt();
    if xsd <= 1e-12 * (1.0 + xbar.abs()) {
        log::warn!("covariate surface is constant; beta1 is not identifiable");
    }
    let area = grid.cell_area();
    let prior = latent_correlation_factor(grid, phi_z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let total = pattern.len().max(1) as f64;
    let mut beta1 = priors.beta1.point().unwrap_or(0.0);
    let mut beta0 = priors
        .beta0
        .point()
        .unwrap_or((total / grid.window.area()).ln() - beta1 * xbar);
    let sigma_fixed = priors.sigma2_z.point();
    let mut sigma2 = sigma_fixed.unwrap_or(0.5);
    let mut w = DVector::zeros(n_cells);

    let loglik = |b0: f64, b1: f64, w: &DVector<f64>| {
        grid_log_likelihood(&counts, x.iter().zip(w.iter()).map(|(xi, wi)| b0 + b1 * xi + wi), area)
    };
    let mut ll = loglik(beta0, beta1, &w);
    if !ll.is_finite() {
        return Err(Error::NonFiniteInit(format!("log-likelihood {ll}")));
    }
    let sigma_transform = Transform::Log;

    let mut t0 = Tuner::new((1.0 / total).sqrt());
    let mut t1 = Tuner::new(0.1 / xsd.max(1e-12));
    let mut ts = Tuner::new(0.3);
    let mut samples = Vec::with_capacity(cfg.retained());
    for iter in 0..cfg.iterations {
        let counting = iter >= cfg.burn_in;

        let nu = prior.mul_lower(&standard_normal_vector(n_cells, &mut rng)) * sigma2.sqrt();
        let step = ess_from(&w, ll, &nu, |v| loglik(beta0, beta1, v), &mut rng);
        w = step.state;
        ll = step.loglik;

        if priors.beta0.point().is_none() {
            let prop = beta0 + t0.scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let ll_new = loglik(prop, beta1, &w);
            let ratio = ll_new - ll + priors.beta0.ln_density(prop) - priors.beta0.ln_density(beta0);
            let ok = metropolis(&mut rng, ratio);
            if ok {
                beta0 = prop;
                ll = ll_new;
            }
            t0.record(ok, counting);
        }

        if priors.beta1.point().is_none() {
            let delta = t1.scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let b1 = beta1 + delta;
            let b0 = if priors.beta0.point().is_none() { beta0 - xbar * delta } else { beta0 };
            let ll_new = loglik(b0, b1, &w);
            let ratio = ll_new - ll + priors.beta1.ln_density(b1) - priors.beta1.ln_density(beta1)
                + priors.beta0.ln_density(b0)
                - priors.beta0.ln_density(beta0);
            let ok = metropolis(&mut rng, ratio);
            if ok {
                beta0 = b0;
                beta1 = b1;
                ll = ll_new;
            }
            t1.record(ok, counting);
        }

        if sigma_fixed.is_none() {
            let z = sigma_transform.to_unconstrained(sigma2) + ts.scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let s_new = sigma_transform.to_natural(z);
            let w_new = &w * (s_new / sigma2).sqrt();
            let ll_new = loglik(beta0, beta1, &w_new);
            let ratio = ll_new - ll + priors.sigma2_z.ln_density(s_new) - priors.sigma2_z.ln_density(sigma2)
                + sigma_transform.ln_jacobian(s_new)
                - sigma_transform.ln_jacobian(sigma2);
            let ok = metropolis(&mut rng, ratio);
            if ok {
                sigma2 = s_new;
                w = w_new;
                ll = ll_new;
            }
            ts.record(ok, counting);
        }

        if !counting && (iter + 1) % cfg.adapt_window == 0 {
            for t in [&mut t0, &mut t1, &mut ts] {
                t.adapt(cfg.adapt_target);
            }
        }
        if cfg.keeps(iter) {
            samples.push(LgcpSample {
                beta0,
                beta1,
                sigma2_z: sigma2,
                w: w.iter().copied().collect(),
            });
        }
    }
    Ok(LgcpChain {
        samples,
        phi_z,
        grid: *grid,
        acceptance: LgcpAcceptance {
            beta0: t0.rate(),
            beta1: t1.rate(),
            sigma2_z: ts.rate(),
        },
        config: cfg.clone(),
        priors: *priors,
    })
}

/// Exact Gaussian draws of a Matérn field at fixed locations.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    factor: Factor,
}

impl FieldSampler {
    pub fn new(locations: &[Location], params: &MaternParams) -> Result<Self> {
        check_distinct(locations)?;
        let pts: Vec<_> = locations.iter().map(|&s| (s, Functional::Level)).collect();
        Ok(Self {
            factor: Factor::new(covariance_matrix(params, &pts), "field covariance")?,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.factor
            .mul_lower(&standard_normal_vector(self.factor.dim(), rng))
            .iter()
            .copied()
            .collect()
    }
}

/// Poisson pattern with cellwise log intensity `eta`; events are uniform
/// within their cell.
pub fn simulate_lgcp(grid: &GridSpec, eta: &[f64], seed: u64) -> Result<PointPattern> {
    if eta.len() != grid.len() {
        return Err(Error::Domain("log intensity does not match the grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [dx, dy] = grid.cell_size();
    let area = grid.cell_area();
    let mut events = Vec::new();
    for (cell, e) in eta.iter().enumerate() {
        let mean = area * e.exp();
        if !mean.is_finite() {
            return Err(Error::Domain(format!("cell {cell} has non-finite expected count")));
        }
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(&mut rng) as usize;
        let (i, j) = grid.coords(cell);
        for _ in 0..n {
            let s1 = grid.window.s1_min + (i as f64 + rng.random::<f64>()) * dx;
            let s2 = grid.window.s2_min + (j as f64 + rng.random::<f64>()) * dy;
            events.push(Location::new(s1, s2)?);
        }
    }
    PointPattern::new(events, grid.window)
}

/// Outcome of [`minimum_contrast_phi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinContrastFit {
    pub phi: f64,
    pub sigma2: f64,
    pub discrepancy: f64,
    pub r_max: f64,
}

/// Radii at which the K-functions are compared.
const K_RADII: usize = 64;

/// Binomial patterns in the Monte Carlo test of complete spatial randomness;
/// exceeding all of them rejects at the 1% level.
const CSR_SIMULATIONS: u64 = 99;

fn l_deviation(k_hat: &[f64], radii: &[f64]) -> f64 {
    radii
        .iter()
        .zip(k_hat)
        .map(|(r, k)| ((k / PI).sqrt() - r).abs())
        .fold(0.0f64, f64::max)
}

/// Largest `sup |L̂(r) − r|` over binomial patterns of `n` events in
/// `window`. Fixed streams keep the result deterministic.
fn csr_envelope(window: Window, n: usize, radii: &[f64]) -> f64 {
    (0..CSR_SIMULATIONS)
        .into_par_iter()
        .map(|k| {
            let mut rng = crate::gradient::stream_rng(0x5eed_c5a, k);
            let events = (0..n)
                .map(|_| {
                    Location::new(
                        window.s1_min + window.width() * rng.random::<f64>(),
                        window.s2_min + window.height() * rng.random::<f64>(),
                    )
                    .expect("finite window")
                })
                .collect();
            let p = PointPattern { events, window };
            l_deviation(&empirical_k(&p, radii), radii)
        })
        .reduce(|| 0.0, f64::max)
}

/// Border-corrected empirical K-function at `radii`.
pub fn empirical_k(pattern: &PointPattern, radii: &[f64]) -> Vec<f64> {
    let w = pattern.window;
    let n = pattern.len();
    if n < 2 || radii.is_empty() {
        return vec![0.0; radii.len()];
    }
    let intensity = n as f64 / w.area();
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let sorted_r: Vec<f64> = order.iter().map(|&k| radii[k]).collect();
    let r_top = sorted_r[sorted_r.len() - 1];
    let mut pts: Vec<Location> = pattern.events.clone();
    pts.sort_by(|a, b| a.s1().total_cmp(&b.s1()));
    // Radii (by sorted index) below `eligible[i]` keep point i as a centre.
    let eligible: Vec<usize> = pts
        .iter()
        .map(|s| {
            let border = (s.s1() - w.s1_min)
                .min(w.s1_max - s.s1())
                .min(s.s2() - w.s2_min)
                .min(w.s2_max - s.s2());
            sorted_r.partition_point(|r| *r <= border)
        })
        .collect();
    // pairs[k] - pairs[k-1] collects neighbours first counted at radius k.
    let mut diff = vec![0i64; sorted_r.len() + 1];
    let mut add = |first: usize, centre: usize| {
        if first < eligible[centre] {
            diff[first] += 1;
            diff[eligible[centre]] -= 1;
        }
    };
    for i in 0..n {
        for j in i + 1..n {
            if pts[j].s1() - pts[i].s1() > r_top {
                break;
            }
            let d = pts[i].distance(&pts[j]);
            if d <= r_top {
                let first = sorted_r.partition_point(|r| *r < d);
                add(first, i);
                add(first, j);
            }
        }
    }
    // centres[k]: points with eligible >= k.
    let mut centres = vec![0usize; sorted_r.len() + 1];
    for &e in &eligible {
        centres[e] += 1;
    }
    for k in (0..sorted_r.len()).rev() {
        centres[k] += centres[k + 1];
    }
    let mut out = vec![0.0; radii.len()];
    let mut pairs = 0i64;
    for (k, &orig) in order.iter().enumerate() {
        pairs += diff[k];
        let c = centres[k + 1];
        out[orig] = if c == 0 { 0.0 } else { pairs as f64 / (c as f64 * intensity) };
    }
    out
}

/// `K(r) = 2π ∫₀^r t exp(σ² ρ(t)) dt` for the Matérn-3/2 correlation `ρ`.
pub fn theoretical_k(radii: &[f64], sigma2: f64, phi: f64) -> Vec<f64> {
    let g = |t: f64| t * (sigma2 * (1.0 + phi * t) * (-phi * t).exp()).exp();
    let mut out = Vec::with_capacity(radii.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &r in radii {
        acc += integrate(g, prev, r, 1e-12, 1e-10, 50).value;
        prev = r;
        out.push(2.0 * PI * acc);
    }
    out
}

fn contrast(k_hat: &[f64], radii: &[f64], sigma2: f64, phi: f64) -> f64 {
    let k = theoretical_k(radii, sigma2, phi);
    let d: Vec<f64> = k_hat
        .iter()
        .zip(&k)
        .map(|(a, b)| (a.powf(0.25) - b.powf(0.25)).powi(2))
        .collect();
    // Trapezoid from r = 0, where both K-functions vanish.
    let mut total = 0.5 * d[0] * radii[0];
    for i in 1..radii.len() {
        total += 0.5 * (d[i] + d[i - 1]) * (radii[i] - radii[i - 1]);
    }
    total
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Minimum-contrast estimate of the latent decay `φ_z` within `bounds`,
/// with `σ²_z` profiled over a log grid on `[0.01, 10]`.
///
/// Errors when the pattern shows no usable clustering signal: the best
/// `σ²_z` sits at the bottom of its grid, the profile is flat in `φ`, or
/// the minimum lies on a search bound.
pub fn minimum_contrast_phi(pattern: &PointPattern, bounds: (f64, f64)) -> Result<MinContrastFit> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Config(format!("invalid phi search bounds ({lo}, {hi})")));
    }
    if pattern.len() < 30 {
        return Err(Error::Domain(format!(
            "minimum contrast needs at least 30 events, got {}",
            pattern.len()
        )));
    }
    let r_max = 0.25 * pattern.window.width().min(pattern.window.height());
    let radii: Vec<f64> = (1..=K_RADII).map(|i| r_max * i as f64 / K_RADII as f64).collect();
    let k_hat = empirical_k(pattern, &radii);
    // Without clustering there is nothing to fit.
    let observed = l_deviation(&k_hat, &radii);
    let envelope = csr_envelope(pattern.window, pattern.len(), &radii);
    if observed <= envelope {
        return Err(Error::NonIdentifiable(format!(
            "pattern is consistent with complete spatial randomness \
             (sup |L(r) - r| = {observed:.4}, CSR envelope {envelope:.4})"
        )));
    }
    let sigma_grid = log_grid(0.01, 10.0, 41);
    let profile = |phi: f64| -> (f64, f64) {
        sigma_grid
            .iter()
            .map(|&s| (contrast(&k_hat, &radii, s, phi), s))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty grid")
    };
    let phis = log_grid(lo, hi, 25);
    let values: Vec<(f64, f64)> = phis.par_iter().map(|&p| profile(p)).collect();
    let best = (0..phis.len())
        .min_by(|&a, &b| values[a].0.total_cmp(&values[b].0))
        .expect("non-empty grid");
    let max = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let min = values[best].0;
    if max - min <= 1e-3 * max {
        return Err(Error::NonIdentifiable("contrast is flat in phi_z".into()));
    }
    if values[best].1 <= sigma_grid[0] {
        return Err(Error::NonIdentifiable(
            "no clustering: best sigma2_z is at the bottom of its grid".into(),
        ));
    }
    if best == 0 || best == phis.len() - 1 {
        return Err(Error::NonIdentifiable(format!(
            "contrast minimum at the search bound phi_z = {}",
            phis[best]
        )));
    }
    // Golden-section refinement on log φ between the neighbouring grid points.
    let (mut a, mut b) = (phis[best - 1].ln(), phis[best + 1].ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = profile(c.exp());
    let mut fd = profile(d.exp());
    for _ in 0..30 {
        if fc.0 < fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = profile(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = profile(d.exp());
        }
    }
    let (fit, phi) = if fc.0 < fd.0 { (fc, c.exp()) } else { (fd, d.exp()) };
    let (fit, phi) = if fit.0 <= min { (fit, phi) } else { (values[best], phis[best]) };
    Ok(MinContrastFit {
        phi,
        sigma2: fit.1,
        discrepancy: fit.0,
        r_max,
    })
}

/// Scattered observations of the covariate surface.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateObservations {
    locations: Vec<Location>,
    x: Vec<f64>,
}

impl CovariateObservations {
    pub fn new(locations: Vec<Location>, x: Vec<f64>) -> Result<Self> {
        if locations.len() != x.len() {
            return Err(Error::Domain("covariate locations and values differ in length".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariate value is not finite".into()));
        }
        check_distinct(&locations)?;
        Ok(Self { locations, x })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    fn level_points(&self) -> Vec<(Location, Functional)> {
        self.locations.iter().map(|&s| (s, Functional::Level)).collect()
    }
}

/// Posterior mean of the covariate parameters.
pub fn covariate_posterior_mean(chain: &CovariateChain) -> Result<CovariateSample> {
    let n = chain.samples.len();
    if n == 0 {
        return Err(Error::Domain("covariate chain is empty".into()));
    }
    let sum = chain.samples.iter().fold([0.0; 3], |acc, s| {
        [acc[0] + s.alpha0, acc[1] + s.sigma2_x, acc[2] + s.phi_x]
    });
    Ok(CovariateSample {
        alpha0: sum[0] / n as f64,
        sigma2_x: sum[1] / n as f64,
        phi_x: sum[2] / n as f64,
    })
}

/// `Σ_OO⁻¹ (values − mean)` for a Matérn field observed at `obs`.
fn kriging_coefficients(obs: &[Location], values: &[f64], mean: f64, params: &MaternParams) -> Result<DVector<f64>> {
    let pts: Vec<_> = obs.iter().map(|&s| (s, Functional::Level)).collect();
    let f = Factor::new(covariance_matrix(params, &pts), "kriging covariance")?;
    Ok(f.solve(&DVector::from_iterator(values.len(), values.iter().map(|v| v - mean))))
}

/// Kriging mean of `f` and of its gradient at `s` given coefficients
/// `Σ_OO⁻¹ r`.
fn kriged_with_gradient(obs: &[Location], coef: &DVector<f64>, params: &MaternParams, s: &Location) -> (f64, [f64; 2]) {
    use crate::kernel::matern_functional_cov as cov;
    let mut level = 0.0;
    let mut grad = [0.0; 2];
    for (o, a) in obs.iter().zip(coef.iter()) {
        level += cov(Functional::Level, s, Functional::Level, o, params) * a;
        for (i, g) in grad.iter_mut().enumerate() {
            *g += cov(Functional::Partial(i), s, Functional::Level, o, params) * a;
        }
    }
    (level, grad)
}

/// Covariate kriged to the cell centroids of `grid` with plug-in parameters.
pub fn krige_covariate_grid(x_obs: &CovariateObservations, params: &CovariateSample, grid: &GridSpec) -> Result<SurfaceGrid> {
    let m = params.params()?;
    let coef = kriging_coefficients(&x_obs.locations, &x_obs.x, params.alpha0, &m)?;
    let values = grid
        .centroids()
        .par_iter()
        .map(|c| Some(params.alpha0 + kriged_with_gradient(&x_obs.locations, &coef, &m, c).0))
        .collect();
    SurfaceGrid::new(*grid, values, "kriged covariate")
}

/// Kriging mean of `Z = β₀ + β₁X + w` and of `∇Z` at `at`, given one LGCP
/// state (with `w` known at the centroids of `grid`) and covariate
/// parameters.
pub fn log_intensity_mean(
    sample: &LgcpSample,
    phi_z: f64,
    grid: &GridSpec,
    covariate: &CovariateSample,
    x_obs: &CovariateObservations,
    at: &[Location],
) -> Result<Vec<(f64, [f64; 2])>> {
    let mx = covariate.params()?;
    let cx = kriging_coefficients(&x_obs.locations, &x_obs.x, covariate.alpha0, &mx)?;
    let mw = MaternParams::new(sample.sigma2_z, phi_z)?;
    let centroids = grid.centroids();
    let cw = kriging_coefficients(&centroids, &sample.w, 0.0, &mw)?;
    Ok(at
        .iter()
        .map(|s| {
            let (x, gx) = kriged_with_gradient(&x_obs.locations, &cx, &mx, s);
            let (w, gw) = kriged_with_gradient(&centroids, &cw, &mw, s);
            let z = sample.beta0 + sample.beta1 * (covariate.alpha0 + x) + w;
            (z, [sample.beta1 * gx[0] + gw[0], sample.beta1 * gx[1] + gw[1]])
        })
        .collect())
}

/// Settings for the intensity sensitivity surfaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOptions {
    pub seed: u64,
    pub statistic: Statistic,
    /// Test hook: treat the latent field as identically zero, gradient
    /// included.
    #[doc(hidden)]
    pub flat_latent: bool,
}

impl SurfaceOptions {
    pub fn median(seed: u64) -> Self {
        Self {
            seed,
            statistic: Statistic::Median,
            flat_latent: false,
        }
    }
}

/// Posterior summaries of `D_uλ/D_uX` and of the angular discrepancy
/// between `∇λ` and `∇X` at the centroids of a target grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySurfaces {
    pub ratio: SurfaceGrid,
    pub disc: SurfaceGrid,
    /// Posterior draws skipped because a conditional could not be factorized.
    pub failed: Vec<usize>,
}

fn value_gradient_layout(targets: &[Location]) -> Vec<(Location, Functional)> {
    targets
        .iter()
        .flat_map(|&t| {
            [
                (t, Functional::Level),
                (t, Functional::Partial(0)),
                (t, Functional::Partial(1)),
            ]
        })
        .collect()
}

fn block_factors(blocks: &[nalgebra::DMatrix<f64>], context: &str) -> Result<Vec<nalgebra::DMatrix<f64>>> {
    blocks
        .iter()
        .map(|b| {
            if b.iter().all(|v| *v == 0.0) {
                Ok(nalgebra::DMatrix::zeros(b.nrows(), b.ncols()))
            } else {
                Ok(Factor::new(b.clone(), context)?.l())
            }
        })
        .collect()
}

/// Per posterior draw `l`, pairs LGCP state `l` with covariate draw
/// `l mod M`, draws `(X, ∇X)` and `(w, ∇w)` at each target from their
/// conditionals, forms `Z = β₀ + β₁X + w`, applies the exp chain rule and
/// records `D_uλ/D_uX` and `disc(∇X, ∇Z)`. Each target is drawn from its own
/// joint conditional law; summaries are per cell.
pub fn intensity_sensitivity_surfaces(
    chain: &LgcpChain,
    covariate: &CovariateChain,
    x_obs: &CovariateObservations,
    targets: &GridSpec,
    u: &UnitVector,
    opts: &SurfaceOptions,
) -> Result<SensitivitySurfaces> {
    if chain.is_empty() || covariate.samples.is_empty() {
        return Err(Error::Domain("posterior chains must be non-empty".into()));
    }
    let target_pts = targets.centroids();
    let layout = value_gradient_layout(&target_pts);
    let n_t = target_pts.len();
    let x_pts = x_obs.level_points();

    let latent = if opts.flat_latent {
        None
    } else {
        let centroids = chain.grid.centroids();
        let mut all = centroids.clone();
        all.extend_from_slice(&target_pts);
        check_distinct(&all)?;
        let obs: Vec<_> = centroids.iter().map(|&s| (s, Functional::Level)).collect();
        let k = BlockKriging::new(&MaternParams::new(1.0, chain.phi_z)?, &obs, &layout, 3)?;
        let factors = block_factors(&k.blocks, "latent conditional")?;
        Some((k, factors))
    };
    {
        let mut all = x_obs.locations.clone();
        all.extend_from_slice(&target_pts);
        check_distinct(&all)?;
    }

    let results: Vec<Result<(Vec<Option<f64>>, Vec<Option<f64>>)>> = chain
        .samples
        .par_iter()
        .enumerate()
        .map(|(l, s)| {
            let c = &covariate.samples[l % covariate.samples.len()];
            let xk = BlockKriging::new(&c.params()?, &x_pts, &layout, 3)?;
            let x_factors = block_factors(&xk.blocks, "covariate conditional")?;
            let prior_x = DVector::from_iterator(3 * n_t, (0..3 * n_t).map(|i| if i % 3 == 0 { c.alpha0 } else { 0.0 }));
            let resid_x = DVector::from_iterator(x_obs.x.len(), x_obs.x.iter().map(|v| v - c.alpha0));
            let x_mean = xk.mean(&prior_x, &resid_x);
            let w_mean = latent
                .as_ref()
                .map(|(k, _)| k.mean(&DVector::zeros(3 * n_t), &DVector::from_column_slice(&s.w)));
            let sd = s.sigma2_z.sqrt();
            let mut rng = stream_rng(opts.seed, l as u64);
            let mut ratio = Vec::with_capacity(n_t);
            let mut dsc = Vec::with_capacity(n_t);
            for k in 0..n_t {
                let zx = standard_normal_vector(3, &mut rng);
                let xv = x_mean.rows(3 * k, 3) + &x_factors[k] * zx;
                let wv = match (&latent, &w_mean) {
                    (Some((_, f)), Some(m)) => {
                        let zw = standard_normal_vector(3, &mut rng);
                        m.rows(3 * k, 3) + &f[k] * zw * sd
                    }
                    _ => DVector::zeros(3),
                };
                let gx = [xv[1], xv[2]];
                let z = s.beta0 + s.beta1 * xv[0] + wv[0];
                let gz = [s.beta1 * gx[0] + wv[1], s.beta1 * gx[1] + wv[2]];
                let glam = chain_rule_transform(Link::LogIntensity, z, &gz);
                ratio.push(lds_ratio(&glam, &gx, u));
                dsc.push(AngleSample::from_gradients(&gx, &gz).map(|a| disc(&a)));
            }
            Ok((ratio, dsc))
        })
        .collect();

    let mut ratio_cells = vec![Vec::with_capacity(chain.len()); n_t];
    let mut disc_cells = vec![Vec::with_capacity(chain.len()); n_t];
    let mut failed = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        match r {
            Ok((ratio, dsc)) => {
                for k in 0..n_t {
                    ratio_cells[k].push(ratio[k]);
                    disc_cells[k].push(dsc[k]);
                }
            }
            Err(e) => {
                log::warn!("surface draw {l} skipped: {e}");
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
    let mut ratio = summarize_surface(targets, &ratio_cells, opts.statistic)?;
    ratio.label = format!("{} of D_u lambda / D_u X", opts.statistic.label());
    let mut disc_s = summarize_surface(targets, &disc_cells, opts.statistic)?;
    disc_s.label = format!("{} of disc", opts.statistic.label());
    Ok(SensitivitySurfaces {
        ratio,
        disc: disc_s,
        failed,
    })
}

/// Posterior summary of `D_uλ/D_uX` over the centroids of `targets`.
pub fn intensity_gradient_surface(
    chain: &LgcpChain,
    covariate: &CovariateChain,
    x_obs: &CovariateObservations,
    targets: &GridSpec,
    u: &UnitVector,
    opts: &SurfaceOptions,
) -> Result<SurfaceGrid> {
    Ok(intensity_sensitivity_surfaces(chain, covariate, x_obs, targets, u, opts)?.ratio)
}

/// Cellwise posterior summary of the intensity `λ`.
pub fn posterior_intensity_surface(chain: &LgcpChain, x_grid: &SurfaceGrid, statistic: Statistic) -> Result<SurfaceGrid> {
    let x = grid_values(x_grid, &chain.grid)?;
    let mut cells = vec![Vec::with_capacity(chain.len()); chain.grid.len()];
    for s in &chain.samples {
        for (c, z) in s.log_intensity(&x).into_iter().enumerate() {
            cells[c].push(Some(z.exp()));
        }
    }
    let mut out = summarize_surface(&chain.grid, &cells, statistic)?;
    out.label = format!("{} of intensity", statistic.label());
    Ok(out)
}
