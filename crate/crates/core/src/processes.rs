//! Processes derived from the gradient fields: directional derivatives, the
//! local sensitivity ratio, maximum-gradient angles and their discrepancy,
//! the single-location angle density and the two-location ratio CDF.

use std::cell::Cell;
use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{GradientDraw, TargetDraw};
use crate::grid::{GridSpec, SurfaceGrid};
use crate::kernel::UnitVector;
use crate::model::ThetaSample;
use crate::special::{bvn_cdf, integrate, norm_pdf, orthant_prob, Estimate};

/// Magnitudes below this count as zero in ratios and angles.
pub const ZERO_TOL: f64 = 1e-300;

/// `u · ∇`.
pub fn directional_derivative(grad: &[f64; 2], u: &UnitVector) -> f64 {
    u.dot(grad)
}

/// `(u·∇Y)/(u·∇X)`. A vanishing denominator gives a signed infinity; `None`
/// when numerator and denominator both vanish.
pub fn lds_ratio(grad_y: &[f64; 2], grad_x: &[f64; 2], u: &UnitVector) -> Option<f64> {
    let num = directional_derivative(grad_y, u);
    let den = directional_derivative(grad_x, u);
    if den.abs() < ZERO_TOL {
        if num.abs() < ZERO_TOL {
            return None;
        }
        return Some(f64::INFINITY.copysign(num) * den.signum());
    }
    Some(num / den)
}

/// Scale `σ_y φ_y / (σ_x φ_x)` of the single-location ratio's Cauchy law.
pub fn cauchy_scale(theta: &ThetaSample) -> f64 {
    (theta.sigma2_y.sqrt() * theta.phi_y) / (theta.sigma2_x.sqrt() * theta.phi_x)
}

/// Direction of a gradient in `(−π, π]`; `None` for a zero gradient.
pub fn angle_of(grad: &[f64; 2]) -> Option<f64> {
    if grad[0].hypot(grad[1]) < ZERO_TOL {
        return None;
    }
    let a = grad[1].atan2(grad[0]);
    Some(if a <= -PI { PI } else { a })
}

/// Maximum-gradient directions of `X` and `Y` at one location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    theta_x: f64,
    theta_y: f64,
}

impl AngleSample {
    pub fn new(theta_x: f64, theta_y: f64) -> Result<Self> {
        for (name, v) in [("theta_x", theta_x), ("theta_y", theta_y)] {
            if !(v > -PI && v <= PI) {
                return Err(Error::Domain(format!("{name} = {v} is outside (-pi, pi]")));
            }
        }
        Ok(Self { theta_x, theta_y })
    }

    /// Angles of a pair of gradients; `None` if either vanishes.
    pub fn from_gradients(grad_x: &[f64; 2], grad_y: &[f64; 2]) -> Option<Self> {
        Some(Self {
            theta_x: angle_of(grad_x)?,
            theta_y: angle_of(grad_y)?,
        })
    }

    pub fn theta_x(&self) -> f64 {
        self.theta_x
    }

    pub fn theta_y(&self) -> f64 {
        self.theta_y
    }
}

/// `1 − cos(θ_X − θ_Y)`, in `[0, 2]`.
pub fn disc(angles: &AngleSample) -> f64 {
    (1.0 - (angles.theta_x - angles.theta_y).cos()).clamp(0.0, 2.0)
}

/// Constants of the joint angle density at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleDensityParams {
    pub a: f64,
    pub c: f64,
    pub det_sigma: f64,
    beta: f64,
}

impl AngleDensityParams {
    pub fn new(theta: &ThetaSample) -> Result<Self> {
        theta.validate()?;
        let sx = theta.sigma2_x * theta.phi_x * theta.phi_x;
        let sy = theta.sigma2_y * theta.phi_y * theta.phi_y;
        let beta = theta.beta1;
        Ok(Self {
            a: 1.0 / sy,
            c: (sy + beta * beta * sx) / sx,
            det_sigma: sx * sx * sy * sy,
            beta,
        })
    }

    /// `√a · β · cos(θ_X − θ_Y)`.
    pub fn atilde(&self, angles: &AngleSample) -> f64 {
        self.a.sqrt() * self.beta * (angles.theta_x - angles.theta_y).cos()
    }
}

/// Joint density of `(θ_X, θ_Y)` at a single location under the prior.
///
/// With `B = ac − Ã²` and `L = P(Z₁<0, Z₂<0; ρ = Ã/√(ac))`,
/// `f = C/(aB) · [1 + (Ã/√B)·2πL]`, `C = 1/(4π²√detΣ)`. The same expression
/// covers both signs of `Ã`, since `2πL(ρ) = π/2 + asin ρ` and the `Ã < 0`
/// form `π − 2πL(|ρ|)` equals it.
pub fn angle_density(angles: &AngleSample, theta: &ThetaSample) -> Result<f64> {
    let p = AngleDensityParams::new(theta)?;
    Ok(angle_density_with(&p, angles))
}

pub fn angle_density_with(p: &AngleDensityParams, angles: &AngleSample) -> f64 {
    let norm = 1.0 / (4.0 * PI * PI * p.det_sigma.sqrt());
    let at = p.atilde(angles);
    let ac = p.a * p.c;
    if at.abs() < 1e-12 {
        // Shared limit of both branches.
        return norm / (p.a * ac);
    }
    let b = ac - at * at;
    let rho = at / ac.sqrt();
    let tail = 2.0 * PI * orthant_prob(rho);
    (norm / (p.a * b) * (1.0 + at / b.sqrt() * tail)).max(0.0)
}

fn check_pd(name: &str, m: &[[f64; 2]; 2]) -> Result<()> {
    let ok = m.iter().flatten().all(|v| v.is_finite())
        && (m[0][1] - m[1][0]).abs() <= 1e-12 * (m[0][0].abs() + m[1][1].abs())
        && m[0][0] > 0.0
        && m[1][1] > 0.0
        && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} is not symmetric positive definite: {m:?}")))
    }
}

/// Radial cut-off for the standardized Rayleigh integral (`e^{−T²/2}` ≈ 1e-18).
const RAYLEIGH_CUTOFF: f64 = 9.0;

/// `P(n₁/m₁ < r₁, n₂/m₂ < r₂)` for independent zero-mean normal pairs
/// `(n₁, n₂) ~ N(0, cov_y)` and `(m₁, m₂) ~ N(0, cov_x)`.
///
/// Conditioning on `m` turns each orthant of `m` into a bivariate normal CDF
/// of `n`; the remaining integral over `m` is done in polar coordinates one
/// quadrant at a time with nested adaptive Gauss–Kronrod rules. The error
/// estimate sums the outer and (averaged) inner rule errors.
pub fn joint_ratio_cdf(r1: f64, r2: f64, cov_y: &[[f64; 2]; 2], cov_x: &[[f64; 2]; 2]) -> Result<Estimate> {
    check_pd("cov_y", cov_y)?;
    check_pd("cov_x", cov_x)?;
    if r1.is_nan() || r2.is_nan() {
        return Err(Error::Domain("ratio threshold is NaN".into()));
    }
    if r1 == f64::NEG_INFINITY || r2 == f64::NEG_INFINITY {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    if r1 == f64::INFINITY && r2 == f64::INFINITY {
        return Ok(Estimate { value: 1.0, error: 0.0 });
    }
    let s = [cov_y[0][0].sqrt(), cov_y[1][1].sqrt()];
    let rho_n = cov_y[0][1] / (s[0] * s[1]);
    let det_x = cov_x[0][0] * cov_x[1][1] - cov_x[0][1] * cov_x[1][0];
    // Inverse of cov_x.
    let (p11, p22, p12) = (cov_x[1][1] / det_x, cov_x[0][0] / det_x, -cov_x[0][1] / det_x);
    let pref = 1.0 / (2.0 * PI * det_x.sqrt());
    let r = [r1, r2];

    let mut total = 0.0;
    let mut error = 0.0;
    for quadrant in 0..4 {
        let lo = quadrant as f64 * FRAC_PI_2;
        let inner_err = Cell::new(0.0);
        let evals = Cell::new(0usize);
        let outer = integrate(
            |omega| {
                let e = [omega.cos(), omega.sin()];
                let q = p11 * e[0] * e[0] + 2.0 * p12 * e[0] * e[1] + p22 * e[1] * e[1];
                let sq = q.sqrt();
                let corr = e[0].signum() * e[1].signum() * rho_n;
                let slope: [f64; 2] = std::array::from_fn(|i| {
                    if r[i].is_infinite() {
                        r[i]
                    } else {
                        r[i] * e[i].abs() / (s[i] * sq)
                    }
                });
                let inner = integrate(
                    |t| {
                        let h = if slope[0].is_infinite() { slope[0] } else { t * slope[0] };
                        let k = if slope[1].is_infinite() { slope[1] } else { t * slope[1] };
                        t * (-0.5 * t * t).exp() * bvn_cdf(h, k, corr)
                    },
                    0.0,
                    RAYLEIGH_CUTOFF,
                    1e-13,
                    1e-12,
                    200,
                );
                let w = pref / q;
                inner_err.set(inner_err.get() + w * inner.error);
                evals.set(evals.get() + 1);
                w * inner.value
            },
            lo,
            lo + FRAC_PI_2,
            1e-11,
            1e-10,
            200,
        );
        total += outer.value;
        error += outer.error + inner_err.get() / evals.get().max(1) as f64 * FRAC_PI_2;
    }
    Ok(Estimate {
        value: total.clamp(0.0, 1.0),
        error,
    })
}

/// Link whose chain rule turns a latent-field gradient into the gradient of
/// a transformed surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    /// `λ = exp(Z)`.
    LogIntensity,
    /// `P = Φ(Z)`.
    Probit,
}

/// `g′(z) · ∇Z`. `z = −∞` marks a region of zero intensity and gives 0.
pub fn chain_rule_transform(kind: Link, z: f64, grad_z: &[f64; 2]) -> [f64; 2] {
    let d = match kind {
        Link::LogIntensity => z.exp(),
        Link::Probit => norm_pdf(z),
    };
    if d == 0.0 {
        return [0.0, 0.0];
    }
    [d * grad_z[0], d * grad_z[1]]
}

/// Per-cell summary statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Statistic {
    Median,
    /// Quantile at probability `q ∈ [0, 1]`.
    Quantile(f64),
}

impl Statistic {
    pub fn label(&self) -> String {
        match self {
            Statistic::Median => "posterior median".into(),
            Statistic::Quantile(q) => format!("posterior quantile {q}"),
        }
    }

    fn prob(&self) -> f64 {
        match self {
            Statistic::Median => 0.5,
            Statistic::Quantile(q) => *q,
        }
    }
}

/// Linear-interpolation quantile of sorted data. Interpolating towards an
/// infinite neighbour takes the nearer order statistic instead.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let h = pos - i as f64;
    if i + 1 >= n || h == 0.0 {
        return sorted[i.min(n - 1)];
    }
    let (a, b) = (sorted[i], sorted[i + 1]);
    if a == b {
        a
    } else if a.is_infinite() || b.is_infinite() {
        if h < 0.5 {
            a
        } else {
            b
        }
    } else {
        a + h * (b - a)
    }
}

/// Summarizes per-cell samples (`None` = missing) into a surface. Cells
/// whose samples are all missing are missing in the output.
pub fn summarize_surface(
    grid: &GridSpec,
    per_cell: &[Vec<Option<f64>>],
    statistic: Statistic,
) -> Result<SurfaceGrid> {
    if per_cell.len() != grid.len() {
        return Err(Error::Domain(format!(
            "{} cells of samples for a grid of {} cells",
            per_cell.len(),
            grid.len()
        )));
    }
    let q = statistic.prob();
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile {q} is outside [0, 1]")));
    }
    if let Some(c) = per_cell.iter().position(|v| v.is_empty()) {
        return Err(Error::Domain(format!("cell {c} has no samples")));
    }
    let summary: Vec<(Option<f64>, usize)> = per_cell
        .par_iter()
        .map(|samples| {
            let mut kept: Vec<f64> = samples.iter().flatten().copied().filter(|v| !v.is_nan()).collect();
            let excluded = samples.len() - kept.len();
            if kept.is_empty() {
                return (None, excluded);
            }
            kept.sort_by(f64::total_cmp);
            (Some(quantile_sorted(&kept, q)), excluded)
        })
        .collect();
    let (values, excluded): (Vec<_>, Vec<_>) = summary.into_iter().unzip();
    let mut s = SurfaceGrid::new(*grid, values, statistic.label())?;
    s.excluded = excluded;
    Ok(s)
}

/// Regroups composition draws by target: entry `k` holds `f` applied to
/// target `k` of every draw.
pub fn per_target_values<F>(draws: &[GradientDraw], n_targets: usize, f: F) -> Vec<Vec<Option<f64>>>
where
    F: Fn(&TargetDraw) -> Option<f64>,
{
    let mut out = vec![Vec::with_capacity(draws.len()); n_targets];
    for d in draws {
        for (k, t) in d.targets.iter().enumerate().take(n_targets) {
            out[k].push(f(t));
        }
    }
    out
}

/// Sensitivity ratio `D_uY/D_uX` of one target draw.
pub fn target_ratio(t: &TargetDraw, u: &UnitVector) -> Option<f64> {
    lds_ratio(t.grad_y.as_ref()?, t.grad_x.as_ref()?, u)
}

/// Angular discrepancy of one target draw.
pub fn target_disc(t: &TargetDraw) -> Option<f64> {
    AngleSample::from_gradients(t.grad_x.as_ref()?, t.grad_y.as_ref()?).map(|a| disc(&a))
}
