//! Self-check suite behind `gradfield validate`.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::Result;
use gradfield_core::gradient::draw_joint_gradients;
use gradfield_core::io::{read_surface, write_surface};
use gradfield_core::kernel::{Component, Field};
use gradfield_core::lgcp::elliptical_slice_step;
use gradfield_core::linalg::Factor;
use gradfield_core::model::uniform_locations;
use gradfield_core::processes::angle_density_with;
use gradfield_core::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub measured: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Mutation hook: flips the sign of the analytic kernel gradient.
    pub inject_sign_error: bool,
}

fn below(name: &str, tolerance: f64, measured: f64) -> Check {
    Check {
        name: name.into(),
        tolerance,
        measured,
        passed: measured.is_finite() && measured < tolerance,
    }
}

fn failed(name: &str, tolerance: f64, err: impl std::fmt::Display) -> Check {
    log::error!("{name}: {err}");
    Check {
        name: name.into(),
        tolerance,
        measured: f64::NAN,
        passed: false,
    }
}

fn run(name: &str, tolerance: f64, f: impl FnOnce() -> Result<f64>) -> Check {
    match f() {
        Ok(m) => below(name, tolerance, m),
        Err(e) => failed(name, tolerance, e),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn kernel_inputs(n: usize) -> Result<Vec<(SeparationVector, MaternParams)>> {
    let mut rng = stream_rng(0xfd, 0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let d = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        if norm(&d) < 0.05 {
            continue;
        }
        let p = MaternParams::new(rng.random_range(0.5..2.0), rng.random_range(0.3..3.0))?;
        out.push((SeparationVector::new(d[0], d[1])?, p));
    }
    Ok(out)
}

fn analytic_gradient(d: &SeparationVector, p: &MaternParams, opts: &Options) -> [f64; 2] {
    let g = grad_matern32(d, p);
    if opts.inject_sign_error {
        [-g[0], -g[1]]
    } else {
        g
    }
}

fn shifted(d: &SeparationVector, axis: usize, h: f64) -> Result<SeparationVector> {
    let (a, b) = (d.d1(), d.d2());
    Ok(if axis == 0 {
        SeparationVector::new(a + h, b)?
    } else {
        SeparationVector::new(a, b + h)?
    })
}

fn gradient_fd_error(opts: &Options) -> Result<f64> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (d, p) in kernel_inputs(100)? {
        let g = analytic_gradient(&d, &p, opts);
        let mut fd = [0.0; 2];
        for (axis, v) in fd.iter_mut().enumerate() {
            *v = (cov_matern32(&shifted(&d, axis, h)?, &p) - cov_matern32(&shifted(&d, axis, -h)?, &p)) / (2.0 * h);
        }
        worst = worst.max(norm(&[g[0] - fd[0], g[1] - fd[1]]) / norm(&g));
    }
    Ok(worst)
}

fn hessian_fd_error(opts: &Options) -> Result<f64> {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (d, p) in kernel_inputs(100)? {
        let hs = hess_matern32(&d, &p);
        let mut diff = Vec::with_capacity(4);
        for j in 0..2 {
            let plus = analytic_gradient(&shifted(&d, j, h)?, &p, opts);
            let minus = analytic_gradient(&shifted(&d, j, -h)?, &p, opts);
            for i in 0..2 {
                diff.push(hs[i][j] - (plus[i] - minus[i]) / (2.0 * h));
            }
        }
        let scale = norm(&[hs[0][0], hs[0][1], hs[1][0], hs[1][1]]);
        worst = worst.max(norm(&diff) / scale);
    }
    Ok(worst)
}

fn local_block_error() -> Result<f64> {
    let b = local_cov_block(&ThetaSample::simulation_truth())?;
    #[rustfmt::skip]
    let want = [
        1.25, 0.5, 0.0, 0.0, 0.0, 0.0,
        0.5, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.378125, 0.0, 0.55125, 0.0,
        0.0, 0.0, 0.0, 1.378125, 0.0, 0.55125,
        0.0, 0.0, 0.55125, 0.0, 1.1025, 0.0,
        0.0, 0.0, 0.0, 0.55125, 0.0, 1.1025,
    ];
    Ok((0..36)
        .map(|k| (b.0[(k / 6, k % 6)] - want[k]).abs())
        .fold(0.0, f64::max))
}

/// Prior draws of `(∇X, ∇Y)` at a single location.
fn prior_gradients(n: usize) -> Result<Vec<([f64; 2], [f64; 2])>> {
    let theta = ThetaSample::simulation_truth();
    let data = Dataset::new(Vec::new(), Vec::new(), Vec::new())?;
    let targets = PredictionTargets::gradients(&[Location::new(0.0, 0.0)?])?;
    let dist = conditional_gradient_distribution(&theta, &data, &targets)?;
    let mut rng = stream_rng(0xca, 0);
    Ok((0..n)
        .map(|_| {
            let t = &draw_joint_gradients(&dist, 0, &mut rng).targets[0];
            (t.grad_x.expect("gradient requested"), t.grad_y.expect("gradient requested"))
        })
        .collect())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    gradfield_core::processes::quantile_sorted(sorted, q)
}

fn cauchy_checks(draws: &[([f64; 2], [f64; 2])]) -> Vec<Check> {
    let u = UnitVector::normalized(1.0, 2.0).expect("nonzero");
    let mut r: Vec<f64> = draws.iter().filter_map(|(gx, gy)| lds_ratio(gy, gx, &u)).collect();
    r.sort_by(f64::total_cmp);
    let median = quantile(&r, 0.5);
    let half_iqr = 0.5 * (quantile(&r, 0.75) - quantile(&r, 0.25));
    vec![
        below("cauchy ratio median - 0.5", 0.02, (median - 0.5).abs()),
        below("cauchy ratio half-IQR - 1", 0.02, (half_iqr - 1.0).abs()),
    ]
}

fn ks_uniform(mut v: Vec<f64>, lo: f64, hi: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn angle_checks(draws: &[([f64; 2], [f64; 2])]) -> Vec<Check> {
    let tx: Vec<f64> = draws.iter().filter_map(|(gx, _)| angle_of(gx)).collect();
    let ty: Vec<f64> = draws.iter().filter_map(|(_, gy)| angle_of(gy)).collect();
    // ‖∇X‖ / (σ_x φ_x) is Chi(2).
    let t = ThetaSample::simulation_truth();
    let s = (t.sigma2_x.sqrt()) * t.phi_x;
    let mut len: Vec<f64> = draws.iter().map(|(gx, _)| norm(gx) / s).collect();
    len.sort_by(f64::total_cmp);
    let qq = (1..100)
        .map(|k| {
            let p = k as f64 / 100.0;
            (quantile(&len, p) - (-2.0 * (1.0 - p).ln()).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    vec![
        below("angle of grad X uniform (KS)", 0.01, ks_uniform(tx, -PI, PI)),
        below("angle of grad Y uniform (KS)", 0.01, ks_uniform(ty, -PI, PI)),
        below("norm of grad X Chi(2) Q-Q", 0.02, qq),
    ]
}

fn angle_density_mass(beta1: f64) -> Result<f64> {
    let mut t = ThetaSample::simulation_truth();
    t.beta1 = beta1;
    let p = AngleDensityParams::new(&t)?;
    let m = 400;
    let h = 2.0 * PI / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let a = AngleSample::new(-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h)?;
            total += angle_density_with(&p, &a);
        }
    }
    Ok(total * h * h)
}

fn angle_density_checks() -> Vec<Check> {
    let mut out: Vec<Check> = [-1.0, -0.5, -0.05, 0.05, 0.5, 1.0]
        .iter()
        .map(|&b| run(&format!("angle density mass at beta1 = {b}"), 1e-3, || Ok((angle_density_mass(b)? - 1.0).abs())))
        .collect();
    out.push(run("angle density at beta1 = 0 is 1/(4 pi^2)", 1e-12, || {
        let mut t = ThetaSample::simulation_truth();
        t.beta1 = 0.0;
        let mut worst = 0.0f64;
        for (a, b) in [(0.1, 2.0), (-3.0, 0.4), (1.0, 1.0)] {
            let d = angle_density(&AngleSample::new(a, b)?, &t)?;
            worst = worst.max((d - 1.0 / (4.0 * PI * PI)).abs());
        }
        Ok(worst)
    }));
    out
}

fn exchange_error() -> Result<f64> {
    let theta = ThetaSample::simulation_truth();
    let locs = uniform_locations(30, [0.0, 3.0, 0.0, 3.0], 0xe1);
    let data = simulate_bivariate_gp(&locs, &theta, 0xe2)?;
    let targets = uniform_locations(20, [0.5, 2.5, 0.5, 2.5], 0xe3);
    let level = |s: Location| -> Result<f64> {
        let d = conditional_gradient_distribution(&theta, &data, &PredictionTargets::with_flags(&[s], true, false)?)?;
        Ok(d.mean()[d.index_of(0, Component::Y).expect("level requested")])
    };
    let h = 1e-4;
    let mut worst = 0.0f64;
    for s in targets {
        let d = conditional_gradient_distribution(&theta, &data, &PredictionTargets::gradients(&[s])?)?;
        let mut diff = [0.0; 2];
        let mut grad = [0.0; 2];
        for axis in 0..2 {
            grad[axis] = d.mean()[d.index_of(0, Component::grad(Field::Response, axis)).expect("gradient requested")];
            let step = |sign: f64| {
                let (a, b) = (s.s1(), s.s2());
                if axis == 0 {
                    Location::new(a + sign * h, b)
                } else {
                    Location::new(a, b + sign * h)
                }
            };
            let fd = (level(step(1.0)?)? - level(step(-1.0)?)?) / (2.0 * h);
            diff[axis] = grad[axis] - fd;
        }
        worst = worst.max(norm(&diff) / norm(&grad).max(1e-8));
    }
    Ok(worst)
}

fn ratio_cdf_checks() -> Vec<Check> {
    let cy: [[f64; 2]; 2] = [[1.3, 0.5], [0.5, 0.9]];
    let cx = [[0.8, -0.3], [-0.3, 1.1]];
    let marginal = run("ratio cdf marginal vs Cauchy", 1e-3, || {
        let scale = (cy[0][0] / cx[0][0]).sqrt();
        let mut worst = 0.0f64;
        for p in [0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95] {
            let r = scale * (PI * (p - 0.5)).tan();
            let e = joint_ratio_cdf(r, f64::INFINITY, &cy, &cx)?;
            worst = worst.max((e.value - p).abs());
        }
        Ok(worst)
    });
    // Largest decrease along either axis of a 10 × 10 grid.
    let monotone = run("ratio cdf monotone decrease", 1e-9, || {
        let rs: Vec<f64> = (0..10).map(|k| -4.0 + k as f64 * 8.0 / 9.0).collect();
        let mut g = vec![vec![0.0; 10]; 10];
        for i in 0..10 {
            for j in 0..10 {
                g[i][j] = joint_ratio_cdf(rs[i], rs[j], &cy, &cx)?.value;
            }
        }
        let mut worst = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                if i > 0 {
                    worst = worst.max(g[i - 1][j] - g[i][j]);
                }
                if j > 0 {
                    worst = worst.max(g[i][j - 1] - g[i][j]);
                }
            }
        }
        Ok(worst)
    });
    vec![marginal, monotone]
}

fn batch_se(v: &[f64]) -> f64 {
    let size = v.len() / 50;
    let means: Vec<f64> = v.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

/// Largest |estimate − truth| / SE over the means and variances of a
/// 3-dimensional slice-sampled chain.
fn ess_zscore(loglik: impl Fn(&DVector<f64>) -> f64 + Copy, scale: f64, mu: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.5, -0.3, 0.2, -0.3, 0.8]);
    let f = Factor::new(a, "validation prior")?;
    let mut rng = stream_rng(0xe55, 0);
    let mut w = DVector::zeros(3);
    let mut tr = vec![Vec::with_capacity(10_000); 3];
    for k in 0..10_200 {
        w = elliptical_slice_step(&w, &f, scale, loglik, &mut rng)?.state;
        if k >= 200 {
            for i in 0..3 {
                tr[i].push(w[i]);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut worst = 0.0f64;
    for i in 0..3 {
        worst = worst.max((mean(&tr[i]) - mu[i]).abs() / batch_se(&tr[i]));
        let sq: Vec<f64> = tr[i].iter().map(|v| (v - mu[i]).powi(2)).collect();
        worst = worst.max((mean(&sq) - cov[(i, i)]).abs() / batch_se(&sq));
    }
    Ok(worst)
}

fn ess_checks() -> Vec<Check> {
    let prior = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.5, -0.3, 0.2, -0.3, 0.8]);
    let flat = run("slice sampler prior invariance (max z)", 3.0, || {
        ess_zscore(|_| 0.0, 1.3, &DVector::zeros(3), &(&prior * 1.69))
    });
    let conjugate = run("slice sampler conjugate moments (max z)", 3.0, || {
        let y = DVector::from_vec(vec![1.2, -0.7, 0.4]);
        let tau2 = 0.5;
        let inv = prior.clone().try_inverse().ok_or_else(|| anyhow::anyhow!("singular prior"))?;
        let post = (inv + DMatrix::identity(3, 3) / tau2)
            .try_inverse()
            .ok_or_else(|| anyhow::anyhow!("singular posterior"))?;
        let mu = &post * &y / tau2;
        let yv = [y[0], y[1], y[2]];
        ess_zscore(
            move |w| -0.5 * (0..3).map(|i| (w[i] - yv[i]).powi(2)).sum::<f64>() / tau2,
            1.0,
            &mu,
            &post,
        )
    });
    vec![flat, conjugate]
}

fn round_trip_check(scratch: &Path) -> Check {
    run("surface csv round trip (mismatches)", 0.5, || {
        let g = GridSpec::new(Window::new(-1.0, 2.0, 0.0, 1.0)?, 3, 2)?;
        let s = SurfaceGrid::new(
            g,
            vec![Some(0.1), None, Some(1.0 / 3.0), Some(f64::INFINITY), Some(-7e-12), Some(2.0 / 3.0)],
            "round trip",
        )?;
        write_surface(scratch, &s)?;
        let back = read_surface(scratch);
        std::fs::remove_file(scratch).ok();
        let back = back?;
        Ok(s.values.iter().zip(&back.values).filter(|(a, b)| a != b).count() as f64)
    })
}

/// Runs every check. `scratch` is a temporary file path used by the I/O
/// check.
pub fn run_all(opts: &Options, scratch: &Path) -> Report {
    let mut checks = vec![
        run("kernel gradient vs finite differences (max rel)", 1e-5, || gradient_fd_error(opts)),
        run("kernel hessian vs finite differences (max rel)", 1e-4, || hessian_fd_error(opts)),
        run("local covariance block at truth (max abs)", 1e-12, local_block_error),
    ];
    match prior_gradients(100_000) {
        Ok(draws) => {
            checks.extend(cauchy_checks(&draws));
            checks.extend(angle_checks(&draws));
        }
        Err(e) => checks.push(failed("prior gradient draws", 0.0, e)),
    }
    checks.extend(angle_density_checks());
    checks.push(run("kriging gradient exchange (max rel)", 1e-4, exchange_error));
    checks.extend(ratio_cdf_checks());
    checks.extend(ess_checks());
    checks.push(round_trip_check(scratch));
    Report {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
