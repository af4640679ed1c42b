//! Subcommand implementations. Each returns the files it wrote.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradfield_core::io::{
    read_chain, read_covariate, read_covariate_chain, read_dataset, read_lgcp_chain, read_pattern,
    write_chain, write_covariate, write_covariate_chain, write_dataset, write_gradient_draws,
    write_lgcp_chain, write_pattern, write_surface,
};
use gradfield_core::lgcp::{covariate_posterior_mean, krige_covariate_grid, FieldSampler};
use gradfield_core::model::uniform_locations;
use gradfield_core::processes::{per_target_values, target_disc, target_ratio};
use gradfield_core::*;
use rand::RngCore;
use serde::Serialize;

use crate::config::{ModelKind, Resolved};
use crate::heatmap::{HeatmapImage, Ramp};
use crate::validate;

/// Independent seeds for the stages of one run.
mod stream {
    pub const LOCATIONS: u64 = 1;
    pub const SUBSET: u64 = 2;
    pub const FIELD: u64 = 3;
    pub const MCMC: u64 = 4;
    pub const COMPOSITION: u64 = 5;
    pub const COVARIATE_MCMC: u64 = 6;
    pub const LATENT: u64 = 7;
    pub const EVENTS: u64 = 8;
}

fn sub_seed(seed: u64, stage: u64) -> u64 {
    stream_rng(seed, stage).next_u64()
}

fn prepare_out(r: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&r.out).with_context(|| format!("creating output directory {}", r.out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct Interval {
    name: String,
    mean: f64,
    lower: f64,
    median: f64,
    upper: f64,
}

fn interval(name: &str, mut v: Vec<f64>) -> Interval {
    v.sort_by(f64::total_cmp);
    let q = |p| gradfield_core::processes::quantile_sorted(&v, p);
    Interval {
        name: name.into(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        lower: q(0.025),
        median: q(0.5),
        upper: q(0.975),
    }
}

fn print_intervals(rows: &[Interval]) {
    println!("{:<10} {:>12} {:>12} {:>12}", "param", "mean", "2.5%", "97.5%");
    for r in rows {
        println!("{:<10} {:>12.5} {:>12.5} {:>12.5}", r.name, r.mean, r.lower, r.upper);
    }
}

pub fn simulate(r: &Resolved) -> Result<Vec<PathBuf>> {
    match r.cfg.simulate.kind {
        ModelKind::Gp => simulate_gp(r),
        ModelKind::Lgcp => simulate_pattern(r),
    }
}

fn simulate_gp(r: &Resolved) -> Result<Vec<PathBuf>> {
    let sim = &r.cfg.simulate;
    if sim.n_obs > sim.n_full {
        bail!("simulate.n_obs = {} exceeds simulate.n_full = {}", sim.n_obs, sim.n_full);
    }
    sim.window.validate()?;
    let theta = r.cfg.truth.theta();
    theta.validate()?;
    prepare_out(r)?;
    let locs = uniform_locations(sim.n_full, sim.window.as_array(), sub_seed(r.seed, stream::LOCATIONS));
    log::info!("simulating {} sites", sim.n_full);
    let full = simulate_bivariate_gp(&locs, &theta, sub_seed(r.seed, stream::FIELD))?;
    let mut idx = rand::seq::index::sample(&mut stream_rng(r.seed, stream::SUBSET), sim.n_full, sim.n_obs).into_vec();
    idx.sort_unstable();
    let obs = full.subset(&idx)?;
    let paths = [r.out_path("full.csv"), r.out_path("obs.csv"), r.out_path("truth.json")];
    write_dataset(&paths[0], &full)?;
    write_dataset(&paths[1], &obs)?;
    write_json(&paths[2], &theta)?;
    Ok(paths.to_vec())
}

/// A covariate surface and an LGCP pattern driven by it. The covariate is
/// drawn jointly at the likelihood-grid centroids and at scattered sites,
/// which are written as the covariate observations.
fn simulate_pattern(r: &Resolved) -> Result<Vec<PathBuf>> {
    let t = r.cfg.simulate.lgcp;
    let grid = r.cfg.lgcp.grid()?;
    prepare_out(r)?;
    let centroids = grid.centroids();
    let sites = uniform_locations(t.n_covariate, grid.window.as_array(), sub_seed(r.seed, stream::LOCATIONS));
    let mut all = centroids.clone();
    all.extend_from_slice(&sites);
    let x: Vec<f64> = FieldSampler::new(&all, &MaternParams::new(t.sigma2_x, t.phi_x)?)?
        .draw(&mut stream_rng(r.seed, stream::FIELD))
        .into_iter()
        .map(|v| t.alpha0 + v)
        .collect();
    let w = FieldSampler::new(&centroids, &MaternParams::new(t.sigma2_z, t.phi_z)?)?.draw(&mut stream_rng(r.seed, stream::LATENT));
    let eta: Vec<f64> = (0..grid.len()).map(|c| t.beta0 + t.beta1 * x[c] + w[c]).collect();
    let pattern = simulate_lgcp(&grid, &eta, sub_seed(r.seed, stream::EVENTS))?;
    log::info!("simulated {} events", pattern.len());
    let paths = [r.out_path("pattern.csv"), r.out_path("covariate.csv"), r.out_path("lgcp_truth.json")];
    write_pattern(&paths[0], &pattern)?;
    write_covariate(&paths[1], &sites, &x[grid.len()..])?;
    write_json(&paths[2], &t)?;
    Ok(paths.to_vec())
}

pub fn fit_gp(r: &Resolved) -> Result<Vec<PathBuf>> {
    let data = read_dataset(&r.input(&r.cfg.data.path, "obs.csv")?)?;
    let cfg = r.cfg.mcmc.to_config(sub_seed(r.seed, stream::MCMC));
    prepare_out(r)?;
    log::info!("fitting {} sites for {} iterations", data.len(), cfg.iterations);
    let chain = fit_mcmc(&data, &r.cfg.priors, &cfg)?;
    log::info!("acceptance {:?}", chain.acceptance);
    let rows: Vec<Interval> = ThetaSample::NAMES
        .iter()
        .enumerate()
        .map(|(k, n)| interval(n, chain.trace(k)))
        .collect();
    print_intervals(&rows);
    let paths = [r.out_path("chain.csv"), r.out_path("summary.json")];
    write_chain(&paths[0], &chain)?;
    write_json(&paths[1], &rows)?;
    Ok(vec![paths[0].clone(), gradfield_core::io::sidecar_path(&paths[0]), paths[1].clone()])
}

struct LgcpInputs {
    pattern: PointPattern,
    x_obs: CovariateObservations,
}

fn lgcp_inputs(r: &Resolved) -> Result<LgcpInputs> {
    let l = &r.cfg.lgcp;
    let pattern = read_pattern(&r.input(&l.pattern, "pattern.csv")?, l.window)?;
    let (locs, x) = read_covariate(&r.input(&l.covariate, "covariate.csv")?)?;
    Ok(LgcpInputs {
        pattern,
        x_obs: CovariateObservations::new(locs, x)?,
    })
}

pub fn fit_lgcp_cmd(r: &Resolved) -> Result<Vec<PathBuf>> {
    let l = &r.cfg.lgcp;
    let grid = l.grid()?;
    let inp = lgcp_inputs(r)?;
    prepare_out(r)?;
    let phi_z = match l.phi_z {
        Some(p) => p,
        None => {
            let fit = minimum_contrast_phi(&inp.pattern, (r.cfg.mincontrast.phi_min, r.cfg.mincontrast.phi_max))?;
            log::info!("phi_z = {} by minimum contrast", fit.phi);
            fit.phi
        }
    };
    let mut ccfg = r.cfg.mcmc.to_config(sub_seed(r.seed, stream::COVARIATE_MCMC));
    ccfg.iterations = l.covariate_iterations;
    log::info!("fitting covariate at {} sites", inp.x_obs.x().len());
    let cchain = fit_covariate_mcmc(inp.x_obs.locations(), inp.x_obs.x(), &r.cfg.priors, &ccfg)?;
    let plug = covariate_posterior_mean(&cchain)?;
    let x_grid = krige_covariate_grid(&inp.x_obs, &plug, &grid)?;
    log::info!("fitting LGCP to {} events on {} cells", inp.pattern.len(), grid.len());
    let chain = fit_lgcp(&inp.pattern, &x_grid, &grid, phi_z, &l.priors, &r.cfg.mcmc.to_config(sub_seed(r.seed, stream::MCMC)))?;
    let mut rows = vec![
        interval("alpha0", cchain.samples.iter().map(|s| s.alpha0).collect()),
        interval("sigma2_x", cchain.samples.iter().map(|s| s.sigma2_x).collect()),
        interval("phi_x", cchain.samples.iter().map(|s| s.phi_x).collect()),
    ];
    rows.push(interval("beta0", chain.samples.iter().map(|s| s.beta0).collect()));
    rows.push(interval("beta1", chain.samples.iter().map(|s| s.beta1).collect()));
    rows.push(interval("sigma2_z", chain.samples.iter().map(|s| s.sigma2_z).collect()));
    print_intervals(&rows);
    let p = |n: &str| r.out_path(n);
    write_covariate_chain(&p("covariate_chain.csv"), &cchain)?;
    write_surface(&p("x_grid.csv"), &x_grid)?;
    write_lgcp_chain(&p("lgcp_chain.csv"), &p("lgcp_field.csv"), &chain, l.field_thin)?;
    write_json(&p("lgcp_summary.json"), &rows)?;
    Ok(vec![
        p("covariate_chain.csv"),
        p("covariate_chain.json"),
        p("x_grid.csv"),
        p("lgcp_chain.csv"),
        p("lgcp_chain.json"),
        p("lgcp_field.csv"),
        p("lgcp_summary.json"),
    ])
}

fn thinned<T: Clone>(v: &[T], thin: usize) -> Vec<T> {
    v.iter().step_by(thin.max(1)).cloned().collect()
}

/// Rejects target windows reaching outside the observed sites' bounding box.
fn check_within_data(targets: &GridSpec, data: &Dataset) -> Result<()> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for s in data.locations() {
        for (k, v) in [s.s1(), s.s2()].into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let w = &targets.window;
    if w.s1_min < lo[0] || w.s1_max > hi[0] || w.s2_min < lo[1] || w.s2_max > hi[1] {
        bail!(
            "target window {:?} is not inside the data extent [{}, {}] x [{}, {}]",
            w.as_array(),
            lo[0],
            hi[0],
            lo[1],
            hi[1]
        );
    }
    Ok(())
}

fn gp_draws(r: &Resolved) -> Result<(GridSpec, CompositionDraws)> {
    let data = read_dataset(&r.input(&r.cfg.data.path, "obs.csv")?)?;
    let chain = read_chain(&r.input(&r.cfg.chain.path, "chain.csv")?)?;
    let grid = r.cfg.targets.grid()?;
    check_within_data(&grid, &data)?;
    let targets = PredictionTargets::gradients(&grid.centroids())?.nudge_coincident(r.cfg.targets.nudge_coincident);
    let samples = thinned(&chain.samples, r.cfg.surface.thin);
    log::info!("{} joint gradient draws at {} targets", samples.len(), grid.len());
    let draws = composition_sample(&samples, &data, &targets, sub_seed(r.seed, stream::COMPOSITION))?;
    if !draws.failed.is_empty() {
        log::warn!("{} posterior draws skipped", draws.failed.len());
    }
    Ok((grid, draws))
}

pub fn gradients(r: &Resolved) -> Result<Vec<PathBuf>> {
    let (_, draws) = gp_draws(r)?;
    prepare_out(r)?;
    let path = r.out_path("gradient_draws.csv");
    write_gradient_draws(&path, &draws.draws)?;
    Ok(vec![path])
}

fn write_surface_and_image(r: &Resolved, stem: &str, s: &SurfaceGrid, ramp: Ramp) -> Result<Vec<PathBuf>> {
    let csv = r.out_path(&format!("{stem}.csv"));
    let ppm = r.out_path(&format!("{stem}.ppm"));
    write_surface(&csv, s)?;
    HeatmapImage::render(s, ramp, r.cfg.heatmap.scale)?.write(&ppm)?;
    Ok(vec![csv, ppm])
}

struct LgcpPosterior {
    chain: LgcpChain,
    covariate: CovariateChain,
    x_obs: CovariateObservations,
    targets: GridSpec,
}

fn lgcp_posterior(r: &Resolved) -> Result<LgcpPosterior> {
    let l = &r.cfg.lgcp;
    let (locs, x) = read_covariate(&r.input(&l.covariate, "covariate.csv")?)?;
    let chain_path = r.input(&None, "lgcp_chain.csv")?;
    let field_path = r.input(&None, "lgcp_field.csv")?;
    let mut chain = read_lgcp_chain(&chain_path, &field_path)?;
    if chain.grid != l.grid()? {
        bail!(
            "chain grid {}x{} over {:?} does not match the configured lgcp grid {}x{} over {:?}",
            chain.grid.nx,
            chain.grid.ny,
            chain.grid.window.as_array(),
            l.nx,
            l.ny,
            l.window.as_array()
        );
    }
    chain.samples = thinned(&chain.samples, r.cfg.surface.thin);
    let covariate = read_covariate_chain(&r.input(&None, "covariate_chain.csv")?)?;
    Ok(LgcpPosterior {
        chain,
        covariate,
        x_obs: CovariateObservations::new(locs, x)?,
        targets: l.target_grid()?,
    })
}

fn surface_options(r: &Resolved) -> SurfaceOptions {
    SurfaceOptions {
        statistic: r.cfg.surface.statistic(),
        ..SurfaceOptions::median(sub_seed(r.seed, stream::COMPOSITION))
    }
}

pub fn sensitivity(r: &Resolved) -> Result<Vec<PathBuf>> {
    let stat = r.cfg.surface.statistic();
    let mut surfaces = Vec::with_capacity(r.directions.len());
    match r.cfg.surface.model {
        ModelKind::Gp => {
            let (grid, draws) = gp_draws(r)?;
            for u in &r.directions {
                let cells = per_target_values(&draws.draws, grid.len(), |t| target_ratio(t, u));
                let mut s = summarize_surface(&grid, &cells, stat)?;
                s.label = format!("{} of D_uY / D_uX, u = ({}, {})", stat.label(), u.u1(), u.u2());
                surfaces.push(s);
            }
        }
        ModelKind::Lgcp => {
            let p = lgcp_posterior(r)?;
            for u in &r.directions {
                let mut s = intensity_sensitivity_surfaces(&p.chain, &p.covariate, &p.x_obs, &p.targets, u, &surface_options(r))?.ratio;
                s.label = format!("{}, u = ({}, {})", s.label, u.u1(), u.u2());
                surfaces.push(s);
            }
        }
    }
    prepare_out(r)?;
    let mut out = Vec::new();
    for (k, s) in surfaces.iter().enumerate() {
        out.extend(write_surface_and_image(r, &format!("ratio_u{}", k + 1), s, Ramp::Diverging)?);
    }
    Ok(out)
}

pub fn discrepancy(r: &Resolved) -> Result<Vec<PathBuf>> {
    let stat = r.cfg.surface.statistic();
    let s = match r.cfg.surface.model {
        ModelKind::Gp => {
            let (grid, draws) = gp_draws(r)?;
            let cells = per_target_values(&draws.draws, grid.len(), target_disc);
            let mut s = summarize_surface(&grid, &cells, stat)?;
            s.label = format!("{} of disc", stat.label());
            s
        }
        ModelKind::Lgcp => {
            let p = lgcp_posterior(r)?;
            intensity_sensitivity_surfaces(&p.chain, &p.covariate, &p.x_obs, &p.targets, &r.directions[0], &surface_options(r))?.disc
        }
    };
    prepare_out(r)?;
    write_surface_and_image(r, "disc", &s, Ramp::Sequential { lo: 0.0, hi: 2.0 })
}

pub fn mincontrast(r: &Resolved) -> Result<Vec<PathBuf>> {
    let inp = read_pattern(&r.input(&r.cfg.lgcp.pattern, "pattern.csv")?, r.cfg.lgcp.window)?;
    let m = r.cfg.mincontrast;
    let fit = minimum_contrast_phi(&inp, (m.phi_min, m.phi_max))?;
    println!("phi = {:?}, sigma2 = {:?}", fit.phi, fit.sigma2);
    prepare_out(r)?;
    let path = r.out_path("mincontrast.json");
    write_json(&path, &fit)?;
    Ok(vec![path])
}

/// Runs the self-checks; the report is written even when checks fail.
pub fn validate_cmd(r: &Resolved, opts: &validate::Options) -> Result<(validate::Report, PathBuf)> {
    prepare_out(r)?;
    let report = validate::run_all(opts, &r.out_path("validate_roundtrip.tmp.csv"));
    for c in &report.checks {
        println!(
            "{} {} (measured {:e}, tolerance {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    let path = r.out_path("validate.json");
    write_json(&path, &report)?;
    Ok((report, path))
}
