//! Run configuration. The file is TOML; every key is optional and the
//! flat dotted form (`mcmc.iterations = 10500`) is the intended style.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradfield_core::{
    GridSpec, LgcpPriors, McmcConfig, PriorSpec, Statistic, ThetaSample, UnitVector, Window,
};
use serde::{Deserialize, Serialize};

/// Documentation of all keys, shown by `--help`.
pub const KEYS_HELP: &str = "\
Configuration keys (TOML, flat dotted form; all optional):
  seed, out, threads                    defaults for --seed, --out, --threads
  truth.{alpha0,beta0,beta1,sigma2_x,sigma2_y,phi_x,phi_y}
                                        simulation truths
  simulate.kind                         \"gp\" or \"lgcp\"
  simulate.n_full, simulate.n_obs       sites in the realization and the fitting subset
  simulate.window.{s1_min,s1_max,s2_min,s2_max}
  simulate.lgcp.{beta0,beta1,sigma2_z,phi_z,sigma2_x,phi_x,alpha0,n_covariate}
  data.path                             fitting data (default <out>/obs.csv)
  chain.path                            posterior chain (default <out>/chain.csv)
  mcmc.{iterations,burn_in,thin,adapt_target,adapt_window}
  priors.<param> = { family = \"normal\", mean = 0.0, var = 100.0 }
                                        families: normal, inverse_gamma, uniform, point_mass
  targets.window.*, targets.nx, targets.ny
                                        prediction grid (cell centroids)
  targets.nudge_coincident              offset targets sitting on observed sites
  directions = [[1.0, 0.0], [0.0, 1.0]] normalized on load
  surface.quantile                      summary quantile (default: median)
  surface.model                         \"gp\" or \"lgcp\" for sensitivity/discrepancy
  surface.thin                          use every thin-th posterior draw for surfaces
  heatmap.scale                         pixels per cell
  lgcp.pattern, lgcp.covariate          event and covariate CSVs
  lgcp.window.*, lgcp.nx, lgcp.ny       likelihood grid
  lgcp.phi_z                            fixed latent decay
  lgcp.priors.{beta0,beta1,sigma2_z}
  lgcp.covariate_iterations             iterations of the covariate-only fit
  lgcp.field_thin                       dump the latent field every field_thin-th draw
  lgcp.targets_nx, lgcp.targets_ny      LGCP sensitivity targets over lgcp.window
  mincontrast.phi_min, mincontrast.phi_max";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub truth: Truth,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub data: PathSection,
    #[serde(default)]
    pub chain: PathSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub targets: GridSection,
    pub directions: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub surface: SurfaceSection,
    #[serde(default)]
    pub heatmap: HeatmapSection,
    #[serde(default)]
    pub lgcp: LgcpSection,
    #[serde(default)]
    pub mincontrast: MinContrastSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truth {
    pub alpha0: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub phi_x: f64,
    pub phi_y: f64,
}

impl Default for Truth {
    fn default() -> Self {
        let t = ThetaSample::simulation_truth();
        Self {
            alpha0: t.alpha0,
            beta0: t.beta0,
            beta1: t.beta1,
            sigma2_x: t.sigma2_x,
            sigma2_y: t.sigma2_y,
            phi_x: t.phi_x,
            phi_y: t.phi_y,
        }
    }
}

impl Truth {
    pub fn theta(&self) -> ThetaSample {
        ThetaSample {
            alpha0: self.alpha0,
            beta0: self.beta0,
            beta1: self.beta1,
            sigma2_x: self.sigma2_x,
            sigma2_y: self.sigma2_y,
            phi_x: self.phi_x,
            phi_y: self.phi_y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Gp,
    Lgcp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub kind: ModelKind,
    pub n_full: usize,
    pub n_obs: usize,
    pub window: Window,
    pub lgcp: LgcpTruth,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gp,
            n_full: 2000,
            n_obs: 200,
            window: Window::new(0.0, 10.0, 0.0, 10.0).expect("valid window"),
            lgcp: LgcpTruth::default(),
        }
    }
}

/// Truths for a synthetic point pattern over a simulated covariate.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgcpTruth {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2_z: f64,
    pub phi_z: f64,
    pub alpha0: f64,
    pub sigma2_x: f64,
    pub phi_x: f64,
    /// Scattered covariate observations written alongside the pattern.
    pub n_covariate: usize,
}

impl Default for LgcpTruth {
    fn default() -> Self {
        Self {
            beta0: -4.25,
            beta1: -0.26,
            sigma2_z: 0.25,
            phi_z: 0.04,
            alpha0: 0.0,
            sigma2_x: 9.0,
            phi_x: 0.09,
            n_covariate: 300,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt_target: f64,
    pub adapt_window: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            adapt_target: d.adapt_target,
            adapt_window: d.adapt_window,
        }
    }
}

impl McmcSection {
    pub fn to_config(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            adapt_target: self.adapt_target,
            adapt_window: self.adapt_window,
            ..McmcConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
    /// Offset targets that coincide with observed sites instead of failing.
    pub nudge_coincident: bool,
}

impl Default for GridSection {
    /// 125 cells around (7.5, 6.5).
    fn default() -> Self {
        Self {
            window: Window::new(6.0, 9.0, 5.0, 8.0).expect("valid window"),
            nx: 25,
            ny: 5,
            nudge_coincident: false,
        }
    }
}

impl GridSection {
    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.window, self.nx, self.ny)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    pub quantile: Option<f64>,
    pub model: ModelKind,
    /// Use every `thin`-th posterior draw.
    pub thin: usize,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self {
            quantile: None,
            model: ModelKind::Gp,
            thin: 1,
        }
    }
}

impl SurfaceSection {
    pub fn statistic(&self) -> Statistic {
        match self.quantile {
            Some(q) if q != 0.5 => Statistic::Quantile(q),
            _ => Statistic::Median,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    pub scale: usize,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self { scale: 8 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgcpSection {
    pub pattern: Option<PathBuf>,
    pub covariate: Option<PathBuf>,
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
    pub phi_z: Option<f64>,
    pub priors: LgcpPriors,
    pub covariate_iterations: usize,
    pub field_thin: usize,
    /// Sensitivity targets: cell centroids of an `nx × ny` grid over the window.
    pub targets_nx: usize,
    pub targets_ny: usize,
}

impl Default for LgcpSection {
    fn default() -> Self {
        Self {
            pattern: None,
            covariate: None,
            window: Window::new(0.0, 150.0, 0.0, 150.0).expect("valid window"),
            nx: 30,
            ny: 30,
            phi_z: None,
            priors: LgcpPriors::default(),
            covariate_iterations: 5500,
            field_thin: 4,
            targets_nx: 15,
            targets_ny: 15,
        }
    }
}

impl LgcpSection {
    pub fn grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.window, self.nx, self.ny)?)
    }

    pub fn target_grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.window, self.targets_nx, self.targets_ny)?)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinContrastSection {
    pub phi_min: f64,
    pub phi_max: f64,
}

impl Default for MinContrastSection {
    fn default() -> Self {
        Self {
            phi_min: 0.005,
            phi_max: 1.0,
        }
    }
}

/// Configuration resolved against the command line.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub directions: Vec<UnitVector>,
}

impl Resolved {
    /// Loads `path` (or the defaults) and applies command-line overrides.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let seed = seed.or(cfg.seed).unwrap_or(1);
        let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("gradfield-out"));
        let raw = cfg.directions.clone().unwrap_or_else(|| vec![[1.0, 0.0], [0.0, 1.0]]);
        if raw.is_empty() {
            bail!("directions must not be empty");
        }
        let directions = raw
            .iter()
            .map(|d| UnitVector::normalized(d[0], d[1]).with_context(|| format!("direction {d:?}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            seed,
            out,
            directions,
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// `configured` if set, else `default` inside the output directory.
    pub fn input(&self, configured: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = configured.clone().unwrap_or_else(|| self.out_path(default));
        if !p.exists() {
            bail!("input file {} does not exist", p.display());
        }
        Ok(p)
    }
}
