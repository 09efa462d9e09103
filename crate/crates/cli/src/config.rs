//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use kaclab::densities::{GaussianMixture, MixtureSpec};
use kaclab::dissipation::Flow;
use kaclab::estimators::TestFunction;
use kaclab::kernels::{ChiProfile, PotentialSpec};
use kaclab::simulator::{InitialCondition, NoiseMode, SimConfig};
use kaclab::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Which experiment a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Simulate,
    VerifyDissipation,
    Oracle,
    Chaos,
    Hierarchy,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::VerifyDissipation => "verify-dissipation",
            CommandKind::Oracle => "oracle",
            CommandKind::Chaos => "chaos",
            CommandKind::Hierarchy => "hierarchy",
        }
    }
}

/// Top-level experiment file. Sections not used by a command are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional guard: must match the subcommand when present.
    pub command: Option<CommandKind>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub potential: Option<PotentialConfig>,
    pub simulation: Option<SimulationConfig>,
    pub initial: Option<InitialConfig>,
    pub suite: Option<SuiteSection>,
    pub oracle: Option<OracleSection>,
    pub chaos: Option<ChaosSection>,
    pub hierarchy: Option<HierarchySection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub gamma: f64,
    /// Required whenever `gamma < 0`.
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub chi: ChiProfile,
}

impl PotentialConfig {
    pub fn spec(&self) -> CliResult<PotentialSpec> {
        let epsilon = match self.epsilon {
            Some(e) => e,
            None if self.gamma < 0.0 => return Err(kaclab::Error::CutoffRequired { gamma: self.gamma }.into()),
            None => 0.0,
        };
        Ok(PotentialSpec::new(self.gamma, epsilon)?.with_chi(self.chi))
    }
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

fn default_pair_radius() -> f64 {
    3.0
}

fn default_pair_cap() -> f64 {
    100.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModeConfig {
    #[default]
    Antisymmetric,
    IndependentControl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Ignored by commands that sweep `N`.
    #[serde(default)]
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub eps_diffusion: f64,
    #[serde(default)]
    pub energy_projection: bool,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "one_u32")]
    pub noise_substeps: u32,
    #[serde(default)]
    pub noise_mode: NoiseModeConfig,
    #[serde(default = "default_pair_radius")]
    pub pair_radius: f64,
    #[serde(default = "default_pair_cap")]
    pub pair_cap: f64,
    /// Write one CSV per run next to the aggregate.
    #[serde(default = "yes")]
    pub write_runs: bool,
}

/// One-particle initial law, or fixed velocities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `N(mean, covariance)`; covariance row-major, default identity.
    Gaussian {
        #[serde(default)]
        mean: Option<[f64; 3]>,
        #[serde(default)]
        covariance: Option<[f64; 9]>,
    },
    /// Gaussian mixture on `R^3`, optionally centred and scaled to trace 3.
    Mixture {
        weights: Vec<f64>,
        means: Vec<[f64; 3]>,
        covariances: Vec<[f64; 9]>,
        #[serde(default)]
        normalize: bool,
    },
    /// The same velocities in every run.
    Fixed { velocities: Vec<[f64; 3]> },
}

impl InitialConfig {
    pub fn condition(&self) -> CliResult<InitialCondition> {
        Ok(match self {
            InitialConfig::Gaussian { mean, covariance } => {
                let mean = mean.unwrap_or([0.0; 3]).to_vec();
                let cov = covariance
                    .unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                    .to_vec();
                InitialCondition::Law(GaussianMixture::gaussian(mean, cov)?)
            }
            InitialConfig::Mixture {
                weights,
                means,
                covariances,
                normalize,
            } => {
                let g = GaussianMixture::new(&MixtureSpec {
                    weights: weights.clone(),
                    means: means.iter().map(|m| m.to_vec()).collect(),
                    covariances: covariances.iter().map(|c| c.to_vec()).collect(),
                })?;
                InitialCondition::Law(if *normalize { g.normalize_to_assumption()? } else { g })
            }
            InitialConfig::Fixed { velocities } => {
                InitialCondition::Fixed(velocities.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect())
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowConfig {
    Heat,
    Landau {
        gamma: f64,
        epsilon: Option<f64>,
        #[serde(default)]
        chi: ChiProfile,
    },
    FlippedLandau {
        gamma: f64,
        epsilon: Option<f64>,
        #[serde(default)]
        chi: ChiProfile,
    },
}

impl FlowConfig {
    pub fn flow(&self) -> CliResult<Flow> {
        Ok(match self {
            FlowConfig::Heat => Flow::Heat,
            FlowConfig::Landau { gamma, epsilon, chi } => Flow::Landau(
                PotentialConfig {
                    gamma: *gamma,
                    epsilon: Some(epsilon.unwrap_or(0.0)),
                    chi: *chi,
                }
                .spec()?,
            ),
            FlowConfig::FlippedLandau { gamma, epsilon, chi } => Flow::FlippedLandau(
                PotentialConfig {
                    gamma: *gamma,
                    epsilon: Some(epsilon.unwrap_or(0.0)),
                    chi: *chi,
                }
                .spec()?,
            ),
        })
    }
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub n_densities: usize,
    #[serde(default = "three")]
    pub n_base_components: usize,
    pub particle_counts: Vec<usize>,
    pub flows: Vec<FlowConfig>,
    pub n_samples: usize,
    #[serde(default)]
    pub bochner_points: usize,
    #[serde(default)]
    pub fd_samples: usize,
}

fn default_r0() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleSection {
    /// Two particles at `+-(r0/2) e_x`: decay of the angular autocorrelation.
    Sphere {
        #[serde(default = "default_r0")]
        r0: f64,
        /// Autocorrelation sampling interval in steps.
        #[serde(default = "one")]
        sample_every: usize,
        /// Paths for the spherical Brownian motion cross-check; 0 skips it.
        #[serde(default)]
        bm_paths: usize,
    },
    /// Second moments from an anisotropic Gaussian start under `gamma = 0`.
    Maxwell { covariance: [f64; 9] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub particle_counts: Vec<usize>,
    /// Cap on disjoint particle pairs used per run; all pairs when absent.
    pub max_pairs_per_run: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    /// Library name; only `bump` (products of smooth radial bumps) exists.
    pub name: String,
    pub centers: Vec<[f64; 3]>,
    pub radius: f64,
}

impl TestFunctionConfig {
    pub fn test_function(&self) -> CliResult<TestFunction> {
        if self.name != "bump" {
            return Err(CliError::Config(format!("unknown test function '{}'", self.name)));
        }
        Ok(TestFunction::new(self.centers.clone(), self.radius)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    pub particle_counts: Vec<usize>,
    /// One ensemble size per rung, or a single size for all.
    pub ensemble_sizes: Vec<usize>,
    pub test_function: TestFunctionConfig,
    /// Also run every rung at `2 dt` on the same Brownian paths and judge the
    /// Landau trend on residuals with the estimated scheme bias removed.
    #[serde(default)]
    pub scheme_correction: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((cfg, text))
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    pub fn check_command(&self, kind: CommandKind) -> CliResult<()> {
        match self.command {
            Some(c) if c != kind => Err(CliError::Config(format!(
                "config is for '{}', not '{}'",
                c.name(),
                kind.name()
            ))),
            _ => Ok(()),
        }
    }

    pub fn potential(&self) -> CliResult<PotentialSpec> {
        self.potential
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [potential] section".into()))?
            .spec()
    }

    pub fn simulation(&self) -> CliResult<&SimulationConfig> {
        self.simulation
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [simulation] section".into()))
    }

    pub fn initial(&self) -> CliResult<InitialCondition> {
        self.initial
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [initial] section".into()))?
            .condition()
    }

    /// Simulation settings with `N` and the initial condition supplied.
    pub fn sim_config(&self, n: usize, initial: InitialCondition) -> CliResult<SimConfig> {
        let s = self.simulation()?;
        let mut cfg = SimConfig::new(n, self.potential()?, s.dt, s.t_end, initial);
        cfg.seed = self.seed;
        cfg.ensemble_size = s.ensemble_size;
        cfg.eps_diffusion = s.eps_diffusion;
        cfg.energy_projection = s.energy_projection;
        cfg.record_every = s.record_every;
        cfg.noise_substeps = s.noise_substeps;
        cfg.noise_mode = match s.noise_mode {
            NoiseModeConfig::Antisymmetric => NoiseMode::Antisymmetric,
            NoiseModeConfig::IndependentControl => NoiseMode::IndependentControl,
        };
        cfg.pair_radius = s.pair_radius;
        cfg.pair_cap = s.pair_cap;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Row-major 3x3 matrix.
pub fn mat3(m: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(m)
}
