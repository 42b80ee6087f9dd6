//! Run configuration read from TOML (or JSON, as echoed in `run.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use confspace::hierarchy::{Closure, Layout};
use confspace::models::ModelParams;
use confspace::simulator::{Initial, SimConfig};
use confspace::{IntegrationMode, LPIntegrator, Window};

use crate::suites::SuiteParams;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Simulate,
    Hierarchy,
    Functional,
    Duality,
    Crosscheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality: Option<DualitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosscheck: Option<CrosscheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    TensorGrid,
    MonteCarlo,
}

fn one() -> f64 {
    1.0
}
fn three() -> usize {
    3
}
fn tensor_points() -> usize {
    24
}
fn mc_samples() -> usize {
    10_000
}
fn one_usize() -> usize {
    1
}

/// Lebesgue–Poisson integration settings. Monte Carlo streams are seeded
/// from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub mode: ModeName,
    #[serde(default = "one")]
    pub z: f64,
    #[serde(default = "three")]
    pub order_cap: usize,
    #[serde(default = "tensor_points")]
    pub points_per_axis: usize,
    #[serde(default = "mc_samples")]
    pub samples_per_sector: usize,
    #[serde(default = "one_usize")]
    pub inner_samples: usize,
}

impl IntegratorSection {
    pub fn build(&self, window: &Window, seed: Option<u64>) -> Result<LPIntegrator, CliError> {
        let mode = match self.mode {
            ModeName::TensorGrid => IntegrationMode::TensorGrid { points_per_axis: self.points_per_axis },
            ModeName::MonteCarlo => IntegrationMode::MonteCarlo {
                samples_per_sector: self.samples_per_sector,
                seed: seed.ok_or_else(|| CliError::Config("a Monte Carlo integrator needs a seed".into()))?,
                inner_samples: self.inner_samples,
            },
        };
        LPIntegrator::new(window.clone(), self.z, self.order_cap, mode).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn is_stochastic(&self) -> bool {
        self.mode == ModeName::MonteCarlo
    }
}

fn particle_cap() -> usize {
    100_000
}
fn check_every() -> usize {
    1000
}
fn bins() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub initial: Initial,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "particle_cap")]
    pub particle_cap: usize,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    #[serde(default = "check_every")]
    pub check_every: usize,
    /// Histogram bins for the correlation estimates.
    #[serde(default = "bins")]
    pub bins: usize,
}

impl SimSection {
    pub fn to_sim(&self, window: &Window, model: &ModelParams, seed: u64) -> SimConfig {
        SimConfig {
            window: window.clone(),
            model: model.clone(),
            initial: self.initial.clone(),
            t_end: self.t_end,
            snapshot_times: self.snapshot_times.clone(),
            seed,
            particle_cap: self.particle_cap,
            replicas: self.replicas,
            check_every: self.check_every,
        }
    }
}

fn default_layout() -> Layout {
    Layout::TranslationInvariant { radial_bins: 20 }
}
fn default_dt() -> f64 {
    1e-3
}

/// Starts from the Poisson correlation function `k = e_λ(initial_density)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    #[serde(default = "one_usize")]
    pub order: usize,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    pub initial_density: f64,
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub closure: Closure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    Constant { value: f64 },
    Bump { center: Vec<f64>, width: f64, scale: f64 },
    /// Random smooth periodic function drawn from the run seed.
    Trig { offset: f64, amplitude: f64, modes: usize },
}

/// Evaluates `B(θ)` and `L̃` for the Poisson state `k = e_λ(density)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSection {
    pub density: f64,
    pub theta: ThetaSpec,
}

impl FunctionalSection {
    pub fn is_stochastic(&self) -> bool {
        matches!(self.theta, ThetaSpec::Trig { .. })
    }
}

fn ten() -> usize {
    10
}
fn two() -> usize {
    2
}
fn sigma_tol() -> f64 {
    3.0
}
fn rel_tol() -> f64 {
    0.01
}
fn pair_amp() -> f64 {
    0.3
}

/// Random `(G, k)` pairs drawn from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualitySection {
    #[serde(default = "ten")]
    pub trials: usize,
    #[serde(default = "two")]
    pub g_order: usize,
    #[serde(default = "three")]
    pub k_order: usize,
    #[serde(default = "pair_amp")]
    pub pair_amplitude: f64,
    /// Monte Carlo pass criterion, in combined standard errors.
    #[serde(default = "sigma_tol")]
    pub max_sigma: f64,
    /// Tensor-grid pass criterion.
    #[serde(default = "rel_tol")]
    pub max_relative: f64,
}

fn z_max() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosscheckSection {
    #[serde(default = "z_max")]
    pub max_abs_z: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(default)]
    pub params: SuiteParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    fn need<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("command {:?} needs a [{name}] section", self.command)))
    }

    pub fn model(&self) -> Result<&ModelParams, CliError> {
        self.need(&self.model, "model")
    }

    pub fn window(&self) -> Result<&Window, CliError> {
        self.need(&self.window, "window")
    }

    pub fn integrator(&self) -> Result<&IntegratorSection, CliError> {
        self.need(&self.integrator, "integrator")
    }

    pub fn sim(&self) -> Result<&SimSection, CliError> {
        self.need(&self.sim, "sim")
    }

    pub fn hierarchy(&self) -> Result<&HierarchySection, CliError> {
        self.need(&self.hierarchy, "hierarchy")
    }

    pub fn functional(&self) -> Result<&FunctionalSection, CliError> {
        self.need(&self.functional, "functional")
    }

    pub fn duality(&self) -> Result<&DualitySection, CliError> {
        self.need(&self.duality, "duality")
    }

    /// Whether the command draws random numbers with the given sections.
    pub fn is_stochastic(&self) -> bool {
        let mc = self.integrator.as_ref().is_some_and(|i| i.is_stochastic());
        match self.command {
            // validation suites run from a fixed default seed unless one is given
            Command::Validate => false,
            Command::Simulate | Command::Duality | Command::Crosscheck => true,
            Command::Hierarchy => mc,
            Command::Functional => mc || self.functional.as_ref().is_some_and(|f| f.is_stochastic()),
        }
    }

    /// Checks that every section the command reads is present.
    pub fn check_sections(&self) -> Result<(), CliError> {
        match self.command {
            Command::Validate => {}
            Command::Simulate => {
                self.model()?;
                self.window()?;
                self.sim()?;
            }
            Command::Hierarchy => {
                self.model()?;
                self.window()?;
                self.integrator()?;
                self.hierarchy()?;
            }
            Command::Functional => {
                self.model()?;
                self.window()?;
                self.integrator()?;
                self.functional()?;
            }
            Command::Duality => {
                self.model()?;
                self.window()?;
                self.integrator()?;
                self.duality()?;
            }
            Command::Crosscheck => {
                self.model()?;
                self.window()?;
                self.integrator()?;
                self.sim()?;
                self.hierarchy()?;
            }
        }
        if self.is_stochastic() && self.seed.is_none() {
            return Err(CliError::Config(format!("command {:?} is stochastic and needs a seed (config `seed` or --seed)", self.command)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIMULATE: &str = r#"
command = "simulate"
seed = 7

[model]
type = "contact"
lambda = 0.0
a = { kind = "tophat", height = 0.5, radius = 1.0 }

[window]
lower = [0.0]
upper = [10.0]

[sim]
initial = { kind = "poisson", z = 1.0 }
t_end = 1.0
snapshot_times = [0.0, 0.5, 1.0]
replicas = 4
"#;

    #[test]
    fn parses_and_round_trips() {
        let c: RunConfig = toml::from_str(SIMULATE).unwrap();
        assert_eq!(c.command, Command::Simulate);
        c.check_sections().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_and_sections_are_required() {
        let mut c: RunConfig = toml::from_str(SIMULATE).unwrap();
        c.seed = None;
        assert!(matches!(c.check_sections(), Err(CliError::Config(m)) if m.contains("seed")));
        let mut c: RunConfig = toml::from_str(SIMULATE).unwrap();
        c.sim = None;
        assert!(matches!(c.check_sections(), Err(CliError::Config(m)) if m.contains("[sim]")));
        assert!(toml::from_str::<RunConfig>("command = \"simulate\"\nbogus = 1\n").is_err());
    }
}
