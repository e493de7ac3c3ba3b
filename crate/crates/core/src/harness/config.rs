//! TOML experiment configuration.
//!
//! ```toml
//! experiment = "full-suite"      # simulate | verify-mp | verify-iso | vderiv | represent | full-suite
//! dimension = 1
//! horizon = 1.0
//! step = 0.001
//! resolution = 2000
//! replicates = 1000
//! seed = 7
//!
//! [[initial.atoms]]
//! position = [0.0]
//! mass = 1.0
//!
//! [[test_functions]]
//! family = "gaussian"
//! center = [0.0]
//! width = 1.0
//!
//! [[basis]]
//! activation = 0.25
//! h = { family = "gaussian", center = [0.5], width = 0.7 }
//!
//! [target]
//! kind = "mass_increment"
//! ```
//!
//! Every section except the grid and ensemble size has a default; see
//! [`ExperimentConfig::default_suite`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::FunctionalSpec;
use crate::measure::{AtomicMeasure, Point};
use crate::path::TimeGrid;
use crate::representation::TargetSpec;
use crate::simulator::{SimParams, MAX_RATE_STEP};
use crate::test_functions::{BoundedMap, GammaSpec, TestFunctionSpec, UIntegrandSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    VerifyMp,
    VerifyIso,
    Vderiv,
    Represent,
    FullSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::VerifyMp => "verify-mp",
            Experiment::VerifyIso => "verify-iso",
            Experiment::Vderiv => "vderiv",
            Experiment::Represent => "represent",
            Experiment::FullSuite => "full-suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub position: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub atoms: Vec<AtomSpec>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { atoms: vec![AtomSpec { position: vec![0.0], mass: 1.0 }] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiplier of the standard error in statistical gates.
    pub k: f64,
    /// Absolute tolerance of analytic-versus-difference derivative gates.
    pub vderiv: f64,
    /// Upper bound on the holdout relative residual, if gated.
    pub residual: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { k: 3.0, vderiv: 1e-10, residual: None }
    }
}

fn default_dimension() -> usize {
    1
}

fn default_rate() -> f64 {
    1.0
}

fn default_probes() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub horizon: f64,
    pub step: f64,
    /// Particle resolution `N`.
    pub resolution: u64,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub branching_rate: f64,
    #[serde(default)]
    pub population_cap: Option<usize>,
    #[serde(default)]
    pub initial: InitialSpec,
    /// Test functions for the martingale-problem check.
    #[serde(default)]
    pub test_functions: Vec<TestFunctionSpec>,
    /// U-integrands for the isometry check; every pair is tested.
    #[serde(default)]
    pub integrands: Vec<UIntegrandSpec>,
    /// Functionals for vertical-derivative probes.
    #[serde(default)]
    pub functionals: Vec<FunctionalSpec>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub basis: Vec<UIntegrandSpec>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Write every simulated path (event log and states) under `paths/`.
    #[serde(default)]
    pub write_paths: bool,
}

fn cfg_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn gaussian(center: f64, width: f64, dim: usize) -> TestFunctionSpec {
    let mut c = vec![0.0; dim];
    c[0] = center;
    TestFunctionSpec::Gaussian { center: c, width, amplitude: 1.0 }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("(document)", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            cfg_err(if field == "." { "(document)".to_string() } else { field }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Smallest configuration exercising every experiment.
    pub fn smoke() -> Self {
        Self {
            experiment: Experiment::FullSuite,
            dimension: 1,
            horizon: 0.25,
            step: 0.0125,
            resolution: 50,
            replicates: 2,
            seed: 1,
            branching_rate: 1.0,
            population_cap: None,
            initial: InitialSpec::default(),
            test_functions: Vec::new(),
            integrands: Vec::new(),
            functionals: Vec::new(),
            probes: 4,
            basis: Vec::new(),
            target: None,
            ridge: None,
            tolerances: Tolerances::default(),
            write_paths: false,
        }
    }

    /// Fills empty sections with the default suite: two Gaussian test
    /// functions, a four-element U-basis (two with random `Γ`), its
    /// U-functionals plus a squared pairing, and a planted target.
    pub fn default_suite(mut self) -> Self {
        let d = self.dimension;
        let t = self.horizon;
        let on_grid = |x: f64| (x / self.step).round() * self.step;
        if self.test_functions.is_empty() {
            self.test_functions = vec![gaussian(0.0, 1.0, d), gaussian(0.5, 0.7, d)];
        }
        if self.basis.is_empty() {
            let tanh = GammaSpec {
                time: on_grid(t / 4.0),
                inner: Some(gaussian(0.0, 1.0, d)),
                map: BoundedMap::Tanh { scale: 1.0 },
            };
            self.basis = vec![
                UIntegrandSpec { gamma: GammaSpec::default(), activation: 0.0, h: gaussian(0.0, 1.0, d) },
                UIntegrandSpec { gamma: tanh.clone(), activation: on_grid(t / 4.0), h: gaussian(1.0, 0.7, d) },
                UIntegrandSpec { gamma: GammaSpec::default(), activation: on_grid(t / 2.0), h: gaussian(-0.8, 0.8, d) },
                UIntegrandSpec { gamma: tanh, activation: on_grid(t / 2.0), h: gaussian(0.3, 1.5, d) },
            ];
        }
        if self.integrands.is_empty() {
            self.integrands = self.basis.clone();
        }
        if self.functionals.is_empty() {
            self.functionals = self.basis.iter().cloned().map(FunctionalSpec::U).collect();
            self.functionals.push(FunctionalSpec::Squared { h: gaussian(0.0, 1.0, d) });
        }
        if self.target.is_none() {
            let n = self.basis.len();
            let mut coefficients = vec![0.0; n];
            coefficients[0] = 2.0;
            if n > 2 {
                coefficients[2] = 0.5;
            }
            self.target = Some(TargetSpec::Planted { coefficients, integrands: self.basis.clone() });
        }
        self
    }

    pub fn grid(&self) -> Result<TimeGrid<f64>> {
        TimeGrid::new(self.horizon, self.step).map_err(|e| cfg_err("step", e.to_string()))
    }

    pub fn sim_params(&self) -> Result<SimParams<f64>> {
        let mut p = SimParams::new(self.resolution, self.dimension, self.grid()?, self.seed)
            .map_err(|e| cfg_err("resolution", e.to_string()))?;
        p.branching_rate = self.branching_rate;
        if let Some(cap) = self.population_cap {
            p.population_cap = cap;
        }
        p.validate().map_err(|e| cfg_err("branching_rate", e.to_string()))?;
        Ok(p)
    }

    pub fn initial_measure(&self) -> Result<AtomicMeasure<f64>> {
        let atoms = self
            .initial
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let p = Point::new(a.position.clone())
                    .map_err(|e| cfg_err(format!("initial.atoms[{i}].position"), e.to_string()))?;
                Ok((p, a.mass))
            })
            .collect::<Result<Vec<_>>>()?;
        AtomicMeasure::from_atoms(self.dimension, atoms).map_err(|e| cfg_err("initial.atoms", e.to_string()))
    }

    /// Checks every constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 || d > u16::MAX as usize {
            return Err(cfg_err("dimension", "must be between 1 and 65535"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(cfg_err("horizon", "must be positive"));
        }
        if !(self.step > 0.0) || self.step > self.horizon {
            return Err(cfg_err("step", "must be positive and at most the horizon"));
        }
        let grid = self.grid()?;
        if self.resolution == 0 {
            return Err(cfg_err("resolution", "must be at least 1"));
        }
        if self.replicates < 2 {
            return Err(cfg_err("replicates", "at least 2 replicates are needed for standard errors"));
        }
        if !(self.branching_rate > 0.0) || self.branching_rate * self.step > MAX_RATE_STEP {
            return Err(cfg_err("branching_rate", format!("must be positive with rate × step ≤ {MAX_RATE_STEP}")));
        }
        if self.population_cap == Some(0) {
            return Err(cfg_err("population_cap", "must be positive"));
        }
        if self.initial.atoms.is_empty() {
            return Err(cfg_err("initial.atoms", "needs at least one atom"));
        }
        for (i, a) in self.initial.atoms.iter().enumerate() {
            if a.position.len() != d {
                return Err(cfg_err(format!("initial.atoms[{i}].position"), format!("expected {d} coordinates")));
            }
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(cfg_err(format!("initial.atoms[{i}].mass"), "must be finite and >= 0"));
            }
        }
        for (i, h) in self.test_functions.iter().enumerate() {
            check_test_function(h, d, &format!("test_functions[{i}]"))?;
        }
        for (name, list) in [("integrands", &self.integrands), ("basis", &self.basis)] {
            for (i, u) in list.iter().enumerate() {
                check_integrand(u, d, &grid, &format!("{name}[{i}]"))?;
            }
        }
        for (i, f) in self.functionals.iter().enumerate() {
            let field = format!("functionals[{i}]");
            match f {
                FunctionalSpec::U(u) => check_integrand(u, d, &grid, &field)?,
                FunctionalSpec::GammaOnly { gamma } => check_gamma(gamma, d, &grid, &format!("{field}.gamma"))?,
                FunctionalSpec::Linear { h } | FunctionalSpec::Squared { h } => {
                    check_test_function(h, d, &format!("{field}.h"))?
                }
                FunctionalSpec::Constant { value } if !value.is_finite() => {
                    return Err(cfg_err(format!("{field}.value"), "must be finite"));
                }
                FunctionalSpec::Constant { .. } => {}
            }
        }
        match &self.target {
            Some(TargetSpec::Planted { coefficients, integrands }) => {
                if coefficients.len() != integrands.len() || integrands.is_empty() {
                    return Err(cfg_err("target.coefficients", "needs one coefficient per integrand"));
                }
                for (i, u) in integrands.iter().enumerate() {
                    check_integrand(u, d, &grid, &format!("target.integrands[{i}]"))?;
                }
            }
            Some(TargetSpec::TerminalPairing { h }) | Some(TargetSpec::SquaredPairing { h }) => {
                check_test_function(h, d, "target.h")?
            }
            Some(TargetSpec::MassIncrement) | None => {}
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(cfg_err("ridge", "must be finite and >= 0"));
            }
        }
        if !(self.tolerances.k > 0.0) {
            return Err(cfg_err("tolerances.k", "must be positive"));
        }
        if !(self.tolerances.vderiv > 0.0) {
            return Err(cfg_err("tolerances.vderiv", "must be positive"));
        }
        Ok(())
    }
}

fn check_test_function(h: &TestFunctionSpec, d: usize, field: &str) -> Result<()> {
    if h.dim() != d {
        return Err(cfg_err(format!("{field}.center"), format!("expected {d} coordinates, got {}", h.dim())));
    }
    h.build::<f64>().map(|_| ()).map_err(|e| cfg_err(field, e.to_string()))
}

fn check_gamma(g: &GammaSpec, d: usize, grid: &TimeGrid<f64>, field: &str) -> Result<()> {
    if let Some(k) = &g.inner {
        check_test_function(k, d, &format!("{field}.inner"))?;
    }
    if !matches!(g.map, BoundedMap::Constant { .. }) {
        grid.index_of(g.time).map_err(|e| cfg_err(format!("{field}.time"), e.to_string()))?;
    }
    g.build::<f64>().map(|_| ()).map_err(|e| cfg_err(field, e.to_string()))
}

fn check_integrand(u: &UIntegrandSpec, d: usize, grid: &TimeGrid<f64>, field: &str) -> Result<()> {
    check_test_function(&u.h, d, &format!("{field}.h"))?;
    check_gamma(&u.gamma, d, grid, &format!("{field}.gamma"))?;
    let a = grid.index_of(u.activation).map_err(|e| cfg_err(format!("{field}.activation"), e.to_string()))?;
    if a >= grid.steps() {
        return Err(cfg_err(format!("{field}.activation"), "must lie before the horizon"));
    }
    u.build::<f64>().map(|_| ()).map_err(|e| cfg_err(field, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "verify-mp"
horizon = 1.0
step = 0.01
resolution = 100
replicates = 10
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.dimension, 1);
        assert_eq!(c.initial, InitialSpec::default());
        assert_eq!(c.tolerances.k, 3.0);
        assert_eq!(c.experiment, Experiment::VerifyMp);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::smoke().default_suite();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&MINIMAL.replace("step = 0.01", "step = 0.3")), "step");
        assert_eq!(field_of(&MINIMAL.replace("replicates = 10", "replicates = 1")), "replicates");
        assert_eq!(field_of(&MINIMAL.replace("step = 0.01", "step = 0.2")), "branching_rate");
        assert_eq!(field_of(&MINIMAL.replace("horizon = 1.0", "horizon = \"long\"")), "horizon");
        let bad_basis = format!(
            "{MINIMAL}\n[[basis]]\nactivation = 0.255\nh = {{ family = \"gaussian\", center = [0.0], width = 1.0 }}\n"
        );
        assert_eq!(field_of(&bad_basis), "basis[0].activation");
        let bad_dim =
            format!("{MINIMAL}\n[[test_functions]]\nfamily = \"gaussian\"\ncenter = [0.0, 1.0]\nwidth = 1.0\n");
        assert_eq!(field_of(&bad_dim), "test_functions[0].center");
        let bad_mass = format!("{MINIMAL}\n[[initial.atoms]]\nposition = [0.0]\nmass = -1.0\n");
        assert_eq!(field_of(&bad_mass), "initial.atoms[0].mass");
        let unknown = format!("{MINIMAL}\nfoo = 1\n");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
    }
}
