//! Scenario files and the preset catalog.
//!
//! A scenario is TOML (or JSON when the file ends in `.json`):
//!
//! ```toml
//! name = "quadratic-constant"
//! seed = 0
//!
//! [coefficients]
//! d = { preset = "constant", params = { value = 1.0 } }
//! rho = { preset = "constant", params = { value = 1.0 } }
//! beta = { preset = "constant", params = { value = 2.0 } }
//! gamma = { preset = "constant", params = { value = 1.0 } }
//!
//! [grid]
//! n_cells = 64
//!
//! [integrator]
//! dt = 1e-3
//! t_end = 5.0
//! scheme = "imex_cn"
//!
//! [initial]
//! v0 = { preset = "cosine", params = { mean = 0.5, amplitude = 0.5 } }
//! s0 = 1.0
//!
//! [run]
//! r = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    sample_coefficients, sample_profile, CoefficientSpec, DeclaredBounds, KernelPreset, KernelSpec, ModelCoefficients,
    ProfilePreset, ProfileSpec,
};
use crate::dynamics::{IntegratorConfig, Scheme};
use crate::error::{Result, SisError};
use crate::grid::{Grid, State};
use crate::ode::OdeMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub v0: ProfileSpec,
    pub s0: f64,
}

impl InitialSpec {
    pub fn state(&self, grid: &Grid) -> Result<State> {
        let v = sample_profile(&self.v0, grid, "v0")?;
        State::new(grid, v, self.s0)
    }
}

/// How `steady-state` picks its solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Bilinear when γ ≡ 0, fixed point otherwise.
    #[default]
    Auto,
    Bilinear,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupParams {
    pub n_list: Vec<usize>,
    pub dt_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

/// Subcommand parameters; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    /// Ray parameter R for fixed-point steady states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Total infected mass for the bilinear steady state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_mode: Option<GammaMode>,
    /// R values for `spectral-scan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_values: Option<Vec<f64>>,
    /// Strain count for the `ode` reduction; 1 means the single-strain system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_method: Option<OdeMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup: Option<BlowupParams>,
}

fn is_default_run(r: &RunParams) -> bool {
    *r == RunParams::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub coefficients: CoefficientSpec,
    pub grid: GridSpec,
    pub integrator: IntegratorConfig,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "is_default_run")]
    pub run: RunParams,
}

/// A scenario sampled on its grid and validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: Grid,
    pub coeffs: ModelCoefficients,
    pub state0: State,
}

impl Prepared {
    pub fn p_star(&self) -> f64 {
        self.state0.p_star
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SisError::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SisError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SisError::Config(e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SisError::Config(e.to_string()))
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    /// Samples coefficients and initial data, checking every standing bound.
    pub fn prepare(&self) -> Result<Prepared> {
        self.integrator.validate()?;
        let grid = Grid::new(self.grid.n_cells)?;
        let coeffs = sample_coefficients(&self.coefficients, &grid)?;
        let state0 = self.initial.state(&grid)?;
        Ok(Prepared { grid, coeffs, state0 })
    }

    pub fn with_n_cells(mut self, n: usize) -> Self {
        self.grid.n_cells = n;
        self
    }
}

fn constant(value: f64) -> ProfileSpec {
    ProfileSpec::Preset(ProfilePreset::Constant { value })
}

fn base(name: &str, description: &str, coefficients: CoefficientSpec, v0: ProfileSpec, run: RunParams) -> Scenario {
    Scenario {
        name: Some(name.to_string()),
        description: Some(description.to_string()),
        seed: 0,
        coefficients,
        grid: GridSpec { n_cells: 64 },
        integrator: IntegratorConfig::new(1e-3, 5.0, Scheme::ImexCn),
        initial: InitialSpec { v0, s0: 1.0 },
        run,
    }
}

/// Named reference scenarios.
pub fn preset_catalog() -> Vec<Scenario> {
    let cosine = ProfileSpec::Preset(ProfilePreset::Cosine { mean: 0.5, amplitude: 0.5, mode: 1 });
    vec![
        base(
            "bilinear-constant",
            "gamma = 0 with constants d = 1, rho = 1, beta = 2",
            CoefficientSpec::constant(1.0, 1.0, 2.0, 0.0),
            ProfileSpec::Preset(ProfilePreset::Cosine { mean: 1.0, amplitude: 0.3, mode: 1 }),
            RunParams { v_star: Some(3.0), gamma_mode: Some(GammaMode::Bilinear), ..Default::default() },
        ),
        base(
            "quadratic-constant",
            "gamma = 1 with constants d = 1, rho = 1, beta = 2",
            CoefficientSpec::constant(1.0, 1.0, 2.0, 1.0),
            cosine.clone(),
            RunParams {
                r: Some(1.0),
                gamma_mode: Some(GammaMode::FixedPoint),
                r_values: Some(vec![0.0, 0.1, 0.5, 1.0, 5.0]),
                ..Default::default()
            },
        ),
        base(
            "heterogeneous-gamma",
            "gamma(y) = y with smooth d and rho; exploratory",
            CoefficientSpec {
                d: ProfileSpec::Preset(ProfilePreset::Cosine { mean: 0.5, amplitude: 0.2, mode: 1 }),
                rho: ProfileSpec::Preset(ProfilePreset::Linear { left: 0.8, right: 1.2 }),
                beta: KernelSpec::Preset(KernelPreset::Cosine { mean: 2.0, amplitude: 0.2 }),
                gamma: ProfileSpec::Preset(ProfilePreset::Linear { left: 0.0, right: 1.0 }),
                bounds: DeclaredBounds::default(),
            },
            cosine.clone(),
            RunParams { r: Some(1.0), gamma_mode: Some(GammaMode::FixedPoint), ..Default::default() },
        ),
        base(
            "superspreader-kernel",
            "beta peaked in the source strain near y = 1, gamma = 1",
            CoefficientSpec {
                d: constant(0.5),
                rho: constant(1.0),
                beta: KernelSpec::Preset(KernelPreset::SourcePeaked {
                    base: 0.5,
                    amplitude: 4.0,
                    center: 1.0,
                    width: 0.1,
                }),
                gamma: constant(1.0),
                bounds: DeclaredBounds::default(),
            },
            cosine,
            RunParams { r: Some(1.0), gamma_mode: Some(GammaMode::FixedPoint), ..Default::default() },
        ),
        Scenario {
            integrator: IntegratorConfig::new(1e-3, 2.0, Scheme::ImexEuler),
            ..base(
                "blowup-probe",
                "Gamma = 2, beta concentrated near the diagonal, large localized initial data",
                CoefficientSpec {
                    d: constant(0.01),
                    rho: constant(0.1),
                    beta: KernelSpec::Preset(KernelPreset::GaussianKernel { base: 0.1, amplitude: 5.0, width: 0.05 }),
                    gamma: constant(2.0),
                    bounds: DeclaredBounds::default(),
                },
                ProfileSpec::Preset(ProfilePreset::Gaussian { base: 0.05, amplitude: 20.0, center: 0.5, width: 0.03 }),
                RunParams {
                    blowup: Some(BlowupParams {
                        n_list: vec![32, 64],
                        dt_list: vec![1e-3, 5e-4],
                        eta: None,
                        t_end: None,
                    }),
                    ..Default::default()
                },
            )
        },
    ]
}

pub fn preset(name: &str) -> Option<Scenario> {
    preset_catalog().into_iter().find(|s| s.name.as_deref() == Some(name))
}

pub fn preset_names() -> Vec<String> {
    preset_catalog().into_iter().filter_map(|s| s.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        let names = preset_names();
        for want in
            ["bilinear-constant", "quadratic-constant", "heterogeneous-gamma", "superspreader-kernel", "blowup-probe"]
        {
            assert!(names.iter().any(|n| n == want), "missing {want}");
        }
        for s in preset_catalog() {
            let p = s.prepare().unwrap();
            assert!(p.p_star() > 0.0);
        }
        let b = preset("bilinear-constant").unwrap().prepare().unwrap();
        assert!(b.coeffs.gamma_is_zero() && b.coeffs.bounds.r > 0.0 && b.coeffs.min_beta() > 0.0);
        let q = preset("quadratic-constant").unwrap().prepare().unwrap();
        assert!(q.coeffs.min_beta() > 0.0);
        assert_eq!(preset("blowup-probe").unwrap().prepare().unwrap().coeffs.bounds.gamma_max, 2.0);
    }

    #[test]
    fn toml_and_json_round_trip() {
        for s in preset_catalog() {
            let t = s.to_toml_string().unwrap();
            assert_eq!(Scenario::from_toml_str(&t).unwrap(), s, "{t}");
            let j = s.to_json_string().unwrap();
            assert_eq!(Scenario::from_json_str(&j).unwrap(), s);
        }
    }

    #[test]
    fn module_doc_example_parses() {
        let text = r#"
name = "quadratic-constant"
seed = 0

[coefficients]
d = { preset = "constant", params = { value = 1.0 } }
rho = { preset = "constant", params = { value = 1.0 } }
beta = { preset = "constant", params = { value = 2.0 } }
gamma = { preset = "constant", params = { value = 1.0 } }

[grid]
n_cells = 64

[integrator]
dt = 1e-3
t_end = 5.0
scheme = "imex_cn"

[initial]
v0 = { preset = "cosine", params = { mean = 0.5, amplitude = 0.5 } }
s0 = 1.0

[run]
r = 1.0
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        let q = preset("quadratic-constant").unwrap();
        assert_eq!(s.coefficients, q.coefficients);
        assert_eq!(s.initial, q.initial);
        assert_eq!(s.run.r, Some(1.0));
    }

    #[test]
    fn negative_diffusion_is_rejected_at_prepare() {
        let mut s = preset("quadratic-constant").unwrap();
        s.coefficients.d = ProfileSpec::Preset(ProfilePreset::Linear { left: -0.1, right: 1.0 });
        let err = s.prepare().unwrap_err();
        assert!(matches!(err, SisError::Validation { bound: "d0", .. }), "{err}");
    }

    #[test]
    fn malformed_config_is_config_error() {
        assert!(matches!(Scenario::from_toml_str("grid = 3"), Err(SisError::Config(_))));
        assert!(matches!(Scenario::from_json_str("{}"), Err(SisError::Config(_))));
    }
}
