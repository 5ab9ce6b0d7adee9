//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::regression::SampleMode;
use crate::simulation::{benchmark_toggle, benchmark_vdp, ToggleSwitch, VanDerPol, VectorField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpParams {
    pub a1: f64,
}

impl Default for VdpParams {
    fn default() -> Self {
        Self { a1: -0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleParams {
    pub a1: f64,
    pub a2: f64,
    pub n1: f64,
    pub n2: f64,
    pub delta: f64,
}

impl Default for ToggleParams {
    fn default() -> Self {
        Self {
            a1: 2.0,
            a2: 2.0,
            n1: 3.0,
            n2: 3.0,
            delta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemConfig {
    Vdp(VdpParams),
    Toggle(ToggleParams),
}

/// A built benchmark system.
pub enum System {
    Vdp(VanDerPol<f64>),
    Toggle(ToggleSwitch<f64>),
}

impl System {
    pub fn field(&self) -> &dyn VectorField<f64> {
        match self {
            System::Vdp(f) => f,
            System::Toggle(f) => f,
        }
    }
}

impl SystemConfig {
    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn build(&self) -> crate::Result<System> {
        Ok(match self {
            SystemConfig::Vdp(p) => System::Vdp(benchmark_vdp(p.a1)),
            SystemConfig::Toggle(p) => System::Toggle(benchmark_toggle(p.a1, p.a2, p.n1, p.n2, p.delta)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    pub spacing: Vec<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// Sample points per axis; defaults to `ceil((4 N_L)^(1/n))`.
    #[serde(default)]
    pub per_dim: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: SampleMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ridge: f64,
}

fn default_mode() -> SampleMode {
    SampleMode::Lattice
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub initial_conditions: Vec<Vec<f64>>,
    /// Extra initial conditions drawn uniformly from the domain.
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_density")]
    pub sup_density: usize,
    /// Times at which the error budget is reported; defaults to quarters of
    /// the simulation horizon.
    #[serde(default)]
    pub budget_times: Option<Vec<f64>>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            sup_density: default_density(),
            budget_times: None,
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0]
}

fn default_density() -> usize {
    crate::error_bounds::MIN_SEARCH_DENSITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the directory holding the config.
    pub directory: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub domain: DomainConfig,
    pub dictionary: DictionaryConfig,
    pub regression: RegressionConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

/// A parsed config plus what is needed to report and resolve against it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub text: String,
}

impl LoadedConfig {
    pub fn output_dir(&self) -> PathBuf {
        let d = &self.config.output.directory;
        if d.is_absolute() {
            d.clone()
        } else {
            let mut out = self.path.parent().unwrap_or(Path::new(".")).to_path_buf();
            out.extend(d.components().filter(|c| *c != std::path::Component::CurDir));
            out
        }
    }

    pub fn budget_times(&self) -> Vec<f64> {
        match &self.config.analysis.budget_times {
            Some(t) => t.clone(),
            None => {
                let h = self.config.simulation.horizon;
                (0..=4).map(|i| h * i as f64 / 4.0).collect()
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse_config(&text, path)?;
    Ok(LoadedConfig {
        config,
        path: path.to_path_buf(),
        text,
    })
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
        location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    config.validate().map_err(|(key, message)| CliError::Config {
        location: match locate_key(text, key) {
            Some(line) => format!("{}:{line}", path.display()),
            None => path.display().to_string(),
        },
        message,
    })?;
    Ok(config)
}

/// 1-based line of the first occurrence of `"key"`.
fn locate_key(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn finite_all(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ExperimentConfig {
    /// Returns the offending key and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let n = self.system.state_dim();
        match &self.system {
            SystemConfig::Vdp(p) if !p.a1.is_finite() => return Err(("a1", "a1 must be finite".into())),
            SystemConfig::Toggle(p) => {
                if ![p.a1, p.a2, p.n1, p.n2, p.delta].iter().all(|v| v.is_finite()) {
                    return Err(("params", "toggle parameters must be finite".into()));
                }
                if p.n1 < 1.0 || p.n2 < 1.0 {
                    return Err(("params", "Hill exponents must be >= 1".into()));
                }
                if p.delta <= 0.0 {
                    return Err(("delta", "delta must be > 0".into()));
                }
            }
            _ => {}
        }
        let d = &self.domain;
        if d.lo.len() != n || d.hi.len() != n {
            return Err(("domain", format!("domain bounds must have {n} entries")));
        }
        if !finite_all(&d.lo) || !finite_all(&d.hi) || d.lo.iter().zip(&d.hi).any(|(a, b)| a >= b) {
            return Err(("domain", "domain needs finite lo < hi on every axis".into()));
        }
        let dc = &self.dictionary;
        if dc.spacing.len() != n {
            return Err(("spacing", format!("spacing must have {n} entries")));
        }
        if dc.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(("spacing", "spacing must be finite and > 0".into()));
        }
        if !(dc.alpha.is_finite() && dc.alpha > 0.0) {
            return Err(("alpha", "alpha must be finite and > 0".into()));
        }
        let r = &self.regression;
        if matches!(r.per_dim, Some(p) if p < 2) {
            return Err(("per_dim", "per_dim must be >= 2".into()));
        }
        if !(r.ridge.is_finite() && r.ridge >= 0.0) {
            return Err(("ridge", "ridge must be finite and >= 0".into()));
        }
        let s = &self.simulation;
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return Err(("dt", "dt must be finite and > 0".into()));
        }
        if !(s.horizon.is_finite() && s.horizon >= s.dt) {
            return Err(("horizon", "horizon must be finite and >= dt".into()));
        }
        if s.initial_conditions.is_empty() && s.ensemble.as_ref().is_none_or(|e| e.count == 0) {
            return Err(("simulation", "no initial conditions given".into()));
        }
        if s.initial_conditions.iter().any(|x| x.len() != n || !finite_all(x)) {
            return Err(("initial_conditions", format!("each initial condition needs {n} finite entries")));
        }
        let a = &self.analysis;
        if a.alphas.is_empty() {
            return Err(("alphas", "alphas must not be empty".into()));
        }
        if a.alphas.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(("alphas", "alphas must be finite and > 0".into()));
        }
        if a.alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(("alphas", "alphas must be strictly increasing".into()));
        }
        if a.sup_density < crate::error_bounds::MIN_SEARCH_DENSITY {
            return Err((
                "sup_density",
                format!("sup_density must be >= {}", crate::error_bounds::MIN_SEARCH_DENSITY),
            ));
        }
        if let Some(t) = &a.budget_times {
            if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(("budget_times", "budget times must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Canned configurations used by `demo`.
pub fn demo_config(kind: DemoKind, output: &Path) -> ExperimentConfig {
    match kind {
        DemoKind::Toggle => ExperimentConfig {
            system: SystemConfig::Toggle(ToggleParams::default()),
            domain: DomainConfig {
                lo: vec![0.0, 0.0],
                hi: vec![2.5, 2.5],
            },
            dictionary: DictionaryConfig {
                spacing: vec![0.5, 0.5],
                alpha: 1.25,
            },
            regression: RegressionConfig {
                per_dim: Some(12),
                mode: SampleMode::Lattice,
                seed: 0,
                ridge: 0.0,
            },
            simulation: SimulationConfig {
                dt: 0.01,
                horizon: 20.0,
                initial_conditions: vec![vec![0.5, 1.5], vec![1.5, 0.5], vec![1.0, 1.2], vec![0.2, 0.3]],
                ensemble: None,
            },
            analysis: AnalysisConfig::default(),
            output: OutputConfig {
                directory: output.to_path_buf(),
            },
        },
        DemoKind::Vdp => ExperimentConfig {
            system: SystemConfig::Vdp(VdpParams::default()),
            domain: DomainConfig {
                lo: vec![-3.0, -3.0],
                hi: vec![3.0, 3.0],
            },
            dictionary: DictionaryConfig {
                spacing: vec![1.2, 1.2],
                alpha: 1.0,
            },
            regression: RegressionConfig {
                per_dim: Some(12),
                mode: SampleMode::Lattice,
                seed: 0,
                ridge: 0.0,
            },
            simulation: SimulationConfig {
                dt: 0.01,
                horizon: 20.0,
                initial_conditions: vec![vec![1.0, 1.0], vec![0.1, 0.1], vec![-2.5, -2.5]],
                ensemble: None,
            },
            analysis: AnalysisConfig::default(),
            output: OutputConfig {
                directory: output.to_path_buf(),
            },
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoKind {
    Vdp,
    Toggle,
}
