use std::path::{Path, PathBuf};

use qtherm::linalg::{c, DensityOp, Ket};
use qtherm::scenarios::{FinalDistribution, FluorescenceParams, MonitorParams, MAX_MEASUREMENT_STRENGTH};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Thermalize,
    Fluorescence,
    Monitor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sample,
    Enumerate,
    Master,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedState {
    /// Gibbs state of the bare system Hamiltonian.
    Thermal,
    Excited,
    Ground,
    Plus,
}

/// Initial system state: a named state, or `weight·|ψ><ψ| + (1 − weight)·1/d`
/// with `ψ` given as `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Named(NamedState),
    Custom {
        amplitudes: Vec<[f64; 2]>,
        #[serde(default = "one")]
        weight: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl StateSpec {
    /// Pure initial state, as needed by the trajectory scenarios; `None`
    /// stands for the thermal state.
    pub fn pure_or_thermal(&self) -> Result<Option<Ket>, CliError> {
        Ok(match self {
            StateSpec::Named(NamedState::Thermal) => None,
            StateSpec::Named(NamedState::Excited) => Some(Ket::basis(2, 0)),
            StateSpec::Named(NamedState::Ground) => Some(Ket::basis(2, 1)),
            StateSpec::Named(NamedState::Plus) => Some(Ket::normalized(vec![c(1.0, 0.0), c(1.0, 0.0)])?),
            StateSpec::Custom { amplitudes, weight } => {
                if *weight != 1.0 {
                    return Err(CliError::Config("a mixed initial state is only supported by `thermalize`".into()));
                }
                Some(custom_ket(amplitudes)?)
            }
        })
    }

    pub fn density(&self, thermal: &DensityOp) -> Result<DensityOp, CliError> {
        match self {
            StateSpec::Custom { amplitudes, weight } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(CliError::Config(format!("state weight {weight} outside [0, 1]")));
                }
                let psi = custom_ket(amplitudes)?;
                let d = psi.dim();
                let m = &DensityOp::from_ket(&psi).matrix().scale_real(*weight)
                    + &DensityOp::maximally_mixed(d).matrix().scale_real(1.0 - weight);
                Ok(DensityOp::new(m)?)
            }
            other => Ok(match other.pure_or_thermal()? {
                Some(k) => DensityOp::from_ket(&k),
                None => thermal.clone(),
            }),
        }
    }
}

fn custom_ket(amplitudes: &[[f64; 2]]) -> Result<Ket, CliError> {
    if amplitudes.len() != 2 {
        return Err(CliError::Config(format!("expected 2 amplitudes, got {}", amplitudes.len())));
    }
    Ket::normalized(amplitudes.iter().map(|[re, im]| c(*re, *im)).collect())
        .map_err(|e| CliError::Config(format!("initial state: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalizeConfig {
    pub omega0: f64,
    pub temperature: f64,
    pub initial: StateSpec,
}

impl Default for ThermalizeConfig {
    fn default() -> Self {
        Self {
            omega0: 1.0,
            temperature: 0.8,
            initial: StateSpec::Custom {
                amplitudes: vec![[0.8, 0.0], [0.36, 0.48]],
                weight: 0.7,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceConfig {
    #[serde(flatten)]
    pub params: FluorescenceParams,
    pub initial: StateSpec,
    pub final_distribution: FinalDistribution,
    /// Steps `[start, end)` averaged for the steady fluxes; defaults to the
    /// last two thirds of the run.
    #[serde(default)]
    pub flux_window: Option<[usize; 2]>,
}

impl Default for FluorescenceConfig {
    fn default() -> Self {
        Self {
            params: FluorescenceParams {
                omega0: 1.0,
                omega_l: 1.0,
                g: 0.8,
                gamma: 1.0,
                nbar: 0.5,
            },
            initial: StateSpec::Named(NamedState::Thermal),
            final_distribution: FinalDistribution::Master,
            flux_window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub omega0: f64,
    pub gamma_m: f64,
    pub initial: StateSpec,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            omega0: 1.0,
            gamma_m: 0.25,
            initial: StateSpec::Named(NamedState::Plus),
        }
    }
}

/// Everything that determines a run. `out` and `threads` affect where and
/// how fast the run happens, not its results, and are left out of the echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioName,
    #[serde(default)]
    pub mode: Mode,
    pub n_traj: u64,
    pub steps: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Number of leading trajectories whose per-step ledger goes to the CSV.
    #[serde(default = "default_csv_trajectories")]
    pub csv_trajectories: u64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub thermalize: ThermalizeConfig,
    #[serde(default)]
    pub fluorescence: FluorescenceConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
}

fn default_csv_trajectories() -> u64 {
    10
}

impl RunConfig {
    pub fn preset(scenario: ScenarioName) -> Self {
        let base = |mode, n_traj, steps, dt| Self {
            scenario,
            mode,
            n_traj,
            steps,
            dt,
            seed: Some(1),
            csv_trajectories: default_csv_trajectories(),
            out: None,
            threads: None,
            thermalize: ThermalizeConfig::default(),
            fluorescence: FluorescenceConfig::default(),
            monitor: MonitorConfig::default(),
        };
        match scenario {
            ScenarioName::Thermalize => base(Mode::Enumerate, 10_000, 1, 1.0),
            ScenarioName::Fluorescence => base(Mode::Sample, 2_000, 6_000, 0.005),
            ScenarioName::Monitor => base(Mode::Sample, 1_000, 2_000, 1e-3),
        }
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn monitor_params(&self) -> MonitorParams {
        MonitorParams {
            omega0: self.monitor.omega0,
            gamma_m: self.monitor.gamma_m,
            dt: self.dt,
        }
    }

    pub fn flux_window(&self) -> Option<(usize, usize)> {
        match self.fluorescence.flux_window {
            Some([a, b]) => Some((a, b)),
            None if self.steps >= 3 => Some((self.steps / 3, self.steps)),
            None => None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.mode == Mode::Sample {
            if self.seed.is_none() {
                return bad("sample mode needs a seed".into());
            }
            if self.n_traj == 0 {
                return bad("sample mode needs n_traj > 0".into());
            }
        }
        match self.scenario {
            ScenarioName::Thermalize => {
                let t = &self.thermalize;
                if !(t.temperature > 0.0) || !(t.omega0 > 0.0) {
                    return bad("thermalize needs temperature > 0 and omega0 > 0".into());
                }
            }
            ScenarioName::Fluorescence => {
                self.fluorescence.params.validate()?;
                if self.steps == 0 {
                    return bad("steps must be positive".into());
                }
                self.fluorescence.initial.pure_or_thermal()?;
                if let Some([a, b]) = self.fluorescence.flux_window {
                    if a >= b || b > self.steps {
                        return bad(format!("flux window [{a}, {b}) outside 0..{}", self.steps));
                    }
                }
            }
            ScenarioName::Monitor => {
                if self.mode == Mode::Enumerate {
                    return bad("monitor records are continuous and cannot be enumerated".into());
                }
                if self.steps == 0 {
                    return bad("steps must be positive".into());
                }
                let p = self.monitor_params();
                if !(p.omega0.is_finite() && p.gamma_m > 0.0) {
                    return bad("monitor needs a finite omega0 and gamma_m > 0".into());
                }
                if p.gamma_m * p.dt > MAX_MEASUREMENT_STRENGTH {
                    return bad(format!(
                        "gamma_m * dt = {} exceeds {MAX_MEASUREMENT_STRENGTH}",
                        p.gamma_m * p.dt
                    ));
                }
                if self.monitor.initial.pure_or_thermal()?.is_none() {
                    return bad("monitor needs a pure initial state".into());
                }
            }
        }
        Ok(())
    }
}
