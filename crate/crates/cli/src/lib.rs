//! Batch front-end: configuration, scenario dispatch and the three output
//! artifacts `trajectories.csv`, `summary.json` and `manifest.json`.

mod artifacts;
mod config;
mod run;

pub use artifacts::{Artifacts, Manifest, CSV_NAME, MANIFEST_NAME, SUMMARY_NAME};
pub use config::{
    FluorescenceConfig, Mode, MonitorConfig, NamedState, RunConfig, ScenarioName, StateSpec, ThermalizeConfig,
};
pub use run::{execute, run};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical guard: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<qtherm::Error> for CliError {
    fn from(e: qtherm::Error) -> Self {
        use qtherm::Error as E;
        match e {
            E::Parameter(_)
            | E::StepSize(_)
            | E::Dimension(_)
            | E::EnumerationTooLarge { .. }
            | E::ModelBuild(_)
            | E::Partition(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
