//! Builders, runners and closed-form references for three model problems:
//! thermalization against a finite bath, resonance fluorescence of a driven
//! qubit, and continuous monitoring of `σz`.

mod fluorescence;
mod monitoring;
mod thermalization;

pub use fluorescence::{
    enumerate_fluorescence, fluorescence_fluxes, fluorescence_master_summary, fluorescence_model, fluorescence_quantum_heat, printed_quantum_heat, run_fluorescence,
    FinalDistribution, FluorescenceEnumeration, FluorescenceOutcome, FluorescenceParams, FluorescenceProtocol, FluorescenceTrajectory,
    InitialCondition, StepFlux,
};
pub use monitoring::{
    monitor_master_summary, monitor_model, monitor_outcome_density, monitor_quantum_heat, monitor_quantum_heat_ito, run_monitoring,
    MonitorOutcome, MonitorParams, MonitorProtocol, MonitorTrajectory, MAX_MEASUREMENT_STRENGTH,
};
pub use thermalization::{
    build_thermalization, partial_swap, sample_thermalization, thermalization_enumeration, thermalization_ift,
    AugmentedPath, Thermalization, ThermalizationReport, ThermalizationSample, TpmIftReport, TOL_THERM,
};

use serde::{Deserialize, Serialize};

use crate::linalg::{CMatrix, Complex64};
use crate::stats::pairwise_sum;

/// One row of the per-step ledger written to `trajectories.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub traj_id: u64,
    pub k: usize,
    pub t: f64,
    pub outcome: String,
    /// State after the step.
    pub amps: Vec<Complex64>,
    pub dw: f64,
    pub dqcl: f64,
    pub dqq: f64,
    /// Entropy-production increment of the step.
    pub dis: f64,
    /// Auxiliary continuous outcome (the `y` quadrature of the monitor).
    pub y: Option<f64>,
}

/// `(1/N) Σ_i |ψ_i><ψ_i|`, summed element-wise in a fixed order.
pub fn ensemble_state<'a>(states: impl IntoIterator<Item = &'a [Complex64]>) -> CMatrix {
    let states: Vec<&[Complex64]> = states.into_iter().collect();
    let n = states.first().map_or(0, |s| s.len());
    let mut out = CMatrix::zeros(n, n);
    if states.is_empty() {
        return out;
    }
    let inv = 1.0 / states.len() as f64;
    let mut re = vec![0.0; states.len()];
    let mut im = vec![0.0; states.len()];
    for i in 0..n {
        for j in 0..n {
            for (k, s) in states.iter().enumerate() {
                let v = s[i] * s[j].conj();
                re[k] = v.re;
                im[k] = v.im;
            }
            out[(i, j)] = Complex64::new(pairwise_sum(&re) * inv, pairwise_sum(&im) * inv);
        }
    }
    out
}
