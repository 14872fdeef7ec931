use serde::{Deserialize, Serialize};

use super::{ensemble_state, LedgerRow};
use crate::error::{Error, Result};
use crate::linalg::{pauli, CMatrix, Complex64, DensityOp, Ket};
use crate::stats::Estimate;
use crate::thermo::{EnergyLedger, EnsembleSummary, TrajectoryTotals};
use crate::trajectories::{normal_pair, run_parallel, sample_index, uniform};
use crate::unravel::{evolve_master, LindbladModel, OpFn, Schedule};

/// Upper bound on `γ_m·dt`.
pub const MAX_MEASUREMENT_STRENGTH: f64 = 0.05;

/// Weak continuous measurement of `σz` on a qubit with `H = (ω0/2)σz`.
///
/// Each step yields a real outcome `I`, Gaussian around `±1` with variance
/// `1/(2κ dt)` where `κ = 2γ_m`, and an independent quadrature `y` with
/// density `e^{-y²}/√π`. The ensemble dephases as
/// `dρ/dt = −i[H, ρ] + 2γ_m(σz ρ σz − ρ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub omega0: f64,
    pub gamma_m: f64,
    pub dt: f64,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self {
            omega0: 1.0,
            gamma_m: 0.25,
            dt: 1e-3,
        }
    }
}

impl MonitorParams {
    pub fn validate(&self) -> Result<()> {
        if !self.omega0.is_finite() || !(self.gamma_m > 0.0) || !(self.dt > 0.0) || !self.gamma_m.is_finite() {
            return Err(Error::Parameter(format!("monitoring needs γ_m > 0 and dt > 0, got {self:?}")));
        }
        if self.gamma_m * self.dt > MAX_MEASUREMENT_STRENGTH {
            return Err(Error::StepSize(format!(
                "γ_m·dt = {} exceeds {MAX_MEASUREMENT_STRENGTH}",
                self.gamma_m * self.dt
            )));
        }
        Ok(())
    }

    /// Displacement rate `κ = 2γ_m` of the meter.
    pub fn kappa(&self) -> f64 {
        2.0 * self.gamma_m
    }

    pub fn hamiltonian(&self) -> CMatrix {
        pauli::sigma_z().scale_real(0.5 * self.omega0)
    }
}

/// Dephasing model with the single jump operator `√(2γ_m) σz`.
pub fn monitor_model(p: &MonitorParams) -> Result<LindbladModel> {
    p.validate()?;
    LindbladModel::with_stiffness(
        OpFn::Fixed(p.hamiltonian()),
        vec![OpFn::Fixed(pauli::sigma_z().scale_real(p.kappa().sqrt()))],
        Schedule::Constant(0.0),
        p.dt,
        2.0 * MAX_MEASUREMENT_STRENGTH,
    )
}

/// `P(y, I) = (√(κdt)/π) e^{-y²} (e^{-κdt(I−1)²} p_e + e^{-κdt(I+1)²} p_g)`.
pub fn monitor_outcome_density(p: &MonitorParams, p_e: f64, y: f64, i: f64) -> f64 {
    let kd = p.kappa() * p.dt;
    let mix = (-kd * (i - 1.0).powi(2)).exp() * p_e + (-kd * (i + 1.0).powi(2)).exp() * (1.0 - p_e);
    kd.sqrt() / std::f64::consts::PI * (-y * y).exp() * mix
}

/// Post-measurement `<σz>` from the pre-step excited population.
fn updated_z(p: &MonitorParams, p_e: f64, i: f64) -> f64 {
    let x = 2.0 * p.kappa() * p.dt * i;
    let p_g = 1.0 - p_e;
    if x >= 0.0 {
        let r = (-2.0 * x).exp();
        (p_e - p_g * r) / (p_e + p_g * r)
    } else {
        let r = (2.0 * x).exp();
        (p_e * r - p_g) / (p_e * r + p_g)
    }
}

/// `<M†HM>/<M†M> − <H>` for outcome `I`; `y` only contributes a phase.
pub fn monitor_quantum_heat(p: &MonitorParams, p_e: f64, i: f64) -> f64 {
    let z = 2.0 * p_e - 1.0;
    0.5 * p.omega0 * (updated_z(p, p_e, i) - z)
}

/// Leading Itô term `ω0 κ dt (I − z)(1 − z²)` of [`monitor_quantum_heat`].
pub fn monitor_quantum_heat_ito(p: &MonitorParams, z: f64, i: f64) -> f64 {
    p.omega0 * p.kappa() * p.dt * (i - z) * (1.0 - z * z)
}

#[derive(Clone, Debug)]
pub struct MonitorProtocol {
    pub steps: usize,
    pub initial: Ket,
    pub snapshot_every: Option<usize>,
    pub record_trajectories: u64,
    /// Keep every quantum-heat increment and `(I, p_e)` pair.
    pub keep_increments: bool,
}

impl MonitorProtocol {
    pub fn new(steps: usize, initial: Ket) -> Self {
        Self {
            steps,
            initial,
            snapshot_every: None,
            record_trajectories: 0,
            keep_increments: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MonitorTrajectory {
    pub totals: TrajectoryTotals,
    pub closure_defect: f64,
    pub closed_form_defect: f64,
    /// `Σ_k (Itô form − residual)`.
    pub ito_defect: f64,
    pub increments: Vec<f64>,
    /// `(I, p_e)` with `p_e` the pre-step excited population.
    pub outcomes: Vec<(f64, f64)>,
    pub snapshots: Vec<[Complex64; 2]>,
    pub rows: Vec<LedgerRow>,
}

#[derive(Clone, Debug)]
pub struct MonitorOutcome {
    pub summary: EnsembleSummary,
    pub trajectories: Vec<MonitorTrajectory>,
    pub snapshot_times: Vec<f64>,
    pub closed_form_tolerance: f64,
}

impl MonitorOutcome {
    pub fn ensemble_states(&self) -> Vec<CMatrix> {
        (0..self.snapshot_times.len())
            .map(|i| ensemble_state(self.trajectories.iter().map(|t| &t.snapshots[i][..])))
            .collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &LedgerRow> {
        self.trajectories.iter().flat_map(|t| t.rows.iter())
    }

    /// Every stored quantum-heat increment, trajectory by trajectory.
    pub fn pooled_increments(&self) -> Vec<f64> {
        self.trajectories.iter().flat_map(|t| t.increments.iter().copied()).collect()
    }
}

/// Ensemble-averaged ledger from the dephasing master equation. There is no
/// work or classical heat, so `Q_q = ΔU`.
pub fn monitor_master_summary(p: &MonitorParams, protocol: &MonitorProtocol) -> Result<EnsembleSummary> {
    let model = monitor_model(p)?;
    let rho0 = DensityOp::from_ket(&protocol.initial);
    let t_final = protocol.steps as f64 * p.dt;
    let states = evolve_master(&rho0, &model, &[0.0, t_final])?;
    let h = p.hamiltonian();
    let du = states[1].expectation(&h) - rho0.expectation(&h);
    let mut summary = EnsembleSummary {
        mean_qq: du,
        ..EnsembleSummary::default()
    };
    let m = states[1].matrix();
    let d = &mut summary.diagnostics;
    d.insert("final_population_e".into(), m[(0, 0)].re);
    d.insert("final_coherence_abs".into(), m[(0, 1)].norm());
    d.insert("initial_coherence_abs".into(), rho0.matrix()[(0, 1)].norm());
    d.insert("dt".into(), p.dt);
    d.insert("t_final".into(), t_final);
    Ok(summary)
}

pub fn run_monitoring(p: &MonitorParams, protocol: &MonitorProtocol, n_traj: u64, seed: u64) -> Result<MonitorOutcome> {
    p.validate()?;
    if protocol.initial.dim() != 2 {
        return Err(Error::Dimension("monitoring needs a qubit state".into()));
    }
    let dt = p.dt;
    let kd = p.kappa() * dt;
    let sigma_i = 1.0 / (2.0 * kd).sqrt();
    let h = p.hamiltonian();
    let every = protocol.snapshot_every.unwrap_or(0);
    let rate = p.kappa() + 0.5 * p.omega0.abs();
    let closed_form_tolerance = 5.0 * (rate * dt).powi(2) * p.omega0.abs().max(f64::MIN_POSITIVE);

    let results = run_parallel(n_traj, seed, |index, rng| -> Result<MonitorTrajectory> {
        let keep = index < protocol.record_trajectories;
        let mut psi = protocol.initial.clone();
        let mut ledger = EnergyLedger::new(h.expectation(&psi).re);
        let mut entropy = crate::stats::NeumaierSum::new();
        let mut rows = Vec::new();
        let mut snapshots = Vec::new();
        let mut increments = Vec::new();
        let mut outcomes = Vec::new();
        let mut closed_form_defect = 0.0_f64;
        let mut ito = crate::stats::NeumaierSum::new();
        if every > 0 {
            snapshots.push([psi[0], psi[1]]);
        }
        if keep {
            rows.push(LedgerRow {
                traj_id: index,
                k: 0,
                t: 0.0,
                outcome: "psi0".into(),
                amps: psi.amplitudes().to_vec(),
                dw: 0.0,
                dqcl: 0.0,
                dqq: 0.0,
                dis: 0.0,
                y: None,
            });
        }
        for k in 0..protocol.steps {
            let p_e = psi[0].norm_sqr();
            let z = p_e - psi[1].norm_sqr();
            let (a, b) = normal_pair(rng);
            let y = a * std::f64::consts::FRAC_1_SQRT_2;
            let branch = sample_index(&[p_e, 1.0 - p_e], uniform(rng));
            let i = if branch == 0 { 1.0 } else { -1.0 } + b * sigma_i;

            let phase = 0.5 * p.omega0 * dt + y * kd.sqrt();
            let amps = vec![
                psi[0] * Complex64::from_polar((kd * i).exp(), -phase),
                psi[1] * Complex64::from_polar((-kd * i).exp(), phase),
            ];
            psi = Ket::normalized(amps)?;
            let dqq = ledger.push(h.expectation(&psi).re, 0.0, 0.0);
            let dis = -monitor_outcome_density(p, p_e, y, i).ln();
            entropy.add(dis);
            closed_form_defect = closed_form_defect.max((monitor_quantum_heat(p, p_e, i) - dqq).abs());
            ito.add(monitor_quantum_heat_ito(p, z, i) - dqq);
            if protocol.keep_increments {
                increments.push(dqq);
                outcomes.push((i, p_e));
            }
            if every > 0 && (k + 1) % every == 0 {
                snapshots.push([psi[0], psi[1]]);
            }
            if keep {
                rows.push(LedgerRow {
                    traj_id: index,
                    k: k + 1,
                    t: (k + 1) as f64 * dt,
                    outcome: format!("{i}"),
                    amps: psi.amplitudes().to_vec(),
                    dw: 0.0,
                    dqcl: 0.0,
                    dqq,
                    dis,
                    y: Some(y),
                });
            }
        }
        Ok(MonitorTrajectory {
            totals: TrajectoryTotals {
                w: ledger.work(),
                qcl: ledger.classical_heat(),
                qq: ledger.quantum_heat(),
                delta_u: ledger.delta_u(),
                entropy: entropy.value(),
            },
            closure_defect: ledger.closure_defect(),
            closed_form_defect,
            ito_defect: ito.value(),
            increments,
            outcomes,
            snapshots,
            rows,
        })
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;

    let totals: Vec<TrajectoryTotals> = trajectories.iter().map(|t| t.totals).collect();
    let mut summary = EnsembleSummary::from_totals(&totals, Some(seed), false);
    summary.ift_value = None;
    summary.lambda_abs = None;
    summary.std_errors.ift = None;
    let max = |f: fn(&MonitorTrajectory) -> f64| trajectories.iter().map(f).fold(0.0_f64, f64::max);
    let ito = Estimate::from_samples(&trajectories.iter().map(|t| t.ito_defect).collect::<Vec<_>>());
    let d = &mut summary.diagnostics;
    d.insert("max_closure_defect".into(), max(|t| t.closure_defect));
    d.insert("max_closed_form_defect".into(), max(|t| t.closed_form_defect));
    d.insert("closed_form_tolerance".into(), closed_form_tolerance);
    d.insert("ito_form_mean_defect".into(), ito.mean);
    d.insert("ito_form_mean_defect_se".into(), ito.std_error);
    d.insert("entropy_constant_per_step".into(), (std::f64::consts::PI / kd.sqrt()).ln());
    d.insert("dt".into(), dt);
    if protocol.keep_increments {
        let pooled: Vec<f64> = trajectories.iter().flat_map(|t| t.increments.iter().copied()).collect();
        let e = Estimate::from_samples(&pooled);
        d.insert("pooled_dQq_mean".into(), e.mean);
        d.insert("pooled_dQq_se".into(), e.std_error);
    }

    let snapshot_times = if every > 0 {
        (0..=protocol.steps / every).map(|i| (i * every) as f64 * dt).collect()
    } else {
        Vec::new()
    };
    Ok(MonitorOutcome {
        summary,
        trajectories,
        snapshot_times,
        closed_form_tolerance,
    })
}
