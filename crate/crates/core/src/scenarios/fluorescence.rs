use serde::{Deserialize, Serialize};

use super::{ensemble_state, LedgerRow};
use crate::error::{Error, Result};
use crate::linalg::{pauli, CMatrix, Complex64, DensityOp, Ket};
use crate::stats::{pairwise_sum, Estimate};
use crate::thermo::{EnergyLedger, EnsembleSummary, FluxReport, StdErrors, TrajectoryTotals};
use crate::trajectories::{run_parallel, sample_index, uniform, MAX_PATHS};
use crate::unravel::{evolve_master, qj_kraus, LindbladModel, OpFn, QjStepper, Schedule};

/// Driven qubit `H(t) = (ω0/2)σz + (g/2)(σ- e^{iω_L t} + σ+ e^{-iω_L t})`
/// coupled to a bath with mean occupation `n̄` at the qubit frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceParams {
    pub omega0: f64,
    #[serde(rename = "omegaL")]
    pub omega_l: f64,
    pub g: f64,
    pub gamma: f64,
    pub nbar: f64,
}

impl Default for FluorescenceParams {
    fn default() -> Self {
        Self {
            omega0: 1.0,
            omega_l: 1.0,
            g: 0.5,
            gamma: 0.1,
            nbar: 0.5,
        }
    }
}

impl FluorescenceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega0, self.omega_l, self.g, self.gamma, self.nbar].iter().all(|x| x.is_finite());
        if !finite || !(self.gamma > 0.0) || self.g < 0.0 || self.nbar < 0.0 || !(self.omega0 > 0.0) {
            return Err(Error::Parameter(format!(
                "fluorescence needs ω0 > 0, γ > 0, g ≥ 0 and n̄ ≥ 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `δ = ω0 − ω_L`.
    pub fn delta(&self) -> f64 {
        self.omega0 - self.omega_l
    }

    /// Bath temperature `ω0 / ln(1 + 1/n̄)`; `None` at zero temperature.
    pub fn temperature(&self) -> Option<f64> {
        (self.nbar > 0.0).then(|| self.omega0 / (1.0 / self.nbar).ln_1p())
    }

    /// Thermal populations `[p_e, p_g]` of the bare qubit.
    pub fn thermal_populations(&self) -> [f64; 2] {
        let z = 2.0 * self.nbar + 1.0;
        [self.nbar / z, (self.nbar + 1.0) / z]
    }

    pub fn bare_hamiltonian(&self) -> CMatrix {
        pauli::sigma_z().scale_real(0.5 * self.omega0)
    }
}

/// Steady-state energy fluxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepFlux {
    pub w_dot: f64,
    pub qcl_dot: f64,
    pub qq_dot: f64,
}

/// Closed-form steady fluxes with `D = 2g² + 4δ² + γ²(2n̄+1)²`.
pub fn fluorescence_fluxes(p: &FluorescenceParams) -> StepFlux {
    let delta = p.delta();
    let width = p.gamma * (2.0 * p.nbar + 1.0);
    let d = 2.0 * p.g * p.g + 4.0 * delta * delta + width * width;
    let k = p.gamma * p.g * p.g / d;
    StepFlux {
        w_dot: k * p.omega_l,
        qcl_dot: -k * p.omega0,
        qq_dot: k * delta,
    }
}

pub fn fluorescence_model(p: &FluorescenceParams, dt: f64) -> Result<LindbladModel> {
    p.validate()?;
    let h = OpFn::Phased {
        base: p.bare_hamiltonian(),
        plus: pauli::sigma_minus().scale_real(0.5 * p.g),
        minus: pauli::sigma_plus().scale_real(0.5 * p.g),
    };
    let mut jumps = vec![OpFn::Fixed(pauli::sigma_minus().scale_real((p.gamma * (p.nbar + 1.0)).sqrt()))];
    if p.nbar > 0.0 {
        jumps.push(OpFn::Fixed(pauli::sigma_plus().scale_real((p.gamma * p.nbar).sqrt())));
    }
    LindbladModel::new(h, jumps, Schedule::Linear { rate: p.omega_l }, dt)
}

/// Quantum heat of one step from the pre-step populations `z = <σz>`, the
/// rotating dipole `s = <σ->e^{iω_L t}` and the step's work `dw`. Outcome
/// `0` is no jump, `1` emission and `2` absorption. Jumps are exact; the
/// no-jump value is first order in `dt`.
pub fn fluorescence_quantum_heat(p: &FluorescenceParams, outcome: usize, z: f64, s: Complex64, dw: f64, dt: f64) -> f64 {
    match outcome {
        1 => p.omega0 * (1.0 - z) / 2.0 - p.g * s.re - dw,
        2 => -p.omega0 * (1.0 + z) / 2.0 - p.g * s.re - dw,
        _ => -p.omega0 * p.gamma * dt * s.norm_sqr() + 0.5 * p.gamma * p.g * z * dt * s.re,
    }
}

/// The three-case table in its widely quoted form, which leaves the drive
/// energy out of the internal energy.
pub fn printed_quantum_heat(p: &FluorescenceParams, outcome: usize, z: f64, s: Complex64, dt: f64) -> f64 {
    match outcome {
        1 => p.omega0 * (1.0 - z) / 2.0,
        2 => -p.omega0 * (1.0 + z) / 2.0,
        _ => -p.g * p.gamma * (p.nbar + 1.0) / 2.0 * dt * s.re - p.omega0 * p.gamma * dt * s.norm_sqr(),
    }
}

#[derive(Clone, Debug)]
pub enum InitialCondition {
    /// Energy measurement on the thermal state.
    Thermal,
    Ket(Ket),
}

/// Distribution `p'_m` entering the final boundary term of the entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalDistribution {
    /// Energy populations of the master-equation state at the final time.
    Master,
    Thermal,
}

#[derive(Clone, Debug)]
pub struct FluorescenceProtocol {
    pub dt: f64,
    pub steps: usize,
    /// Step range `[start, end)` over which fluxes are averaged.
    pub flux_window: Option<(usize, usize)>,
    pub initial: InitialCondition,
    pub final_distribution: FinalDistribution,
    pub snapshot_every: Option<usize>,
    /// Number of leading trajectories whose full ledger is kept.
    pub record_trajectories: u64,
}

impl FluorescenceProtocol {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            flux_window: None,
            initial: InitialCondition::Thermal,
            final_distribution: FinalDistribution::Master,
            snapshot_every: None,
            record_trajectories: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FluorescenceTrajectory {
    pub totals: TrajectoryTotals,
    /// `e^{-(W + Q_q)/T}`, NaN at zero temperature.
    pub jarzynski: f64,
    pub closure_defect: f64,
    /// Largest per-step `|closed form − residual|`.
    pub closed_form_defect: f64,
    /// Quantum heat of the jump steps summed from the printed table.
    pub printed_qq: f64,
    /// Quantum heat of the jump steps from the ledger.
    pub step_qq: f64,
    /// `W`, `Q_cl`, `Q_q` accumulated inside the flux window.
    pub window: [f64; 3],
    pub jumps: usize,
    pub snapshots: Vec<[Complex64; 2]>,
    pub rows: Vec<LedgerRow>,
}

#[derive(Clone, Debug)]
pub struct FluorescenceOutcome {
    pub summary: EnsembleSummary,
    pub trajectories: Vec<FluorescenceTrajectory>,
    pub snapshot_times: Vec<f64>,
    /// `[p'_e, p'_g]` used in the final boundary term.
    pub final_populations: [f64; 2],
    pub closed_form_tolerance: f64,
    pub rho0: DensityOp,
}

impl FluorescenceOutcome {
    /// Ensemble-averaged state at each snapshot time.
    pub fn ensemble_states(&self) -> Vec<CMatrix> {
        (0..self.snapshot_times.len())
            .map(|i| ensemble_state(self.trajectories.iter().map(|t| &t.snapshots[i][..])))
            .collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &LedgerRow> {
        self.trajectories.iter().flat_map(|t| t.rows.iter())
    }
}

#[inline]
fn energy(h: &CMatrix, a: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.len() {
        for j in 0..a.len() {
            acc += a[i].conj() * h[(i, j)] * a[j];
        }
    }
    acc.re
}

fn initial_ensemble(p: &FluorescenceParams, initial: &InitialCondition) -> Result<(Vec<f64>, Vec<Ket>)> {
    match initial {
        InitialCondition::Thermal => Ok((p.thermal_populations().to_vec(), vec![Ket::basis(2, 0), Ket::basis(2, 1)])),
        InitialCondition::Ket(k) if k.dim() == 2 => Ok((vec![1.0], vec![k.clone()])),
        InitialCondition::Ket(_) => Err(Error::Dimension("fluorescence needs a qubit state".into())),
    }
}

fn final_distribution(
    p: &FluorescenceParams,
    protocol: &FluorescenceProtocol,
    model: &LindbladModel,
    rho0: &DensityOp,
) -> Result<[f64; 2]> {
    Ok(match protocol.final_distribution {
        FinalDistribution::Thermal => p.thermal_populations(),
        FinalDistribution::Master => {
            let states = evolve_master(rho0, model, &[0.0, protocol.steps as f64 * protocol.dt])?;
            let m = states[1].matrix();
            [m[(0, 0)].re, m[(1, 1)].re]
        }
    })
}

const STATE_NAMES: [&str; 2] = ["e", "g"];
const JUMP_NAMES: [&str; 3] = ["0", "-", "+"];

/// Two-point measurement protocol: energy measurement at `t = 0`, quantum
/// jump evolution under the drive, energy measurement at the final time.
pub fn run_fluorescence(
    p: &FluorescenceParams,
    protocol: &FluorescenceProtocol,
    n_traj: u64,
    seed: u64,
) -> Result<FluorescenceOutcome> {
    p.validate()?;
    let dt = protocol.dt;
    let steps = protocol.steps;
    if !(p.gamma * dt <= 0.01) {
        return Err(Error::Parameter(format!("γ·dt = {} exceeds 0.01", p.gamma * dt)));
    }
    if steps == 0 {
        return Err(Error::Parameter("at least one step is required".into()));
    }
    if let Some((a, b)) = protocol.flux_window {
        if a >= b || b > steps {
            return Err(Error::Parameter(format!("flux window [{a}, {b}) outside 0..{steps}")));
        }
    }
    let every = protocol.snapshot_every.unwrap_or(0);
    let model = fluorescence_model(p, dt)?;
    let temperature = p.temperature();

    let (probs, kets) = initial_ensemble(p, &protocol.initial)?;
    let rho0 = DensityOp::from_ensemble(&probs, &kets)?;
    let t_final = steps as f64 * dt;
    let final_populations = final_distribution(p, protocol, &model, &rho0)?;
    let rate = model.jump_rate() + 0.5 * (p.omega0 * p.omega0 + p.g * p.g).sqrt();
    let closed_form_tolerance = 5.0 * (rate * dt).powi(2) * p.omega0;

    let results = run_parallel(n_traj, seed, |index, rng| -> Result<FluorescenceTrajectory> {
        let keep = index < protocol.record_trajectories;
        let mut stepper = QjStepper::new(&model);
        let mut h = CMatrix::zeros(2, 2);
        let l = sample_index(&probs, uniform(rng));
        let mut amps = kets[l].amplitudes().to_vec();
        model.hamiltonian_into(0.0, &mut h);
        let mut ledger = EnergyLedger::new(energy(&h, &amps));
        let mut rows = Vec::new();
        let mut snapshots = Vec::new();
        if every > 0 {
            snapshots.push([amps[0], amps[1]]);
        }
        let initial_name = match protocol.initial {
            InitialCondition::Thermal => format!("l={}", STATE_NAMES[l]),
            InitialCondition::Ket(_) => "l=psi".to_string(),
        };
        if keep {
            rows.push(LedgerRow {
                traj_id: index,
                k: 0,
                t: 0.0,
                outcome: initial_name,
                amps: amps.clone(),
                dw: 0.0,
                dqcl: 0.0,
                dqq: 0.0,
                dis: probs[l].ln(),
                y: None,
            });
        }
        let mut window = [0.0; 3];
        let mut closed_form_defect = 0.0_f64;
        let mut printed_qq = crate::stats::NeumaierSum::new();
        let mut step_qq = crate::stats::NeumaierSum::new();
        let mut jumps = 0;
        for k in 0..steps {
            let t = k as f64 * dt;
            let z = amps[0].norm_sqr() - amps[1].norm_sqr();
            let s = amps[1].conj() * amps[0] * Complex64::from_polar(1.0, p.omega_l * t);
            let dw = -p.g * p.omega_l * dt * s.im;
            let step = stepper.step(&mut amps, t, rng)?;
            let dqcl = match step.outcome {
                1 => -p.omega0,
                2 => p.omega0,
                _ => 0.0,
            };
            if step.outcome != 0 {
                jumps += 1;
            }
            model.hamiltonian_into(t + dt, &mut h);
            let dqq = ledger.push(energy(&h, &amps), dw, dqcl);
            step_qq.add(dqq);
            let closed = fluorescence_quantum_heat(p, step.outcome, z, s, dw, dt);
            closed_form_defect = closed_form_defect.max((closed - dqq).abs());
            printed_qq.add(printed_quantum_heat(p, step.outcome, z, s, dt));
            if let Some((a, b)) = protocol.flux_window {
                if (a..b).contains(&k) {
                    window[0] += dw;
                    window[1] += dqcl;
                    window[2] += dqq;
                }
            }
            if every > 0 && (k + 1) % every == 0 {
                snapshots.push([amps[0], amps[1]]);
            }
            if keep {
                rows.push(LedgerRow {
                    traj_id: index,
                    k: k + 1,
                    t: t + dt,
                    outcome: JUMP_NAMES[step.outcome].to_string(),
                    amps: amps.clone(),
                    dw,
                    dqcl,
                    dqq,
                    dis: temperature.map_or(f64::NAN, |temp| -dqcl / temp),
                    y: None,
                });
            }
        }
        let finals = [amps[0].norm_sqr(), amps[1].norm_sqr()];
        let m = sample_index(&finals, uniform(rng));
        let fin = Ket::basis(2, m);
        model.hamiltonian_into(t_final, &mut h);
        let dqq = ledger.push(energy(&h, fin.amplitudes()), 0.0, 0.0);
        if keep {
            rows.push(LedgerRow {
                traj_id: index,
                k: steps + 1,
                t: t_final,
                outcome: format!("m={}", STATE_NAMES[m]),
                amps: fin.amplitudes().to_vec(),
                dw: 0.0,
                dqcl: 0.0,
                dqq,
                dis: -final_populations[m].ln(),
                y: None,
            });
        }
        let (entropy, jarzynski) = match temperature {
            Some(temp) => (
                probs[l].ln() - final_populations[m].ln() - ledger.classical_heat() / temp,
                (-(ledger.work() + ledger.quantum_heat()) / temp).exp(),
            ),
            None => (f64::NAN, f64::NAN),
        };
        Ok(FluorescenceTrajectory {
            totals: TrajectoryTotals {
                w: ledger.work(),
                qcl: ledger.classical_heat(),
                qq: ledger.quantum_heat(),
                delta_u: ledger.delta_u(),
                entropy,
            },
            jarzynski,
            closure_defect: ledger.closure_defect(),
            closed_form_defect,
            printed_qq: printed_qq.value(),
            step_qq: step_qq.value(),
            window,
            jumps,
            snapshots,
            rows,
        })
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;

    let totals: Vec<TrajectoryTotals> = trajectories.iter().map(|t| t.totals).collect();
    let full_rank = matches!(protocol.initial, InitialCondition::Thermal) && temperature.is_some();
    let mut summary = EnsembleSummary::from_totals(&totals, Some(seed), full_rank);
    if temperature.is_some() {
        let j: Vec<f64> = trajectories.iter().map(|t| t.jarzynski).collect();
        let e = Estimate::from_samples(&j);
        summary.jarzynski = Some(e.mean);
        summary.jarzynski_std_error = Some(e.std_error);
    }
    if let Some((a, b)) = protocol.flux_window {
        let span = (b - a) as f64 * dt;
        let est = |i: usize| Estimate::from_samples(&trajectories.iter().map(|t| t.window[i] / span).collect::<Vec<_>>());
        let (w, qcl, qq) = (est(0), est(1), est(2));
        let closed = fluorescence_fluxes(p);
        summary.fluxes = Some(FluxReport {
            w_dot: w.mean,
            qcl_dot: qcl.mean,
            qq_dot: qq.mean,
            se_w_dot: w.std_error,
            se_qcl_dot: qcl.std_error,
            se_qq_dot: qq.std_error,
            closed_w_dot: closed.w_dot,
            closed_qcl_dot: closed.qcl_dot,
            closed_qq_dot: closed.qq_dot,
            window_start: a as f64 * dt,
            window_end: b as f64 * dt,
        });
    }
    let max = |f: fn(&FluorescenceTrajectory) -> f64| trajectories.iter().map(f).fold(0.0_f64, f64::max);
    let printed = Estimate::from_samples(&trajectories.iter().map(|t| t.printed_qq - t.step_qq).collect::<Vec<_>>());
    let d = &mut summary.diagnostics;
    d.insert("max_closure_defect".into(), max(|t| t.closure_defect));
    d.insert("max_closed_form_defect".into(), max(|t| t.closed_form_defect));
    d.insert("closed_form_tolerance".into(), closed_form_tolerance);
    d.insert("printed_table_mean_defect".into(), printed.mean);
    d.insert("printed_table_mean_defect_se".into(), printed.std_error);
    d.insert("final_population_e".into(), final_populations[0]);
    d.insert("dt".into(), dt);
    d.insert("t_final".into(), t_final);
    if let Some(temp) = temperature {
        d.insert("temperature".into(), temp);
    }

    let snapshot_times = if every > 0 {
        (0..=steps / every).map(|i| (i * every) as f64 * dt).collect()
    } else {
        Vec::new()
    };
    Ok(FluorescenceOutcome {
        summary,
        trajectories,
        snapshot_times,
        final_populations,
        closed_form_tolerance,
        rho0,
    })
}

/// Ensemble-averaged ledger of the two-point protocol from the master
/// equation: per-step work and classical heat are averaged over the
/// instantaneous state and the final energy measurement is included in `ΔU`.
pub fn fluorescence_master_summary(p: &FluorescenceParams, protocol: &FluorescenceProtocol) -> Result<EnsembleSummary> {
    p.validate()?;
    let dt = protocol.dt;
    let model = fluorescence_model(p, dt)?;
    let (probs, kets) = initial_ensemble(p, &protocol.initial)?;
    let rho0 = DensityOp::from_ensemble(&probs, &kets)?;
    let grid: Vec<f64> = (0..=protocol.steps).map(|k| k as f64 * dt).collect();
    let states = evolve_master(&rho0, &model, &grid)?;
    let mut w = Vec::with_capacity(protocol.steps);
    let mut qcl = Vec::with_capacity(protocol.steps);
    for (k, rho) in states[..protocol.steps].iter().enumerate() {
        let m = rho.matrix();
        let s = m[(0, 1)] * Complex64::from_polar(1.0, p.omega_l * grid[k]);
        w.push(-p.g * p.omega_l * dt * s.im);
        qcl.push(p.omega0 * p.gamma * dt * (p.nbar * m[(1, 1)].re - (p.nbar + 1.0) * m[(0, 0)].re));
    }
    let last = states[protocol.steps].matrix();
    let h_final = model.hamiltonian(grid[protocol.steps]);
    let u_final = last[(0, 0)].re * h_final[(0, 0)].re + last[(1, 1)].re * h_final[(1, 1)].re;
    let du = u_final - rho0.expectation(&model.hamiltonian(0.0));
    let (w, qcl) = (pairwise_sum(&w), pairwise_sum(&qcl));
    let mut summary = EnsembleSummary {
        mean_w: w,
        mean_qcl: qcl,
        mean_qq: du - w - qcl,
        ..EnsembleSummary::default()
    };
    let d = &mut summary.diagnostics;
    d.insert("final_population_e".into(), last[(0, 0)].re);
    d.insert("final_coherence_abs".into(), last[(0, 1)].norm());
    d.insert("delta_U".into(), du);
    d.insert("dt".into(), dt);
    d.insert("t_final".into(), grid[protocol.steps]);
    Ok(summary)
}

/// Exact averages over every quantum-jump record of the two-point protocol.
#[derive(Clone, Debug)]
pub struct FluorescenceEnumeration {
    pub summary: EnsembleSummary,
    pub n_paths: u64,
    /// `Σ P(Γ)`, equal to one up to the completeness defect of the steps.
    pub total_prob: f64,
    /// `Σ P̃(Γ̃)` of the reverse process, `None` at zero temperature.
    pub total_rev_prob: Option<f64>,
}

struct PathSums {
    prob: Vec<f64>,
    w: Vec<f64>,
    qcl: Vec<f64>,
    qq: Vec<f64>,
    entropy: Vec<f64>,
    ift: Vec<f64>,
    lambda: Vec<f64>,
    rev: Vec<f64>,
    max_closure: f64,
}

struct EnumContext<'a> {
    p: &'a FluorescenceParams,
    sets: Vec<CMatrix>,
    n_ops: usize,
    steps: usize,
    dt: f64,
    h_final: CMatrix,
    temperature: Option<f64>,
    final_populations: [f64; 2],
}

impl EnumContext<'_> {
    fn descend(&self, k: usize, v: [Complex64; 2], w: f64, qcl: f64, l: (f64, f64), out: &mut PathSums) {
        let (p_l, u0) = l;
        if k == self.steps {
            for m in 0..2 {
                let a = v[m].norm_sqr();
                let prob = p_l * a;
                let fin = Ket::basis(2, m);
                let du = self.h_final.expectation(&fin).re - u0;
                let qq = du - w - qcl;
                let p_m = self.final_populations[m];
                let rev = self.temperature.map(|t| p_m * (qcl / t).exp() * a);
                if prob > 0.0 {
                    out.prob.push(prob);
                    out.w.push(prob * w);
                    out.qcl.push(prob * qcl);
                    out.qq.push(prob * qq);
                    out.max_closure = out.max_closure.max((du - (w + qcl + qq)).abs());
                    if let Some(t) = self.temperature {
                        let ds = (p_l / p_m).ln() - qcl / t;
                        out.entropy.push(prob * ds);
                        out.ift.push(prob * (-ds).exp());
                    }
                } else if let Some(r) = rev {
                    out.lambda.push(r);
                }
                if let Some(r) = rev {
                    out.rev.push(r);
                }
            }
            return;
        }
        let norm = v[0].norm_sqr() + v[1].norm_sqr();
        if norm == 0.0 {
            return;
        }
        let t = k as f64 * self.dt;
        let s = v[1].conj() * v[0] / norm * Complex64::from_polar(1.0, self.p.omega_l * t);
        let dw = -self.p.g * self.p.omega_l * self.dt * s.im;
        for a in 0..self.n_ops {
            let m = &self.sets[k * self.n_ops + a];
            let next = [m[(0, 0)] * v[0] + m[(0, 1)] * v[1], m[(1, 0)] * v[0] + m[(1, 1)] * v[1]];
            let dq = match a {
                1 => -self.p.omega0,
                2 => self.p.omega0,
                _ => 0.0,
            };
            self.descend(k + 1, next, w + dw, qcl + dq, l, out);
        }
    }
}

/// Enumerates every record `(l, α_1…α_K, m)` of [`run_fluorescence`]'s
/// protocol and returns exact path averages. The reverse process uses
/// `M_0†` and exchanges emission with absorption, so that
/// `P̃/P = (p'_m/p_l) e^{Q_cl/T}` holds path by path.
pub fn enumerate_fluorescence(p: &FluorescenceParams, protocol: &FluorescenceProtocol) -> Result<FluorescenceEnumeration> {
    p.validate()?;
    let dt = protocol.dt;
    if !(p.gamma * dt <= 0.01) {
        return Err(Error::Parameter(format!("γ·dt = {} exceeds 0.01", p.gamma * dt)));
    }
    let model = fluorescence_model(p, dt)?;
    let n_ops = model.n_jumps() + 1;
    let count = (n_ops as u128)
        .checked_pow(protocol.steps as u32)
        .map_or(u128::MAX, |c| c.saturating_mul(4));
    if count > MAX_PATHS {
        return Err(Error::EnumerationTooLarge {
            paths: count,
            limit: MAX_PATHS,
        });
    }
    let (probs, kets) = initial_ensemble(p, &protocol.initial)?;
    let rho0 = DensityOp::from_ensemble(&probs, &kets)?;
    let final_populations = final_distribution(p, protocol, &model, &rho0)?;
    let (probs, kets) = match &protocol.initial {
        InitialCondition::Thermal => (probs, kets),
        InitialCondition::Ket(k) => {
            let perp = Ket::normalized(vec![-k[1].conj(), k[0].conj()])?;
            (vec![1.0, 0.0], vec![k.clone(), perp])
        }
    };
    let mut sets = Vec::with_capacity(protocol.steps * n_ops);
    for k in 0..protocol.steps {
        sets.extend(qj_kraus(&model, k as f64 * dt)?.ops().iter().cloned());
    }
    let ctx = EnumContext {
        p,
        sets,
        n_ops,
        steps: protocol.steps,
        dt,
        h_final: model.hamiltonian(protocol.steps as f64 * dt),
        temperature: p.temperature(),
        final_populations,
    };
    let mut out = PathSums {
        prob: Vec::new(),
        w: Vec::new(),
        qcl: Vec::new(),
        qq: Vec::new(),
        entropy: Vec::new(),
        ift: Vec::new(),
        lambda: Vec::new(),
        rev: Vec::new(),
        max_closure: 0.0,
    };
    let h0 = model.hamiltonian(0.0);
    for (p_l, ket) in probs.iter().zip(&kets) {
        let u0 = h0.expectation(ket).re;
        ctx.descend(0, [ket[0], ket[1]], 0.0, 0.0, (*p_l, u0), &mut out);
    }

    let total = pairwise_sum(&out.prob);
    let mean = |xs: &[f64]| pairwise_sum(xs) / total;
    let thermal = ctx.temperature.is_some();
    let summary = EnsembleSummary {
        mean_w: mean(&out.w),
        mean_qcl: mean(&out.qcl),
        mean_qq: mean(&out.qq),
        mean_entropy: thermal.then(|| mean(&out.entropy)),
        ift_value: thermal.then(|| pairwise_sum(&out.ift)),
        lambda_abs: thermal.then(|| pairwise_sum(&out.lambda)),
        std_errors: StdErrors {
            entropy: thermal.then_some(0.0),
            ift: thermal.then_some(0.0),
            ..StdErrors::default()
        },
        n_traj: 0,
        seed: None,
        diagnostics: [
            ("n_paths".to_string(), count as f64),
            ("total_probability".to_string(), total),
            ("max_closure_defect".to_string(), out.max_closure),
            ("final_population_e".to_string(), final_populations[0]),
            ("dt".to_string(), dt),
            ("t_final".to_string(), protocol.steps as f64 * dt),
        ]
        .into_iter()
        .collect(),
        ..EnsembleSummary::default()
    };
    Ok(FluorescenceEnumeration {
        summary,
        n_paths: count as u64,
        total_prob: total,
        total_rev_prob: thermal.then(|| pairwise_sum(&out.rev)),
    })
}
