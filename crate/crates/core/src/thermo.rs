//! First-law ledgers, stochastic entropy production and fluctuation-theorem
//! estimators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channels::{ClassWeights, Label};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Ket};
use crate::stats::{pairwise_sum, Estimate, NeumaierSum};
use crate::trajectories::{MeasurementOutcome, OutcomeKind, TrajectoryRecord, PROB_FLOOR};
use crate::unravel::LindbladModel;

/// `U = <ψ|H|ψ>`.
pub fn internal_energy(psi: &Ket, h: &CMatrix) -> f64 {
    h.expectation(psi).re
}

/// `δW = dt (dλ/dt) <ψ|∂_λ H|ψ>` on the pre-step state. It does not depend
/// on the outcome of the step.
pub fn work_increment(psi: &Ket, model: &LindbladModel, t: f64) -> f64 {
    let rate = model.dlambda_dt(t);
    if rate == 0.0 {
        return 0.0;
    }
    model.dt() * rate * model.dh_dlambda(t).expectation(psi).re
}

/// How environment outcomes translate into energy received from a thermal
/// reservoir.
#[derive(Clone, Debug, PartialEq)]
pub enum HeatAssignment {
    /// `Label::Jump(j)` brings `quanta[j]` into the system, no-jump brings 0.
    Jumps { quanta: Vec<f64> },
    /// `Label::Pair(μ, ν)` brings `ε_μ − ε'_ν`, the bath energy lost.
    BathLevels { initial: Vec<f64>, fin: Vec<f64> },
    /// The environment is not a thermal reservoir.
    NotThermal,
}

/// Classical heat of one outcome. `thermal` is false when the outcome has no
/// thermal interpretation, in which case `value` is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalHeat {
    pub value: f64,
    pub thermal: bool,
}

impl ClassicalHeat {
    const NOT_THERMAL: Self = Self {
        value: 0.0,
        thermal: false,
    };
}

pub fn classical_heat_increment(outcome: &MeasurementOutcome, assignment: &HeatAssignment) -> ClassicalHeat {
    let OutcomeKind::Env(label) = &outcome.kind else {
        return ClassicalHeat::NOT_THERMAL;
    };
    match (assignment, label) {
        (HeatAssignment::Jumps { .. }, Label::NoJump) => ClassicalHeat {
            value: 0.0,
            thermal: true,
        },
        (HeatAssignment::Jumps { quanta }, Label::Jump(j)) if *j < quanta.len() => ClassicalHeat {
            value: quanta[*j],
            thermal: true,
        },
        (HeatAssignment::BathLevels { initial, fin }, Label::Pair(mu, nu))
            if *mu < initial.len() && *nu < fin.len() =>
        {
            ClassicalHeat {
                value: initial[*mu] - fin[*nu],
                thermal: true,
            }
        }
        _ => ClassicalHeat::NOT_THERMAL,
    }
}

/// Quantum heat as the first-law residual `ΔU − δW − δQ_cl`, with the
/// Hamiltonian evaluated at the start and end of the step.
pub fn quantum_heat_increment(
    psi_pre: &Ket,
    psi_post: &Ket,
    h_pre: &CMatrix,
    h_post: &CMatrix,
    dw: f64,
    dqcl: f64,
) -> f64 {
    internal_energy(psi_post, h_post) - internal_energy(psi_pre, h_pre) - dw - dqcl
}

/// Per-trajectory first-law bookkeeping. Quantum heat is stored as the
/// residual, so `ΔU = W + Q_cl + Q_q` holds by construction.
#[derive(Clone, Debug, Default)]
pub struct EnergyLedger {
    u0: f64,
    u_last: f64,
    w: NeumaierSum,
    qcl: NeumaierSum,
    qq: NeumaierSum,
    series: Option<LedgerSeries>,
}

/// Optional step-by-step record kept by an [`EnergyLedger`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSeries {
    pub u: Vec<f64>,
    pub dw: Vec<f64>,
    pub dqcl: Vec<f64>,
    pub dqq: Vec<f64>,
}

impl EnergyLedger {
    pub fn new(u0: f64) -> Self {
        Self {
            u0,
            u_last: u0,
            ..Self::default()
        }
    }

    /// Ledger that also keeps the full increment series.
    pub fn with_series(u0: f64) -> Self {
        Self {
            series: Some(LedgerSeries {
                u: vec![u0],
                ..LedgerSeries::default()
            }),
            ..Self::new(u0)
        }
    }

    /// Books one step ending at internal energy `u_post` and returns the
    /// quantum-heat residual.
    pub fn push(&mut self, u_post: f64, dw: f64, dqcl: f64) -> f64 {
        let dqq = u_post - self.u_last - dw - dqcl;
        self.w.add(dw);
        self.qcl.add(dqcl);
        self.qq.add(dqq);
        self.u_last = u_post;
        if let Some(s) = &mut self.series {
            s.u.push(u_post);
            s.dw.push(dw);
            s.dqcl.push(dqcl);
            s.dqq.push(dqq);
        }
        dqq
    }

    pub fn initial_energy(&self) -> f64 {
        self.u0
    }

    pub fn current_energy(&self) -> f64 {
        self.u_last
    }

    pub fn delta_u(&self) -> f64 {
        self.u_last - self.u0
    }

    pub fn work(&self) -> f64 {
        self.w.value()
    }

    pub fn classical_heat(&self) -> f64 {
        self.qcl.value()
    }

    pub fn quantum_heat(&self) -> f64 {
        self.qq.value()
    }

    /// `|ΔU − (W + Q_cl + Q_q)|`.
    pub fn closure_defect(&self) -> f64 {
        let mut s = NeumaierSum::new();
        s.add(self.u_last);
        s.add(-self.u0);
        s.add(-self.w.value());
        s.add(-self.qcl.value());
        s.add(-self.qq.value());
        s.value().abs()
    }

    pub fn series(&self) -> Option<&LedgerSeries> {
        self.series.as_ref()
    }
}

/// Entropy bookkeeping of one trajectory in nats.
#[derive(Clone, Debug, Default)]
pub struct EntropyLedger {
    pub log_p_initial: f64,
    pub log_p_final: f64,
    env: NeumaierSum,
    terms: Vec<f64>,
}

impl EntropyLedger {
    pub fn new(p_initial: f64) -> Self {
        Self {
            log_p_initial: p_initial.ln(),
            log_p_final: 0.0,
            ..Self::default()
        }
    }

    /// Adds one environment term, `ln(q_μ/q'_ν)` or `ln(q_α/q̃_α)`.
    pub fn push_env(&mut self, term: f64) {
        self.env.add(term);
        self.terms.push(term);
    }

    pub fn set_final(&mut self, p_final: f64) {
        self.log_p_final = p_final.ln();
    }

    pub fn env_terms(&self) -> &[f64] {
        &self.terms
    }

    pub fn env_total(&self) -> f64 {
        self.env.value()
    }

    /// `ln p_l − ln p'_m + Σ_k env_k`.
    pub fn total(&self) -> f64 {
        let mut s = NeumaierSum::new();
        s.add(self.log_p_initial);
        s.add(-self.log_p_final);
        s.add(self.env.value());
        s.value()
    }
}

/// Environment statistics needed to evaluate per-step entropy terms.
#[derive(Clone, Copy, Debug)]
pub enum EnvProbs<'a> {
    /// Fine-grained outcomes `(μ, ν)`: forward `q_μ` and backward `q'_ν`.
    Pairs { q: &'a [f64], q_prime: &'a [f64] },
    /// Coarse-grained outcomes with weights `q_α`, `q̃_α`.
    Classes(&'a [ClassWeights]),
    /// Thermal reservoir where `ln(q_α/q̃_α) = −δQ_cl/T`, read from the
    /// record's classical heat.
    Thermal { temperature: f64 },
    /// Per-step terms already stored in the record.
    Recorded,
}

fn env_term(outcome: &MeasurementOutcome, step: usize, record: &TrajectoryRecord, env: &EnvProbs<'_>) -> Result<f64> {
    match (env, &outcome.kind) {
        (EnvProbs::Pairs { q, q_prime }, OutcomeKind::Env(Label::Pair(mu, nu))) => {
            let (qf, qb) = (q[*mu], q_prime[*nu]);
            if !(qf > 0.0) {
                return Err(Error::DivisionByZeroOutcome(format!("({mu},{nu})")));
            }
            if !(qb > 0.0) {
                return Ok(f64::INFINITY);
            }
            Ok((qf / qb).ln())
        }
        (EnvProbs::Classes(w), OutcomeKind::Env(label)) => {
            let cw = w
                .iter()
                .find(|c| &c.label == label)
                .ok_or_else(|| Error::Partition(format!("no weights for class {label}")))?;
            if !(cw.q > 0.0) {
                return Err(Error::DivisionByZeroOutcome(label.to_string()));
            }
            Ok((cw.q / cw.q_tilde).ln())
        }
        (EnvProbs::Thermal { temperature }, _) => {
            let dq = record.thermo.get(step).map(|s| s.dqcl).unwrap_or(0.0);
            Ok(-dq / temperature)
        }
        (EnvProbs::Recorded, _) => Ok(record.thermo.get(step).map(|s| s.dis).unwrap_or(f64::NAN)),
        _ => Err(Error::Parameter("environment statistics do not match the outcome".into())),
    }
}

/// `Δ_i s[Γ] = ln(p_l/p'_m) + Σ_k (environment term)_k` for a record
/// bracketed by initial and final system outcomes.
pub fn entropy_production(
    record: &TrajectoryRecord,
    p_init: &[f64],
    p_final: &[f64],
    env: EnvProbs<'_>,
) -> Result<f64> {
    let mut ledger: Option<EntropyLedger> = None;
    let mut step = 0;
    for o in &record.outcomes {
        match &o.kind {
            OutcomeKind::SystemInitial(l) => {
                let p = p_init[*l];
                if !(p > 0.0) {
                    return Err(Error::DivisionByZeroOutcome(format!("initial outcome {l}")));
                }
                ledger = Some(EntropyLedger::new(p));
            }
            OutcomeKind::SystemFinal(m) => {
                let p = p_final[*m];
                if !(p > 0.0) {
                    return Err(Error::DivisionByZeroOutcome(format!("final outcome {m}")));
                }
                ledger
                    .as_mut()
                    .ok_or_else(|| Error::Parameter("final outcome before initial outcome".into()))?
                    .set_final(p);
            }
            OutcomeKind::Env(_) | OutcomeKind::Continuous(_) => {
                let term = env_term(o, step, record, &env)?;
                ledger
                    .as_mut()
                    .ok_or_else(|| Error::Parameter("environment outcome before initial outcome".into()))?
                    .push_env(term);
                step += 1;
            }
        }
    }
    ledger
        .map(|l| l.total())
        .ok_or_else(|| Error::Parameter("record has no initial system outcome".into()))
}

/// Result of an integral fluctuation theorem evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IftResult {
    /// `<e^{-Δ_i s}>` over trajectories with `P(Γ) > 0`.
    pub value: f64,
    /// Reverse probability of forward-impossible trajectories, when known.
    pub lambda_abs: Option<f64>,
    /// Standard error of `value` (zero for an exact enumeration).
    pub std_error: f64,
}

/// Exact evaluation from paired forward and reverse path probabilities.
/// Paths with `P(Γ) ≤ PROB_FLOOR` count toward `λ`.
pub fn ift_from_enumeration(forward: &[f64], reverse: &[f64]) -> IftResult {
    let mut value = Vec::with_capacity(forward.len());
    let mut lambda = Vec::new();
    for (&p, &pr) in forward.iter().zip(reverse) {
        if p > PROB_FLOOR {
            // P · e^{-Δ_i s} with Δ_i s = ln(P/P̃).
            value.push(p * (-(p / pr).ln()).exp());
        } else {
            lambda.push(pr);
        }
    }
    IftResult {
        value: pairwise_sum(&value),
        lambda_abs: Some(pairwise_sum(&lambda)),
        std_error: 0.0,
    }
}

/// Monte Carlo estimate of `<e^{-Δ_i s}>` from sampled entropies.
/// `full_rank_start` reports `λ = 0`; otherwise `λ` is unknown.
pub fn ift_from_samples(entropies: &[f64], full_rank_start: bool) -> IftResult {
    let xs: Vec<f64> = entropies.iter().map(|s| (-s).exp()).collect();
    let e = Estimate::from_samples(&xs);
    IftResult {
        value: e.mean,
        lambda_abs: full_rank_start.then_some(0.0),
        std_error: e.std_error,
    }
}

/// `Σ_Γ P(Γ) Δ_i s[Γ]` over paths with `P(Γ) > 0`.
pub fn second_law_average(probs: &[f64], entropies: &[f64]) -> f64 {
    let terms: Vec<f64> = probs
        .iter()
        .zip(entropies)
        .filter(|(p, _)| **p > PROB_FLOOR)
        .map(|(p, s)| p * s)
        .collect();
    pairwise_sum(&terms)
}

/// Standard errors reported next to the ensemble means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "Qcl")]
    pub qcl: f64,
    #[serde(rename = "Qq")]
    pub qq: f64,
    pub entropy: Option<f64>,
    pub ift: Option<f64>,
}

/// Steady-state energy fluxes, estimated and closed-form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    #[serde(rename = "W_dot")]
    pub w_dot: f64,
    #[serde(rename = "Qcl_dot")]
    pub qcl_dot: f64,
    #[serde(rename = "Qq_dot")]
    pub qq_dot: f64,
    #[serde(rename = "se_W_dot")]
    pub se_w_dot: f64,
    #[serde(rename = "se_Qcl_dot")]
    pub se_qcl_dot: f64,
    #[serde(rename = "se_Qq_dot")]
    pub se_qq_dot: f64,
    #[serde(rename = "closed_W_dot")]
    pub closed_w_dot: f64,
    #[serde(rename = "closed_Qcl_dot")]
    pub closed_qcl_dot: f64,
    #[serde(rename = "closed_Qq_dot")]
    pub closed_qq_dot: f64,
    pub window_start: f64,
    pub window_end: f64,
}

/// Ensemble averages written to `summary.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    #[serde(rename = "mean_W")]
    pub mean_w: f64,
    #[serde(rename = "mean_Qcl")]
    pub mean_qcl: f64,
    #[serde(rename = "mean_Qq")]
    pub mean_qq: f64,
    pub mean_entropy: Option<f64>,
    pub ift_value: Option<f64>,
    pub lambda_abs: Option<f64>,
    pub std_errors: StdErrors,
    pub n_traj: u64,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fluxes: Option<FluxReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jarzynski: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub jarzynski_std_error: Option<f64>,
    /// Scenario-specific reference values and checks.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub diagnostics: BTreeMap<String, f64>,
}

/// Per-trajectory totals used to build an [`EnsembleSummary`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrajectoryTotals {
    pub w: f64,
    pub qcl: f64,
    pub qq: f64,
    pub delta_u: f64,
    /// NaN when the entropy production is undefined.
    pub entropy: f64,
}

impl EnsembleSummary {
    /// Means and standard errors of sampled totals. Entropy statistics are
    /// reported only when every trajectory has a finite value.
    pub fn from_totals(totals: &[TrajectoryTotals], seed: Option<u64>, full_rank_start: bool) -> Self {
        let col = |f: fn(&TrajectoryTotals) -> f64| -> Vec<f64> { totals.iter().map(f).collect() };
        let w = Estimate::from_samples(&col(|t| t.w));
        let qcl = Estimate::from_samples(&col(|t| t.qcl));
        let qq = Estimate::from_samples(&col(|t| t.qq));
        let s = col(|t| t.entropy);
        let (mean_entropy, se_entropy, ift) = if !s.is_empty() && s.iter().all(|x| x.is_finite()) {
            let e = Estimate::from_samples(&s);
            (Some(e.mean), Some(e.std_error), Some(ift_from_samples(&s, full_rank_start)))
        } else {
            (None, None, None)
        };
        Self {
            mean_w: w.mean,
            mean_qcl: qcl.mean,
            mean_qq: qq.mean,
            mean_entropy,
            ift_value: ift.map(|i| i.value),
            lambda_abs: ift.and_then(|i| i.lambda_abs),
            std_errors: StdErrors {
                w: w.std_error,
                qcl: qcl.std_error,
                qq: qq.std_error,
                entropy: se_entropy,
                ift: ift.map(|i| i.std_error),
            },
            n_traj: totals.len() as u64,
            seed,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli};

    #[test]
    fn internal_energy_of_general_qubit() {
        let w0 = 1.7;
        let h = pauli::sigma_z().scale_real(w0 / 2.0);
        let psi = Ket::normalized(vec![c(0.3, 0.4), c(0.0, -0.5)]).unwrap();
        let pe = psi[0].norm_sqr();
        let pg = psi[1].norm_sqr();
        assert!((internal_energy(&psi, &h) - w0 / 2.0 * (pe - pg)).abs() < 1e-15);
    }

    #[test]
    fn ledger_closes_and_returns_residual() {
        let mut l = EnergyLedger::with_series(0.5);
        let q = l.push(0.2, 0.1, -0.3);
        assert!((q - (0.2 - 0.5 - 0.1 + 0.3)).abs() < 1e-15);
        l.push(-0.5, 0.05, 0.0);
        assert!(l.closure_defect() < 1e-15);
        assert_eq!(l.series().unwrap().u.len(), 3);
    }

    #[test]
    fn heat_assignment() {
        let jumps = HeatAssignment::Jumps {
            quanta: vec![-2.0, 2.0],
        };
        let emit = MeasurementOutcome {
            kind: OutcomeKind::Env(Label::Jump(0)),
            weight: 0.01,
        };
        let none = MeasurementOutcome {
            kind: OutcomeKind::Env(Label::NoJump),
            weight: 0.99,
        };
        assert_eq!(classical_heat_increment(&emit, &jumps).value, -2.0);
        assert_eq!(classical_heat_increment(&none, &jumps).value, 0.0);
        let cont = MeasurementOutcome {
            kind: OutcomeKind::Continuous(vec![0.1, 0.2]),
            weight: 1.0,
        };
        assert!(!classical_heat_increment(&cont, &jumps).thermal);
        let bath = HeatAssignment::BathLevels {
            initial: vec![1.0, -1.0],
            fin: vec![1.0, -1.0],
        };
        let same = MeasurementOutcome {
            kind: OutcomeKind::Env(Label::Pair(1, 1)),
            weight: 0.5,
        };
        assert_eq!(classical_heat_increment(&same, &bath).value, 0.0);
    }

    #[test]
    fn enumeration_ift_splits_lambda() {
        let r = ift_from_enumeration(&[0.5, 0.5, 0.0], &[0.4, 0.4, 0.2]);
        assert!((r.value - 0.8).abs() < 1e-15);
        assert!((r.lambda_abs.unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn summary_serializes_with_documented_keys() {
        let s = EnsembleSummary::from_totals(
            &[
                TrajectoryTotals {
                    w: 1.0,
                    entropy: 0.1,
                    ..Default::default()
                },
                TrajectoryTotals {
                    w: 2.0,
                    entropy: -0.1,
                    ..Default::default()
                },
            ],
            Some(3),
            true,
        );
        let v = serde_json::to_string(&s).unwrap();
        for key in ["mean_W", "mean_Qcl", "mean_Qq", "mean_entropy", "ift_value", "lambda_abs", "std_errors", "n_traj", "seed"] {
            assert!(v.contains(&format!("\"{key}\"")), "{key} missing from {v}");
        }
    }
}
