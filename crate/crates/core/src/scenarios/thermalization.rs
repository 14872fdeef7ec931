use rand::Rng;

use super::LedgerRow;
use crate::channels::{kraus_from_dilation, reverse_kraus, Dilation, KrausSet, Label};
use crate::error::{Error, Result};
use crate::linalg::{
    eig_hermitian, partial_trace_matrix, rel_entropy, thermal_state, trace_distance, vn_entropy, CMatrix, DensityOp,
    Ket, Subsystem,
};
use crate::stats::pairwise_sum;
use crate::thermo::{ift_from_enumeration, EnergyLedger, TrajectoryTotals};
use crate::trajectories::{
    enumerate_trajectories, reverse_path_probability, sample_index, uniform, MeasurementBasis, PROB_FLOOR,
};

/// Largest trace distance between the thermalized system marginal and the
/// Gibbs state accepted by [`build_thermalization`].
pub const TOL_THERM: f64 = 1e-8;

const GRID_POINTS: usize = 64;
const GOLDEN_ITERATIONS: usize = 80;

/// `exp(−iθ·SWAP) = cos θ·1 − i sin θ·SWAP` on `C^d ⊗ C^d`.
pub fn partial_swap(d: usize, theta: f64) -> CMatrix {
    let n = d * d;
    let mut v = CMatrix::identity(n).scale_real(theta.cos());
    let s = crate::linalg::c(0.0, -theta.sin());
    for i in 0..d {
        for a in 0..d {
            v[(i * d + a, a * d + i)] += s;
        }
    }
    v
}

/// System coupled to a copy of itself prepared in the Gibbs state, with the
/// augmented trajectory basis used to split entropy production into a
/// dephasing part and a thermal part.
#[derive(Clone, Debug)]
pub struct Thermalization {
    pub h_s: CMatrix,
    pub temperature: f64,
    pub rho_s: DensityOp,
    pub theta: f64,
    pub v: CMatrix,
    pub tau_s: DensityOp,
    pub tau_e: DensityOp,
    /// Energy eigenbasis `|e_m>` of the system, shared by the bath.
    pub energy_basis: Vec<Ket>,
    pub energies: Vec<f64>,
    /// `ρ_S` dephased in the energy basis.
    pub eta: DensityOp,
    /// Dilation measured in the bath eigenbasis before and the bath energy
    /// basis after the collision.
    pub dilation: Dilation,
    pub kraus: KrausSet,
    pub reverse: KrausSet,
    pub q: Vec<f64>,
    /// Populations of the evolved bath `τ'_E` in the output basis.
    pub q_prime: Vec<f64>,
    pub env_energies_in: Vec<f64>,
    pub env_energies_out: Vec<f64>,
    pub tau_e_out: DensityOp,
    /// Energy populations `p'_n` of the thermalized dephased state.
    pub p_final: Vec<f64>,
    pub marginal_defect: f64,
    pub commutator_defect: f64,
}

fn check_same_hamiltonian(h_s: &CMatrix, bath_dim: usize) -> Result<()> {
    if !h_s.is_square() || !h_s.is_hermitian(1e-12) {
        return Err(Error::ModelBuild("system Hamiltonian must be square and Hermitian".into()));
    }
    if bath_dim != h_s.rows() {
        return Err(Error::ModelBuild(format!(
            "the bath must be a copy of the system: bath dimension {bath_dim}, system dimension {}",
            h_s.rows()
        )));
    }
    Ok(())
}

fn marginal(v: &CMatrix, rho: &CMatrix, tau: &CMatrix, d: usize) -> Result<CMatrix> {
    let out = v.conjugate(&rho.kron(tau))?;
    partial_trace_matrix(&out, (d, d), Subsystem::System)
}

fn thermalization_defect(theta: f64, rho: &CMatrix, tau: &CMatrix, d: usize) -> Result<f64> {
    let m = marginal(&partial_swap(d, theta), rho, tau, d)?;
    trace_distance(&m, tau)
}

fn choose_theta(rho: &CMatrix, tau: &CMatrix, d: usize) -> Result<(f64, f64)> {
    let top = std::f64::consts::FRAC_PI_2;
    let step = top / (GRID_POINTS - 1) as f64;
    let mut best = (0.0, f64::INFINITY);
    let mut best_i = 0;
    for i in 0..GRID_POINTS {
        let theta = i as f64 * step;
        let f = thermalization_defect(theta, rho, tau, d)?;
        if f <= best.1 {
            best = (theta, f);
            best_i = i;
        }
    }
    let mut a = best_i.saturating_sub(1) as f64 * step;
    let mut b = ((best_i + 1).min(GRID_POINTS - 1)) as f64 * step;
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = thermalization_defect(x1, rho, tau, d)?;
    let mut f2 = thermalization_defect(x2, rho, tau, d)?;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = thermalization_defect(x1, rho, tau, d)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = thermalization_defect(x2, rho, tau, d)?;
        }
    }
    let (xg, fg) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    if fg < best.1 {
        best = (xg, fg);
    }
    Ok(best)
}

/// Builds the collision with a resonant copy of the system so that the
/// system marginal after one collision is the Gibbs state `τ_S`.
pub fn build_thermalization(
    rho_s: &DensityOp,
    h_s: &CMatrix,
    bath_dim: usize,
    temperature: f64,
) -> Result<Thermalization> {
    check_same_hamiltonian(h_s, bath_dim)?;
    let d = h_s.rows();
    if rho_s.dim() != d {
        return Err(Error::Dimension(format!("state of dimension {} with Hamiltonian of dimension {d}", rho_s.dim())));
    }
    let tau_s = thermal_state(h_s, temperature)?;
    let tau_e = tau_s.clone();

    let (theta, marginal_defect) = choose_theta(rho_s.matrix(), tau_e.matrix(), d)?;
    if !(marginal_defect <= TOL_THERM) {
        return Err(Error::ModelBuild(format!(
            "no collision angle thermalizes the system: best trace distance {marginal_defect:.3e}"
        )));
    }
    let v = partial_swap(d, theta);
    let h_tot = &h_s.kron(&CMatrix::identity(d)) + &CMatrix::identity(d).kron(h_s);
    let commutator_defect = v.commutator(&h_tot)?.max_abs();
    if commutator_defect > 1e-10 * h_s.max_abs().max(1.0) {
        return Err(Error::ModelBuild(format!(
            "collision does not conserve energy: ‖[V, H_S + H_E]‖ = {commutator_defect:.3e}"
        )));
    }

    let eig = eig_hermitian(h_s)?;
    let energy_basis = eig.vectors.clone();
    let energies = eig.values.clone();
    let eta = rho_s.dephase(&energy_basis);

    let dilation = Dilation::new(v.clone(), d, tau_e.clone(), energy_basis.clone())?;
    let kraus = kraus_from_dilation(&dilation)?;
    let q = dilation.env_probs().to_vec();
    let tau_e_out = dilation.evolved_env(&eta)?;
    let q_prime = tau_e_out.populations(&energy_basis);
    for (i, a) in energy_basis.iter().enumerate() {
        for (j, b) in energy_basis.iter().enumerate() {
            if i != j && tau_e_out.matrix().expectation_between(a, b).norm() > 1e-10 {
                return Err(Error::ModelBuild("evolved bath is not diagonal in the bath energy basis".into()));
            }
        }
    }
    let env_energies_in = dilation.in_basis().iter().map(|phi| h_s.expectation(phi).re).collect();
    let env_energies_out = energies.clone();
    let reverse = reverse_kraus(
        &kraus,
        |l| match l {
            Label::Pair(mu, _) => q[*mu],
            _ => f64::NAN,
        },
        |l| match l {
            Label::Pair(_, nu) => q_prime[*nu],
            _ => f64::NAN,
        },
    )?;
    let phi_eta = dilation.channel(eta.matrix())?;
    let p_final = DensityOp::from_matrix_symmetrized(&phi_eta, 1e-8)?.populations(&energy_basis);

    Ok(Thermalization {
        h_s: h_s.clone(),
        temperature,
        rho_s: rho_s.clone(),
        theta,
        v,
        tau_s,
        tau_e,
        energy_basis,
        energies,
        eta,
        dilation,
        kraus,
        reverse,
        q,
        q_prime,
        env_energies_in,
        env_energies_out,
        tau_e_out,
        p_final,
        marginal_defect,
        commutator_defect,
    })
}

trait BetweenExt {
    fn expectation_between(&self, a: &Ket, b: &Ket) -> crate::linalg::Complex64;
}

impl BetweenExt for CMatrix {
    /// `<a|A|b>`.
    fn expectation_between(&self, a: &Ket, b: &Ket) -> crate::linalg::Complex64 {
        let ab = self.apply(b).expect("dimension checked by the caller");
        a.inner(&ab)
    }
}

/// One augmented trajectory: initial eigenvector `l`, energy `m` after
/// dephasing, bath outcome `(μ, ν)` and final energy `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPath {
    pub l: usize,
    pub m: usize,
    pub mu: usize,
    pub nu: usize,
    pub n: usize,
    pub prob: f64,
    pub prob_rev: f64,
    /// `ln(p_l/η_m)`; NaN when `prob` vanishes.
    pub ds_q: f64,
    /// `ln(η_m/p'_n) + ln(q_μ/q'_ν)`; NaN when `prob` vanishes.
    pub ds_cl: f64,
    /// `E_m − <ψ_l|H|ψ_l>`, the energy change of the dephasing step.
    pub qq_dephasing: f64,
    /// First-law residual `ΔU − Q_cl` of the whole path.
    pub qq: f64,
    pub qcl: f64,
    pub du: f64,
}

/// Exact path sums over the augmented trajectories together with the
/// relative entropies they should reproduce.
#[derive(Clone, Debug)]
pub struct ThermalizationReport {
    pub paths: Vec<AugmentedPath>,
    pub total_prob: f64,
    pub total_rev_prob: f64,
    pub mean_ds_q: f64,
    pub mean_ds_cl: f64,
    pub mean_ds: f64,
    pub mean_qq: f64,
    pub mean_qq_dephasing: f64,
    pub mean_qcl: f64,
    pub mean_du: f64,
    pub d_rho_eta: f64,
    pub d_eta_tau: f64,
    pub d_rho_tau: f64,
    /// Finite-bath correction `D[τ'_E‖τ_E]`.
    pub d_env: f64,
    pub ift_value: f64,
    pub lambda: f64,
    /// Largest `|ln(P/P̃) − (Δs_q + Δs_cl)|` over paths with `P > 0`.
    pub max_split_defect: f64,
    /// Largest `|(E_n − E_m) − (ε_μ − ε'_ν)|` over paths with `P > 0`.
    pub max_energy_defect: f64,
}

struct PathAmplitudes {
    /// `|<e_m|ψ_l>|²` indexed `[l][m]`.
    overlap: Vec<Vec<f64>>,
    /// `|<e_n|M_α|e_m>|²` and `|<e_m|M̃_α|e_n>|²` indexed `[α][m][n]`.
    fwd: Vec<Vec<Vec<f64>>>,
    rev: Vec<Vec<Vec<f64>>>,
}

fn amplitudes(th: &Thermalization, initial: &MeasurementBasis) -> PathAmplitudes {
    let e = &th.energy_basis;
    let overlap = initial
        .kets
        .iter()
        .map(|psi| e.iter().map(|em| em.overlap_sqr(psi)).collect())
        .collect();
    let elements = |ops: &[CMatrix], forward: bool| -> Vec<Vec<Vec<f64>>> {
        ops.iter()
            .map(|op| {
                e.iter()
                    .map(|em| {
                        e.iter()
                            .map(|en| {
                                if forward {
                                    op.expectation_between(en, em).norm_sqr()
                                } else {
                                    op.expectation_between(em, en).norm_sqr()
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    PathAmplitudes {
        overlap,
        fwd: elements(th.kraus.ops(), true),
        rev: elements(th.reverse.ops(), false),
    }
}

/// Enumerates every augmented trajectory and evaluates the entropy split,
/// heat averages and the fluctuation theorem exactly.
pub fn thermalization_enumeration(th: &Thermalization) -> Result<ThermalizationReport> {
    let initial = MeasurementBasis::of_state(&th.rho_s);
    let eta = th.eta.populations(&th.energy_basis);
    let amp = amplitudes(th, &initial);
    let d = th.energies.len();
    let u_l: Vec<f64> = initial.kets.iter().map(|k| th.h_s.expectation(k).re).collect();

    let mut paths = Vec::new();
    for l in 0..d {
        for m in 0..d {
            for (a, label) in th.kraus.labels().iter().enumerate() {
                let Label::Pair(mu, nu) = *label else {
                    return Err(Error::Partition(format!("unexpected outcome {label}")));
                };
                for n in 0..d {
                    let prob = initial.probs[l] * amp.overlap[l][m] * amp.fwd[a][m][n];
                    let prob_rev = th.p_final[n] * amp.rev[a][m][n] * amp.overlap[l][m];
                    let (ds_q, ds_cl) = if prob > PROB_FLOOR {
                        (
                            (initial.probs[l] / eta[m]).ln(),
                            (eta[m] / th.p_final[n]).ln() + (th.q[mu] / th.q_prime[nu]).ln(),
                        )
                    } else {
                        (f64::NAN, f64::NAN)
                    };
                    let qcl = th.env_energies_in[mu] - th.env_energies_out[nu];
                    let du = th.energies[n] - u_l[l];
                    paths.push(AugmentedPath {
                        l,
                        m,
                        mu,
                        nu,
                        n,
                        prob,
                        prob_rev,
                        ds_q,
                        ds_cl,
                        qq_dephasing: th.energies[m] - u_l[l],
                        qq: du - qcl,
                        qcl,
                        du,
                    });
                }
            }
        }
    }

    let live: Vec<&AugmentedPath> = paths.iter().filter(|p| p.prob > PROB_FLOOR).collect();
    let avg = |f: &dyn Fn(&AugmentedPath) -> f64| pairwise_sum(&live.iter().map(|p| p.prob * f(p)).collect::<Vec<_>>());
    let mut max_split_defect = 0.0_f64;
    let mut max_energy_defect = 0.0_f64;
    for p in &live {
        let split = (p.prob / p.prob_rev).ln() - (p.ds_q + p.ds_cl);
        max_split_defect = max_split_defect.max(split.abs());
        let e = (th.energies[p.n] - th.energies[p.m]) - p.qcl;
        max_energy_defect = max_energy_defect.max(e.abs());
    }
    let fwd: Vec<f64> = paths.iter().map(|p| p.prob).collect();
    let rev: Vec<f64> = paths.iter().map(|p| p.prob_rev).collect();
    let ift = ift_from_enumeration(&fwd, &rev);

    Ok(ThermalizationReport {
        total_prob: pairwise_sum(&fwd),
        total_rev_prob: pairwise_sum(&rev),
        mean_ds_q: avg(&|p| p.ds_q),
        mean_ds_cl: avg(&|p| p.ds_cl),
        mean_ds: avg(&|p| p.ds_q + p.ds_cl),
        mean_qq: avg(&|p| p.qq),
        mean_qq_dephasing: avg(&|p| p.qq_dephasing),
        mean_qcl: avg(&|p| p.qcl),
        mean_du: avg(&|p| p.du),
        d_rho_eta: rel_entropy(&th.rho_s, &th.eta)?,
        d_eta_tau: rel_entropy(&th.eta, &th.tau_s)?,
        d_rho_tau: rel_entropy(&th.rho_s, &th.tau_s)?,
        d_env: rel_entropy(&th.tau_e_out, &th.tau_e)?,
        ift_value: ift.value,
        lambda: ift.lambda_abs.unwrap_or(0.0),
        max_split_defect,
        max_energy_defect,
        paths,
    })
}

/// Exact fluctuation-theorem bookkeeping of the plain two-point scheme: the
/// initial eigenbasis of `ρ_S`, the bath measured in its eigenbasis before
/// and in the eigenbasis of the evolved bath after the collision, and the
/// final eigenbasis of `Φ(ρ_S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpmIftReport {
    /// `Σ_{P>0} P e^{-Δ_i s}` with `Δ_i s = ln(p_l/p'_m) + ln(q_μ/q'_ν)`.
    pub value: f64,
    /// `Σ_{P>0} P̃` from reverse path probabilities.
    pub value_direct: f64,
    /// `Σ_{P=0} P̃`.
    pub lambda: f64,
    pub total_forward: f64,
    pub total_reverse: f64,
    /// `Σ_Γ P Δ_i s`.
    pub second_law_paths: f64,
    /// `ΔS_S + ΔS_E` from the reduced states.
    pub second_law_reduced: f64,
    /// Largest `|Δ_i s − ln(P/P̃)|` over paths with `P > 0`.
    pub max_entropy_defect: f64,
    pub n_paths: usize,
}

pub fn thermalization_ift(th: &Thermalization) -> Result<TpmIftReport> {
    let dil = Dilation::with_evolved_out_basis(th.v.clone(), &th.rho_s, th.tau_e.clone())?;
    let k = kraus_from_dilation(&dil)?;
    let q = dil.env_probs().to_vec();
    let q_out = dil.out_probs(&th.rho_s)?;
    let pair = |l: &Label| match l {
        Label::Pair(mu, nu) => (*mu, *nu),
        _ => (usize::MAX, usize::MAX),
    };
    let rev = reverse_kraus(&k, |l| q[pair(l).0], |l| q_out[pair(l).1])?;
    let en = enumerate_trajectories(&th.rho_s, std::slice::from_ref(&k))?;

    let mut value = Vec::new();
    let mut direct = Vec::new();
    let mut lambda = Vec::new();
    let mut second = Vec::new();
    let mut fwd = Vec::with_capacity(en.paths.len());
    let mut bwd = Vec::with_capacity(en.paths.len());
    let mut max_entropy_defect = 0.0_f64;
    for path in &en.paths {
        let a = path.alphas[0];
        let (mu, nu) = pair(&k.labels()[a]);
        let p_m = en.final_basis.probs[path.m];
        let p_rev = reverse_path_probability(
            p_m,
            &en.final_basis.kets[path.m],
            &[&rev.ops()[a]],
            &en.initial.kets[path.l],
        )?;
        fwd.push(path.prob);
        bwd.push(p_rev);
        if path.prob > PROB_FLOOR {
            let ds = (en.initial.probs[path.l] / p_m).ln() + (q[mu] / q_out[nu]).ln();
            value.push(path.prob * (-ds).exp());
            direct.push(p_rev);
            second.push(path.prob * ds);
            max_entropy_defect = max_entropy_defect.max((ds - (path.prob / p_rev).ln()).abs());
        } else {
            lambda.push(p_rev);
        }
    }

    let out = DensityOp::from_matrix_symmetrized(&k.apply(th.rho_s.matrix())?, 1e-8)?;
    let env_out = dil.evolved_env(&th.rho_s)?;
    let second_law_reduced =
        vn_entropy(&out) - vn_entropy(&th.rho_s) + vn_entropy(&env_out) - vn_entropy(dil.env_state());

    Ok(TpmIftReport {
        value: pairwise_sum(&value),
        value_direct: pairwise_sum(&direct),
        lambda: pairwise_sum(&lambda),
        total_forward: pairwise_sum(&fwd),
        total_reverse: pairwise_sum(&bwd),
        second_law_paths: pairwise_sum(&second),
        second_law_reduced,
        max_entropy_defect,
        n_paths: en.paths.len(),
    })
}

/// One sampled augmented trajectory.
#[derive(Clone, Debug)]
pub struct ThermalizationSample {
    pub l: usize,
    pub m: usize,
    pub label: Label,
    pub n: usize,
    pub totals: TrajectoryTotals,
    pub ds_q: f64,
    pub ds_cl: f64,
    pub closure_defect: f64,
    pub rows: Vec<LedgerRow>,
}

fn label_of(outcome: &str, idx: usize) -> String {
    format!("{outcome}={idx}")
}

/// Samples `(l, m, (μ, ν), n)` in that order from one stream.
pub fn sample_thermalization(
    th: &Thermalization,
    traj_id: u64,
    rng: &mut impl Rng,
    keep_rows: bool,
) -> Result<ThermalizationSample> {
    let initial = MeasurementBasis::of_state(&th.rho_s);
    let eta = th.eta.populations(&th.energy_basis);
    let mut rows = Vec::new();
    let mut row = |k: usize, outcome: String, state: &Ket, dqcl: f64, dqq: f64, dis: f64| {
        if keep_rows {
            rows.push(LedgerRow {
                traj_id,
                k,
                t: k as f64,
                outcome,
                amps: state.amplitudes().to_vec(),
                dw: 0.0,
                dqcl,
                dqq,
                dis,
                y: None,
            });
        }
    };

    let l = sample_index(&initial.probs, uniform(rng));
    let psi = &initial.kets[l];
    let mut ledger = EnergyLedger::new(th.h_s.expectation(psi).re);
    row(0, label_of("l", l), psi, 0.0, 0.0, 0.0);

    let overlaps: Vec<f64> = th.energy_basis.iter().map(|e| e.overlap_sqr(psi)).collect();
    let m = sample_index(&overlaps, uniform(rng));
    let e_m = &th.energy_basis[m];
    let ds_q = (initial.probs[l] / eta[m]).ln();
    let dqq = ledger.push(th.energies[m], 0.0, 0.0);
    row(1, label_of("m", m), e_m, 0.0, dqq, ds_q);

    let branches: Vec<Ket> = th.kraus.ops().iter().map(|op| op.apply(e_m)).collect::<Result<_>>()?;
    let weights: Vec<f64> = branches.iter().map(Ket::norm_sqr).collect();
    let a = sample_index(&weights, uniform(rng));
    let label = th.kraus.labels()[a].clone();
    let Label::Pair(mu, nu) = label else {
        return Err(Error::Partition(format!("unexpected outcome {label}")));
    };
    let mut post = branches[a].clone();
    post.scale_in_place(1.0 / weights[a].sqrt());
    let dqcl = th.env_energies_in[mu] - th.env_energies_out[nu];
    let env_term = (th.q[mu] / th.q_prime[nu]).ln();
    let dqq = ledger.push(th.h_s.expectation(&post).re, 0.0, dqcl);
    row(2, label.to_string(), &post, dqcl, dqq, env_term);

    let finals: Vec<f64> = th.energy_basis.iter().map(|e| e.overlap_sqr(&post)).collect();
    let n = sample_index(&finals, uniform(rng));
    let sys_term = (eta[m] / th.p_final[n]).ln();
    let dqq = ledger.push(th.energies[n], 0.0, 0.0);
    row(3, label_of("n", n), &th.energy_basis[n], 0.0, dqq, sys_term);

    let ds_cl = env_term + sys_term;
    Ok(ThermalizationSample {
        l,
        m,
        label,
        n,
        totals: TrajectoryTotals {
            w: 0.0,
            qcl: ledger.classical_heat(),
            qq: ledger.quantum_heat(),
            delta_u: ledger.delta_u(),
            entropy: ds_q + ds_cl,
        },
        ds_q,
        ds_cl,
        closure_defect: ledger.closure_defect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli};

    fn qubit() -> CMatrix {
        pauli::sigma_z().scale_real(0.5)
    }

    fn coherent_state() -> DensityOp {
        let psi = Ket::normalized(vec![c(0.8, 0.0), c(0.36, 0.48)]).unwrap();
        let mixed = DensityOp::maximally_mixed(2);
        DensityOp::new(&DensityOp::from_ket(&psi).matrix().scale_real(0.7) + &mixed.matrix().scale_real(0.3)).unwrap()
    }

    #[test]
    fn partial_swap_is_unitary_and_full_swap_at_right_angle() {
        let v = partial_swap(2, 0.3);
        assert!(v.unitarity_defect() < 1e-14);
        let s = partial_swap(2, std::f64::consts::FRAC_PI_2);
        let expected = pauli::swap().scale(c(0.0, -1.0));
        assert!(s.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn collision_thermalizes_the_system() {
        let th = build_thermalization(&coherent_state(), &qubit(), 2, 0.8).unwrap();
        assert!(th.marginal_defect <= TOL_THERM);
        assert!(th.commutator_defect < 1e-12);
        let tau = th.tau_s.populations(&th.energy_basis);
        for (a, b) in th.p_final.iter().zip(&tau) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bath_of_other_dimension_is_rejected() {
        let err = build_thermalization(&coherent_state(), &qubit(), 3, 0.8).unwrap_err();
        assert!(matches!(err, Error::ModelBuild(_)));
    }

    #[test]
    fn thermal_input_produces_no_entropy() {
        let h = qubit();
        let tau = thermal_state(&h, 0.6).unwrap();
        let th = build_thermalization(&tau, &h, 2, 0.6).unwrap();
        let r = thermalization_enumeration(&th).unwrap();
        assert!(r.mean_ds.abs() < 1e-10);
        for p in r.paths.iter().filter(|p| p.prob > PROB_FLOOR) {
            assert!((p.ds_q + p.ds_cl).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_ledger_closes() {
        let th = build_thermalization(&coherent_state(), &qubit(), 2, 0.8).unwrap();
        let mut rng = crate::trajectories::traj_rng(5, 0);
        for i in 0..200 {
            let s = sample_thermalization(&th, i, &mut rng, true).unwrap();
            assert!(s.closure_defect < 1e-12);
            assert_eq!(s.rows.len(), 4);
        }
    }
}
