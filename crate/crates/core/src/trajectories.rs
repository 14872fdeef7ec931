//! Trajectory sampling, probabilities and exhaustive enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{KrausSet, Label};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, DensityOp, Ket, C0};

/// Outcome probabilities at or below this mark forward-impossible paths.
pub const PROB_FLOOR: f64 = 1e-15;

/// Largest number of paths [`enumerate_trajectories`] will produce.
pub const MAX_PATHS: u128 = 10_000_000;

/// What was measured at one point of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeKind {
    /// Initial system measurement in the eigenbasis of `ρ_S`.
    SystemInitial(usize),
    /// Final system measurement in the eigenbasis of the evolved state.
    SystemFinal(usize),
    /// Discrete environment outcome.
    Env(Label),
    /// Continuous environment record, one value per measured quadrature.
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub kind: OutcomeKind,
    /// Probability for discrete outcomes, probability density otherwise.
    pub weight: f64,
}

/// Energy and entropy increments of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepThermo {
    pub dw: f64,
    pub dqcl: f64,
    pub dqq: f64,
    /// Entropy produced in this step (nats); NaN where undefined.
    pub dis: f64,
}

/// One sampled trajectory. `states[0]` is the state right after the initial
/// measurement and `states[k]` the state after the `k`-th environment
/// outcome; `thermo[k]` belongs to the step from `times[k]` to `times[k+1]`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub outcomes: Vec<MeasurementOutcome>,
    pub states: Vec<Ket>,
    pub times: Vec<f64>,
    pub log_prob_fwd: f64,
    pub thermo: Vec<StepThermo>,
}

impl TrajectoryRecord {
    pub fn env_outcomes(&self) -> impl Iterator<Item = &MeasurementOutcome> {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.kind, OutcomeKind::Env(_) | OutcomeKind::Continuous(_)))
    }
}

/// Random stream of trajectory `index` under `master_seed`. Streams are
/// independent of the order in which trajectories are scheduled.
pub fn traj_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Uniform deviate in `[0, 1)`.
#[inline]
pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

/// Two independent standard normal deviates (Box–Muller).
#[inline]
pub fn normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Inverse-CDF draw in the fixed order of `weights`, which need not sum to
/// one. Entries at or below [`PROB_FLOOR`] are never selected.
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().filter(|&&w| w > PROB_FLOOR).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= PROB_FLOOR {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Applies `M` to `ψ`, returning the normalized posterior and `‖Mψ‖²`.
pub fn state_update(psi: &Ket, m: &CMatrix) -> Result<(Ket, f64)> {
    let raw = m.apply(psi)?;
    let p = raw.norm_sqr();
    if !(p > PROB_FLOOR) {
        return Err(Error::ImpossibleOutcome(p));
    }
    let mut out = raw;
    out.scale_in_place(1.0 / p.sqrt());
    Ok((out, p))
}

/// `P(Γ) = tr[Π[ξ_m] M_K…M_1 Π[ψ_l] M_1†…M_K†] p_l` in trace form.
pub fn traj_probability(p_l: f64, psi_l: &Ket, ops: &[&CMatrix], xi_m: &Ket) -> Result<f64> {
    let mut rho = psi_l.projector();
    for m in ops {
        rho = m.conjugate(&rho)?;
    }
    Ok(p_l * rho.expectation(xi_m).re)
}

/// Same probability as [`traj_probability`] from sequential state updates,
/// `p_l Π_k ‖M_k ψ_{k-1}‖² |<ξ_m|ψ_K>|²`.
pub fn traj_probability_product(p_l: f64, psi_l: &Ket, ops: &[&CMatrix], xi_m: &Ket) -> Result<f64> {
    let mut psi = psi_l.clone();
    let mut p = p_l;
    for m in ops {
        match state_update(&psi, m) {
            Ok((next, pk)) => {
                p *= pk;
                psi = next;
            }
            Err(Error::ImpossibleOutcome(_)) => return Ok(0.0),
            Err(e) => return Err(e),
        }
    }
    Ok(p * xi_m.overlap_sqr(&psi))
}

/// Reverse path probability `p'_m ‖<ψ_l| M̃_1…M̃_K |ξ_m>‖²`, with `rev_ops`
/// listed in forward order.
pub fn reverse_path_probability(p_m: f64, xi_m: &Ket, rev_ops: &[&CMatrix], psi_l: &Ket) -> Result<f64> {
    let mut v = xi_m.clone();
    for m in rev_ops.iter().rev() {
        v = m.apply(&v)?;
    }
    Ok(p_m * psi_l.overlap_sqr(&v))
}

/// Probabilities and vectors of a projective measurement.
#[derive(Clone, Debug)]
pub struct MeasurementBasis {
    pub probs: Vec<f64>,
    pub kets: Vec<Ket>,
}

impl MeasurementBasis {
    /// Eigen-decomposition of a state, eigenvalues ascending.
    pub fn of_state(rho: &DensityOp) -> Self {
        let (probs, kets) = rho.spectrum();
        Self { probs, kets }
    }

    pub fn dim(&self) -> usize {
        self.kets.len()
    }
}

/// Two-point measurement around one Kraus channel. The final basis is the
/// eigenbasis of `Φ(ρ_S)`, so the final measurement does not disturb the
/// average state.
#[derive(Clone, Debug)]
pub struct TwoPointScheme {
    pub initial: MeasurementBasis,
    pub kraus: KrausSet,
    pub final_basis: MeasurementBasis,
}

impl TwoPointScheme {
    pub fn new(rho_s: &DensityOp, kraus: KrausSet) -> Result<Self> {
        if rho_s.dim() != kraus.dim() {
            return Err(Error::Dimension(format!(
                "state of dimension {} with channel of dimension {}",
                rho_s.dim(),
                kraus.dim()
            )));
        }
        let out = kraus.apply(rho_s.matrix())?;
        let out = DensityOp::from_matrix_symmetrized(&out, 1e-8)?;
        Ok(Self {
            initial: MeasurementBasis::of_state(rho_s),
            final_basis: MeasurementBasis::of_state(&out),
            kraus,
        })
    }

    /// `P(l, α, m)`.
    pub fn probability(&self, l: usize, alpha: usize, m: usize) -> Result<f64> {
        traj_probability(
            self.initial.probs[l],
            &self.initial.kets[l],
            &[&self.kraus.ops()[alpha]],
            &self.final_basis.kets[m],
        )
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<TrajectoryRecord> {
        let l = sample_index(&self.initial.probs, uniform(rng));
        let p_l = self.initial.probs[l];
        let psi = self.initial.kets[l].clone();

        let branches: Vec<Ket> = self
            .kraus
            .ops()
            .iter()
            .map(|m| m.apply(&psi))
            .collect::<Result<_>>()?;
        let weights: Vec<f64> = branches.iter().map(Ket::norm_sqr).collect();
        let alpha = sample_index(&weights, uniform(rng));
        let q = weights[alpha];
        let mut post = branches[alpha].clone();
        post.scale_in_place(1.0 / q.sqrt());

        let final_w: Vec<f64> = self.final_basis.kets.iter().map(|x| x.overlap_sqr(&post)).collect();
        let m = sample_index(&final_w, uniform(rng));
        let r = final_w[m];

        Ok(TrajectoryRecord {
            outcomes: vec![
                MeasurementOutcome {
                    kind: OutcomeKind::SystemInitial(l),
                    weight: p_l,
                },
                MeasurementOutcome {
                    kind: OutcomeKind::Env(self.kraus.labels()[alpha].clone()),
                    weight: q,
                },
                MeasurementOutcome {
                    kind: OutcomeKind::SystemFinal(m),
                    weight: r,
                },
            ],
            states: vec![psi, post, self.final_basis.kets[m].clone()],
            times: vec![0.0, 1.0],
            log_prob_fwd: p_l.ln() + q.ln() + r.ln(),
            thermo: Vec::new(),
        })
    }
}

/// Samples one two-point trajectory on stream `(seed, index)`.
pub fn sample_two_point(rho_s: &DensityOp, channel: &KrausSet, seed: u64, index: u64) -> Result<TrajectoryRecord> {
    let scheme = TwoPointScheme::new(rho_s, channel.clone())?;
    scheme.sample(&mut traj_rng(seed, index))
}

/// One enumerated path `Γ = (l, α_1…α_K, m)`; `alphas` index into the
/// corresponding Kraus sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub l: usize,
    pub alphas: Vec<usize>,
    pub m: usize,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct Enumeration {
    pub initial: MeasurementBasis,
    pub final_basis: MeasurementBasis,
    pub paths: Vec<Path>,
}

impl Enumeration {
    pub fn total_probability(&self) -> f64 {
        crate::stats::pairwise_sum(&self.paths.iter().map(|p| p.prob).collect::<Vec<_>>())
    }
}

/// Number of paths `d · Π|K_k| · d` that an enumeration would visit.
pub fn path_count(dim: usize, seq: &[KrausSet]) -> u128 {
    seq.iter()
        .fold((dim as u128).saturating_mul(dim as u128), |acc, k| acc.saturating_mul(k.len() as u128))
}

/// Exhaustive list of trajectories with their probabilities. Every initial
/// eigenvector is visited, including those with `p_l = 0`, so that reverse
/// paths into forward-impossible trajectories stay accessible.
pub fn enumerate_trajectories(rho_s: &DensityOp, seq: &[KrausSet]) -> Result<Enumeration> {
    let d = rho_s.dim();
    if seq.iter().any(|k| k.dim() != d) {
        return Err(Error::Dimension("Kraus sequence does not match the state".into()));
    }
    let count = path_count(d, seq);
    if count > MAX_PATHS {
        return Err(Error::EnumerationTooLarge {
            paths: count,
            limit: MAX_PATHS,
        });
    }
    let initial = MeasurementBasis::of_state(rho_s);
    let mut rho = rho_s.matrix().clone();
    for k in seq {
        rho = k.apply(&rho)?;
    }
    let final_basis = MeasurementBasis::of_state(&DensityOp::from_matrix_symmetrized(&rho, 1e-8)?);

    let mut paths = Vec::with_capacity(count as usize);
    let mut alphas = Vec::with_capacity(seq.len());
    for l in 0..d {
        let v = initial.kets[l].amplitudes().to_vec();
        descend(seq, &v, &mut alphas, &mut |alphas, v| {
            for (m, xi) in final_basis.kets.iter().enumerate() {
                let amp: crate::linalg::Complex64 =
                    xi.amplitudes().iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                paths.push(Path {
                    l,
                    alphas: alphas.to_vec(),
                    m,
                    prob: initial.probs[l] * amp.norm_sqr(),
                });
            }
        });
    }
    Ok(Enumeration {
        initial,
        final_basis,
        paths,
    })
}

fn descend(
    seq: &[KrausSet],
    v: &[crate::linalg::Complex64],
    alphas: &mut Vec<usize>,
    leaf: &mut impl FnMut(&[usize], &[crate::linalg::Complex64]),
) {
    let Some((first, rest)) = seq.split_first() else {
        leaf(alphas, v);
        return;
    };
    let mut next = vec![C0; v.len()];
    for (a, m) in first.ops().iter().enumerate() {
        m.apply_into(v, &mut next);
        alphas.push(a);
        descend(rest, &next, alphas, leaf);
        alphas.pop();
    }
}

/// `Σ_Γ P(Γ) |Ψ_Γ(t_k)><Ψ_Γ(t_k)|` after the first `k` channels of `seq`,
/// summed over every outcome prefix.
pub fn enumerated_average_state(rho_s: &DensityOp, seq: &[KrausSet], k: usize) -> Result<CMatrix> {
    let d = rho_s.dim();
    let initial = MeasurementBasis::of_state(rho_s);
    let mut acc = CMatrix::zeros(d, d);
    let mut alphas = Vec::new();
    for (p, ket) in initial.probs.iter().zip(&initial.kets) {
        if *p <= 0.0 {
            continue;
        }
        descend(&seq[..k], ket.amplitudes(), &mut alphas, &mut |_, v| {
            let psi = Ket::from_raw(v.to_vec());
            acc += &psi.projector().scale_real(*p);
        });
    }
    Ok(acc)
}

/// Runs `f(index, rng)` for every trajectory index on the current rayon
/// pool and returns the results in index order.
pub fn run_parallel<T, F>(n_traj: u64, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = traj_rng(master_seed, i);
            f(i, &mut rng)
        })
        .collect()
}
