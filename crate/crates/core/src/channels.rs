//! Quantum channels as labelled Kraus sets.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    partial_trace_matrix, CMatrix, DensityOp, Ket, Subsystem, C0, STATE_TOL,
};

/// Completeness tolerance for Kraus sets that are exact by construction.
pub const EXACT_CPTP_TOL: f64 = 1e-10;

/// Environment eigenvalues at or below this are dropped from the outcome set.
pub const ENV_PROB_FLOOR: f64 = 1e-14;

/// Outcome identifier attached to a Kraus operator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Environment measured in `|φ_μ>` before and `|φ_ν>` after the interaction.
    Pair(usize, usize),
    NoJump,
    Jump(usize),
    /// Macroscopic outcome grouping several fine-grained pairs.
    Class(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Pair(mu, nu) => write!(f, "({mu},{nu})"),
            Label::NoJump => write!(f, "0"),
            Label::Jump(j) => write!(f, "J{j}"),
            Label::Class(a) => write!(f, "C{a}"),
        }
    }
}

/// One stochastic decomposition `Φ(ρ) = Σ_α M_α ρ M_α†`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KrausSet {
    dim: usize,
    labels: Vec<Label>,
    ops: Vec<CMatrix>,
    tol_cptp: f64,
}

impl KrausSet {
    /// Builds a set and checks `‖Σ M†M − 1‖_max ≤ tol_cptp`.
    pub fn new(ops: Vec<(Label, CMatrix)>, tol_cptp: f64) -> Result<Self> {
        let set = Self::new_unchecked(ops, tol_cptp)?;
        let defect = set.cptp_defect();
        if defect > tol_cptp {
            return Err(Error::CptpViolation {
                defect,
                tol: tol_cptp,
            });
        }
        Ok(set)
    }

    /// Builds a set validating shapes and labels only.
    pub fn new_unchecked(ops: Vec<(Label, CMatrix)>, tol_cptp: f64) -> Result<Self> {
        let Some(first) = ops.first() else {
            return Err(Error::Dimension("empty Kraus set".into()));
        };
        let dim = first.1.rows();
        let mut seen = HashSet::new();
        for (label, m) in &ops {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::Dimension(format!(
                    "Kraus operator {label} is {}x{}, expected {dim}x{dim}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !seen.insert(label.clone()) {
                return Err(Error::Partition(format!("duplicate label {label}")));
            }
        }
        let (labels, ops) = ops.into_iter().unzip();
        Ok(Self {
            dim,
            labels,
            ops,
            tol_cptp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn tol_cptp(&self) -> f64 {
        self.tol_cptp
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Label, &CMatrix)> {
        self.labels.iter().zip(&self.ops)
    }

    pub fn get(&self, label: &Label) -> Option<&CMatrix> {
        self.position(label).map(|i| &self.ops[i])
    }

    pub fn position(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `Σ M†M`.
    pub fn completeness(&self) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for m in &self.ops {
            acc += &(&m.adjoint() * m);
        }
        acc
    }

    pub fn cptp_defect(&self) -> f64 {
        self.completeness()
            .max_abs_diff(&CMatrix::identity(self.dim))
    }

    /// Average channel action on an operator.
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for m in &self.ops {
            out += &m.conjugate(rho)?;
        }
        Ok(out)
    }

    /// Selective action `M_α ρ M_α†` of one outcome.
    pub fn apply_outcome(&self, index: usize, rho: &CMatrix) -> Result<CMatrix> {
        self.ops[index].conjugate(rho)
    }
}

/// Stinespring dilation: joint unitary, environment state and final
/// environment measurement basis. The system is the leftmost tensor factor.
#[derive(Clone, Debug)]
pub struct Dilation {
    v: CMatrix,
    d_s: usize,
    d_e: usize,
    rho_e: DensityOp,
    q: Vec<f64>,
    in_basis: Vec<Ket>,
    out_basis: Vec<Ket>,
}

impl Dilation {
    pub fn new(v: CMatrix, d_s: usize, rho_e: DensityOp, out_basis: Vec<Ket>) -> Result<Self> {
        let d_e = rho_e.dim();
        if !v.is_square() || v.rows() != d_s * d_e {
            return Err(Error::Dimension(format!(
                "joint unitary is {}x{}, expected {}",
                v.rows(),
                v.cols(),
                d_s * d_e
            )));
        }
        let defect = v.unitarity_defect();
        if defect > 1e-10 {
            return Err(Error::Unitarity(defect));
        }
        check_orthonormal(&out_basis, d_e)?;
        let (q, in_basis) = rho_e.spectrum();
        Ok(Self {
            v,
            d_s,
            d_e,
            rho_e,
            q,
            in_basis,
            out_basis,
        })
    }

    /// Uses the eigenbasis of the evolved environment state
    /// `tr_S[V(ρ_S ⊗ ρ_E)V†]` as the final measurement basis.
    pub fn with_evolved_out_basis(v: CMatrix, rho_s: &DensityOp, rho_e: DensityOp) -> Result<Self> {
        let d_s = rho_s.dim();
        let provisional = Self::new(v, d_s, rho_e.clone(), rho_e.spectrum().1)?;
        let out_basis = provisional.evolved_env(rho_s)?.spectrum().1;
        Self::new(provisional.v, d_s, rho_e, out_basis)
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.v
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_s, self.d_e)
    }

    pub fn env_state(&self) -> &DensityOp {
        &self.rho_e
    }

    /// Eigenvalues `q_μ` of the environment state, ascending.
    pub fn env_probs(&self) -> &[f64] {
        &self.q
    }

    pub fn in_basis(&self) -> &[Ket] {
        &self.in_basis
    }

    pub fn out_basis(&self) -> &[Ket] {
        &self.out_basis
    }

    fn joint_output(&self, rho_s: &CMatrix) -> Result<CMatrix> {
        let joint = rho_s.kron(self.rho_e.matrix());
        self.v.conjugate(&joint)
    }

    /// `tr_E[V(ρ_S ⊗ ρ_E)V†]` evaluated on the joint space.
    pub fn channel(&self, rho_s: &CMatrix) -> Result<CMatrix> {
        partial_trace_matrix(&self.joint_output(rho_s)?, (self.d_s, self.d_e), Subsystem::System)
    }

    /// `tr_S[V(ρ_S ⊗ ρ_E)V†]`.
    pub fn evolved_env(&self, rho_s: &DensityOp) -> Result<DensityOp> {
        let m = partial_trace_matrix(
            &self.joint_output(rho_s.matrix())?,
            (self.d_s, self.d_e),
            Subsystem::Environment,
        )?;
        DensityOp::from_matrix_symmetrized(&m, STATE_TOL)
    }

    /// Populations `q'_ν` of the evolved environment in the output basis.
    pub fn out_probs(&self, rho_s: &DensityOp) -> Result<Vec<f64>> {
        Ok(self.evolved_env(rho_s)?.populations(&self.out_basis))
    }
}

fn check_orthonormal(basis: &[Ket], dim: usize) -> Result<()> {
    if basis.len() != dim || basis.iter().any(|b| b.dim() != dim) {
        return Err(Error::Dimension(format!(
            "measurement basis needs {dim} vectors of dimension {dim}"
        )));
    }
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (a.inner(b) - target).norm() > 1e-10 {
                return Err(Error::InvalidState("measurement basis is not orthonormal".into()));
            }
        }
    }
    Ok(())
}

/// `M_{μν} = √q_μ <φ_ν|V|φ_μ>` for every `μ` with `q_μ > 0` and every `ν`.
///
/// Environment eigenvectors with vanishing weight never occur in the forward
/// process and are left out of the label set.
pub fn kraus_from_dilation(d: &Dilation) -> Result<KrausSet> {
    let (ds, de) = d.dims();
    let mut ops = Vec::with_capacity(de * de);
    for (mu, (phi_mu, &q_mu)) in d.in_basis.iter().zip(&d.q).enumerate() {
        if q_mu <= ENV_PROB_FLOOR {
            continue;
        }
        let amp = q_mu.sqrt();
        for (nu, phi_nu) in d.out_basis.iter().enumerate() {
            let mut m = CMatrix::zeros(ds, ds);
            for i in 0..ds {
                for j in 0..ds {
                    let mut acc = C0;
                    for a in 0..de {
                        let bra = phi_nu[a].conj();
                        if bra == C0 {
                            continue;
                        }
                        for b in 0..de {
                            acc += bra * d.v[(i * de + a, j * de + b)] * phi_mu[b];
                        }
                    }
                    m[(i, j)] = acc * amp;
                }
            }
            ops.push((Label::Pair(mu, nu), m));
        }
    }
    KrausSet::new(ops, EXACT_CPTP_TOL)
}

/// Time-reversed set `M̃_α = √(q_bwd(α)/q_fwd(α)) M_α†`.
pub fn reverse_kraus(
    k: &KrausSet,
    q_fwd: impl Fn(&Label) -> f64,
    q_bwd: impl Fn(&Label) -> f64,
) -> Result<KrausSet> {
    let mut ops = Vec::with_capacity(k.len());
    for (label, m) in k.iter() {
        let qf = q_fwd(label);
        if !(qf > 0.0) {
            return Err(Error::DivisionByZeroOutcome(label.to_string()));
        }
        let qb = q_bwd(label);
        if !(qb >= 0.0) || !qb.is_finite() {
            return Err(Error::Parameter(format!("reverse weight {qb} for outcome {label}")));
        }
        ops.push((label.clone(), m.adjoint().scale_real((qb / qf).sqrt())));
    }
    KrausSet::new(ops, k.tol_cptp())
}

/// Macroscopic outcome made of several fine-grained labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeClass {
    pub label: Label,
    pub members: Vec<Label>,
}

impl OutcomeClass {
    pub fn new(label: Label, members: Vec<Label>) -> Self {
        Self { label, members }
    }
}

/// Weights of one macroscopic outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub label: Label,
    /// `q_α = Σ tr[M†M]` over the class.
    pub q: f64,
    /// `q̃_α = Σ (q'_ν/q_μ) tr[M†M]` over the class.
    pub q_tilde: f64,
}

fn check_partition(k: &KrausSet, partition: &[OutcomeClass]) -> Result<Vec<Vec<usize>>> {
    let mut used = vec![false; k.len()];
    let mut classes = Vec::with_capacity(partition.len());
    let mut names = HashSet::new();
    for class in partition {
        if !names.insert(class.label.clone()) {
            return Err(Error::Partition(format!("duplicate class {}", class.label)));
        }
        if class.members.is_empty() {
            return Err(Error::Partition(format!("class {} is empty", class.label)));
        }
        let mut idx = Vec::with_capacity(class.members.len());
        for member in &class.members {
            let i = k
                .position(member)
                .ok_or_else(|| Error::Partition(format!("unknown label {member}")))?;
            if used[i] {
                return Err(Error::Partition(format!("label {member} appears twice")));
            }
            used[i] = true;
            idx.push(i);
        }
        classes.push(idx);
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::Partition(format!("label {} is not covered", k.labels()[i])));
    }
    Ok(classes)
}

fn weight(m: &CMatrix) -> f64 {
    m.hs_inner(m).re
}

/// Groups Kraus operators into macroscopic outcomes,
/// `M_α = √q_α M_ref / √tr[M_ref†M_ref]` with `q_α = Σ tr[M†M]`.
///
/// Members of a class must be proportional to each other up to a complex
/// factor, within `tol` relative to their own size. The member with the
/// largest trace weight is the reference.
pub fn coarse_grain(k: &KrausSet, partition: &[OutcomeClass], tol: f64) -> Result<KrausSet> {
    let classes = check_partition(k, partition)?;
    let mut ops = Vec::with_capacity(classes.len());
    for (class, idx) in partition.iter().zip(&classes) {
        let (m_ref, w_ref) = class_reference(k, class, idx, tol)?;
        let q: f64 = idx.iter().map(|&i| weight(&k.ops()[i])).sum();
        let m = if w_ref > 0.0 {
            m_ref.scale_real((q / w_ref).sqrt())
        } else {
            CMatrix::zeros(k.dim(), k.dim())
        };
        ops.push((class.label.clone(), m));
    }
    KrausSet::new(ops, k.tol_cptp())
}

fn class_reference(
    k: &KrausSet,
    class: &OutcomeClass,
    idx: &[usize],
    tol: f64,
) -> Result<(CMatrix, f64)> {
    let weights: Vec<f64> = idx.iter().map(|&i| weight(&k.ops()[i])).collect();
    let r = (0..idx.len())
        .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
        .expect("non-empty class");
    let m_ref = &k.ops()[idx[r]];
    let w_ref = weights[r];
    if w_ref == 0.0 {
        return Ok((m_ref.clone(), 0.0));
    }
    for (&i, &w) in idx.iter().zip(&weights) {
        let m = &k.ops()[i];
        let coef = m_ref.hs_inner(m) / w_ref;
        let defect = m.max_abs_diff(&m_ref.scale(coef));
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        if w > 0.0 && defect > tol * scale {
            return Err(Error::NotCoarseGrainable {
                label: class.label.to_string(),
                defect: defect / scale,
            });
        }
    }
    Ok((m_ref.clone(), w_ref))
}

/// Forward and reverse weights `q_α`, `q̃_α` of each class, where
/// `ratio(label)` returns `q'_ν/q_μ` for a fine-grained label.
pub fn class_weights(
    k: &KrausSet,
    partition: &[OutcomeClass],
    ratio: impl Fn(&Label) -> f64,
) -> Result<Vec<ClassWeights>> {
    let classes = check_partition(k, partition)?;
    Ok(partition
        .iter()
        .zip(&classes)
        .map(|(class, idx)| {
            let mut q = 0.0;
            let mut q_tilde = 0.0;
            for &i in idx {
                let w = weight(&k.ops()[i]);
                q += w;
                q_tilde += ratio(&k.labels()[i]) * w;
            }
            ClassWeights {
                label: class.label.clone(),
                q,
                q_tilde,
            }
        })
        .collect())
}

/// Reverse Kraus operator of a coarse-grained class,
/// `M̃_α = √q̃_α M_ref† / √tr[M_ref†M_ref]`.
pub fn reverse_class_operator(m_alpha: &CMatrix, weights: &ClassWeights) -> CMatrix {
    // M_α already carries √q_α / √tr[M_ref†M_ref] relative to M_ref.
    if weights.q == 0.0 {
        return CMatrix::zeros(m_alpha.rows(), m_alpha.cols());
    }
    m_alpha.adjoint().scale_real((weights.q_tilde / weights.q).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli};

    #[test]
    fn identity_dilation_with_pure_environment() {
        let rho_e = DensityOp::from_ket(&Ket::basis(2, 0));
        let d = Dilation::new(CMatrix::identity(4), 2, rho_e, vec![Ket::basis(2, 0), Ket::basis(2, 1)])
            .unwrap();
        let k = kraus_from_dilation(&d).unwrap();
        let nonzero: Vec<_> = k.iter().filter(|(_, m)| m.max_abs() > 1e-14).collect();
        assert_eq!(nonzero.len(), 1);
        assert!(nonzero[0].1.max_abs_diff(&CMatrix::identity(2)) < 1e-14);
    }

    #[test]
    fn swap_dilation_resets_the_system() {
        let rho_e = DensityOp::from_ket(&Ket::basis(2, 0));
        let d = Dilation::new(pauli::swap(), 2, rho_e, vec![Ket::basis(2, 0), Ket::basis(2, 1)]).unwrap();
        let k = kraus_from_dilation(&d).unwrap();
        let rho = CMatrix::from_rows(&[&[c(0.3, 0.0), c(0.1, 0.2)], &[c(0.1, -0.2), c(0.7, 0.0)]]).unwrap();
        let out = k.apply(&rho).unwrap();
        let target = CMatrix::from_real_diag(&[1.0, 0.0]);
        assert!(out.max_abs_diff(&target) < 1e-14);
    }

    #[test]
    fn reversal_of_unitary_channel_inverts_it() {
        let u = crate::linalg::unitary_evolution(&pauli::sigma_x(), 0.37).unwrap();
        let k = KrausSet::new(vec![(Label::NoJump, u)], 1e-12).unwrap();
        let r = reverse_kraus(&k, |_| 1.0, |_| 1.0).unwrap();
        let rho = CMatrix::from_real_diag(&[0.8, 0.2]);
        let back = r.apply(&k.apply(&rho).unwrap()).unwrap();
        assert!(back.max_abs_diff(&rho) < 1e-14);
    }

    #[test]
    fn zero_forward_weight_cannot_be_reversed() {
        let k = KrausSet::new(vec![(Label::NoJump, CMatrix::identity(2))], 1e-12).unwrap();
        assert!(matches!(
            reverse_kraus(&k, |_| 0.0, |_| 1.0),
            Err(Error::DivisionByZeroOutcome(_))
        ));
    }

    #[test]
    fn singleton_classes_keep_operators() {
        let g = 0.1_f64;
        let k = KrausSet::new(
            vec![
                (Label::NoJump, CMatrix::from_real_diag(&[(1.0 - g).sqrt(), 1.0])),
                (Label::Jump(0), pauli::sigma_minus().scale_real(g.sqrt())),
            ],
            1e-12,
        )
        .unwrap();
        let part = vec![
            OutcomeClass::new(Label::Class(0), vec![Label::NoJump]),
            OutcomeClass::new(Label::Class(1), vec![Label::Jump(0)]),
        ];
        let cg = coarse_grain(&k, &part, 1e-8).unwrap();
        for (a, b) in cg.ops().iter().zip(k.ops()) {
            assert!(a.max_abs_diff(b) < 1e-14);
        }
    }

    #[test]
    fn non_proportional_class_is_rejected() {
        let k = KrausSet::new(
            vec![
                (Label::Jump(0), CMatrix::from_real_diag(&[1.0, 0.0])),
                (Label::Jump(1), CMatrix::from_real_diag(&[0.0, 1.0])),
            ],
            1e-12,
        )
        .unwrap();
        let part = vec![OutcomeClass::new(Label::Class(0), vec![Label::Jump(0), Label::Jump(1)])];
        assert!(matches!(
            coarse_grain(&k, &part, 1e-8),
            Err(Error::NotCoarseGrainable { .. })
        ));
        let bad = vec![OutcomeClass::new(Label::Class(0), vec![Label::Jump(0)])];
        assert!(matches!(coarse_grain(&k, &bad, 1e-8), Err(Error::Partition(_))));
    }

    #[test]
    fn proportional_members_up_to_phase_merge() {
        let base = pauli::sigma_minus();
        let k = KrausSet::new(
            vec![
                (Label::Jump(0), base.scale(c(0.0, 0.6))),
                (Label::Jump(1), base.scale_real(0.8)),
                (Label::NoJump, CMatrix::from_real_diag(&[0.0, 1.0])),
            ],
            1e-12,
        )
        .unwrap();
        let part = vec![
            OutcomeClass::new(Label::Class(0), vec![Label::Jump(0), Label::Jump(1)]),
            OutcomeClass::new(Label::Class(1), vec![Label::NoJump]),
        ];
        let cg = coarse_grain(&k, &part, 1e-8).unwrap();
        let rho = CMatrix::from_rows(&[&[c(0.5, 0.0), c(0.2, 0.1)], &[c(0.2, -0.1), c(0.5, 0.0)]]).unwrap();
        assert!(cg.apply(&rho).unwrap().max_abs_diff(&k.apply(&rho).unwrap()) < 1e-14);
        assert!((cg.ops()[0].max_abs() - 1.0).abs() < 1e-14);
    }
}
