use serde::{Deserialize, Serialize};

use super::{c, eig_hermitian, CMatrix, HermitianEigen, Ket};
use crate::error::{Error, Result};

/// Tolerance on Hermiticity, unit trace and positivity of a density operator.
pub const STATE_TOL: f64 = 1e-10;

/// Probabilities below this are treated as zero in entropy sums.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// Hermitian, positive, unit-trace operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOp {
    mat: CMatrix,
}

impl DensityOp {
    pub fn new(mat: CMatrix) -> Result<Self> {
        Self::with_tolerance(mat, STATE_TOL)
    }

    /// Validates with a custom positivity / trace tolerance.
    pub fn with_tolerance(mat: CMatrix, tol: f64) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Dimension(format!(
                "density operator must be square, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let herm = mat.hermiticity_defect();
        if herm > tol {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:.3e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let eig = eig_hermitian(&mat)?;
        if eig.values[0] < -tol {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {:.3e}",
                eig.values[0]
            )));
        }
        Ok(Self { mat })
    }

    pub fn from_ket(psi: &Ket) -> Self {
        Self {
            mat: psi.projector(),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: CMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    /// `Σ p_i |i><i|` in the computational basis.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        Self::new(CMatrix::from_real_diag(populations))
    }

    /// `Σ p_i |v_i><v_i|` for an orthonormal family.
    pub fn from_ensemble(weights: &[f64], kets: &[Ket]) -> Result<Self> {
        if weights.len() != kets.len() || kets.is_empty() {
            return Err(Error::Dimension("ensemble weights/kets mismatch".into()));
        }
        let n = kets[0].dim();
        let mut m = CMatrix::zeros(n, n);
        for (&w, k) in weights.iter().zip(kets) {
            m += &k.projector().scale_real(w);
        }
        Self::new(m)
    }

    /// Symmetrizes, renormalizes the trace and validates positivity at `tol`.
    pub fn from_matrix_symmetrized(mat: &CMatrix, tol: f64) -> Result<Self> {
        let h = mat.hermitian_part();
        let tr = h.trace().re;
        if !tr.is_finite() || tr <= 0.0 {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        Self::with_tolerance(h.scale_real(1.0 / tr), tol)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn eigen(&self) -> HermitianEigen {
        eig_hermitian(&self.mat).expect("density operators are Hermitian")
    }

    /// Eigenvalues clipped to `[0, 1]` together with their eigenvectors.
    pub fn spectrum(&self) -> (Vec<f64>, Vec<Ket>) {
        let e = self.eigen();
        let p = e.values.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
        (p, e.vectors)
    }

    /// `<v|ρ|v>` for each vector of `basis`.
    pub fn populations(&self, basis: &[Ket]) -> Vec<f64> {
        basis
            .iter()
            .map(|v| self.mat.expectation(v).re.max(0.0))
            .collect()
    }

    pub fn expectation(&self, op: &CMatrix) -> f64 {
        self.mat.matmul(op).expect("dimension").trace().re
    }

    pub fn tensor(&self, other: &DensityOp) -> DensityOp {
        DensityOp {
            mat: self.mat.kron(&other.mat),
        }
    }

    /// Removes coherences in the given orthonormal basis.
    pub fn dephase(&self, basis: &[Ket]) -> DensityOp {
        let pops = self.populations(basis);
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (p, v) in pops.iter().zip(basis) {
            m += &v.projector().scale_real(*p);
        }
        DensityOp { mat: m }
    }
}

/// Which factor of a bipartite `system ⊗ environment` space to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    System,
    Environment,
}

/// Partial trace over one factor of `H_S ⊗ H_E` (system leftmost).
pub fn partial_trace_matrix(joint: &CMatrix, dims: (usize, usize), keep: Subsystem) -> Result<CMatrix> {
    let (ds, de) = dims;
    if !joint.is_square() || joint.rows() != ds * de {
        return Err(Error::Dimension(format!(
            "joint operator of size {}x{} does not match {ds}x{de}",
            joint.rows(),
            joint.cols()
        )));
    }
    Ok(match keep {
        Subsystem::System => {
            let mut out = CMatrix::zeros(ds, ds);
            for i in 0..ds {
                for j in 0..ds {
                    out[(i, j)] = (0..de).map(|a| joint[(i * de + a, j * de + a)]).sum();
                }
            }
            out
        }
        Subsystem::Environment => {
            let mut out = CMatrix::zeros(de, de);
            for a in 0..de {
                for b in 0..de {
                    out[(a, b)] = (0..ds).map(|i| joint[(i * de + a, i * de + b)]).sum();
                }
            }
            out
        }
    })
}

pub fn partial_trace(joint: &DensityOp, dims: (usize, usize), keep: Subsystem) -> Result<DensityOp> {
    let mat = partial_trace_matrix(joint.matrix(), dims, keep)?;
    DensityOp::from_matrix_symmetrized(&mat, STATE_TOL)
}

fn entropy_of_probs(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > ENTROPY_FLOOR)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Shannon entropy of a probability vector in nats, `0 ln 0 = 0`.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    entropy_of_probs(probs)
}

/// Von Neumann entropy `-tr ρ ln ρ` in nats.
pub fn vn_entropy(rho: &DensityOp) -> f64 {
    entropy_of_probs(&rho.spectrum().0)
}

/// Von Neumann entropy of a raw matrix, validating Hermiticity first.
pub fn vn_entropy_matrix(mat: &CMatrix) -> Result<f64> {
    let rho = DensityOp::new(mat.clone())?;
    Ok(vn_entropy(&rho))
}

/// Relative entropy `D[ρ‖σ] = tr ρ(ln ρ − ln σ)` in nats.
pub fn rel_entropy(rho: &DensityOp, sigma: &DensityOp) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Dimension(format!(
            "relative entropy between dims {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let (p, a) = rho.spectrum();
    let (q, b) = sigma.spectrum();
    let mut cross = 0.0;
    for (j, (&qj, bj)) in q.iter().zip(&b).enumerate() {
        let weight: f64 = p
            .iter()
            .zip(&a)
            .filter(|(&pi, _)| pi > ENTROPY_FLOOR)
            .map(|(&pi, ai)| pi * ai.overlap_sqr(bj))
            .sum();
        if weight <= ENTROPY_FLOOR {
            continue;
        }
        if qj <= ENTROPY_FLOOR {
            return Err(Error::Support(format!(
                "weight {weight:.3e} on null eigenvector {j} of sigma"
            )));
        }
        cross += weight * qj.ln();
    }
    let neg_s: f64 = p
        .iter()
        .filter(|&&x| x > ENTROPY_FLOOR)
        .map(|&x| x * x.ln())
        .sum();
    Ok((neg_s - cross).max(0.0))
}

/// Gibbs state `e^{-H/T}/Z` (units with `k_B = 1`).
pub fn thermal_state(h: &CMatrix, temperature: f64) -> Result<DensityOp> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    let eig = eig_hermitian(h)?;
    let e0 = eig.values[0];
    let weights: Vec<f64> = eig.values.iter().map(|&e| (-(e - e0) / temperature).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mat = eig.map(|lam| {
        let idx = eig.values.iter().position(|&v| v == lam).expect("own eigenvalue");
        c(weights[idx] / z, 0.0)
    });
    DensityOp::new(mat.hermitian_part())
}

/// Trace distance `½ ‖ρ − σ‖₁`.
pub fn trace_distance(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    let diff = rho - sigma;
    let eig = eig_hermitian(&diff.hermitian_part())?;
    Ok(0.5 * eig.values.iter().map(|x| x.abs()).sum::<f64>())
}
