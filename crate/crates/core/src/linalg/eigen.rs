use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{CMatrix, Ket, C0};
use crate::error::{Error, Result};

/// Eigenvalues closer than this are treated as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Ket>,
}

impl HermitianEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rebuilds `Σ f(λ_i) |v_i><v_i|`.
    pub fn map(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        for (&lam, v) in self.values.iter().zip(&self.vectors) {
            let w = f(lam);
            if w == C0 {
                continue;
            }
            for i in 0..n {
                let vi = v[i] * w;
                for j in 0..n {
                    out[(i, j)] += vi * v[j].conj();
                }
            }
        }
        out
    }
}

/// Hermitian eigensolver with a reproducible basis.
///
/// Eigenpairs are sorted by ascending eigenvalue. Inside a degenerate cluster
/// the basis is rebuilt by projecting the computational basis vectors in
/// order and orthonormalizing, then every eigenvector gets its first
/// non-negligible component made real positive.
pub fn eig_hermitian(h: &CMatrix) -> Result<HermitianEigen> {
    if !h.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition of a {}x{} matrix",
            h.rows(),
            h.cols()
        )));
    }
    let scale = h.max_abs().max(1.0);
    if h.hermiticity_defect() > 1e-10 * scale {
        return Err(Error::InvalidState(format!(
            "matrix is not Hermitian (defect {:.3e})",
            h.hermiticity_defect()
        )));
    }
    let n = h.rows();
    let herm = h.hermitian_part();
    let m = DMatrix::from_row_slice(n, n, herm.as_slice());
    let eig = m.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let raw: Vec<Ket> = order
        .iter()
        .map(|&k| Ket::from_raw(eig.eigenvectors.column(k).iter().copied().collect()))
        .collect();

    let mut vectors = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (values[end] - values[start]).abs() <= DEGENERACY_TOL * scale {
            end += 1;
        }
        if end - start == 1 {
            let mut v = raw[start].clone();
            let nv = v.norm();
            v.scale_in_place(1.0 / nv);
            v.fix_phase();
            vectors.push(v);
        } else {
            vectors.extend(canonical_subspace_basis(&raw[start..end], n));
        }
        start = end;
    }

    Ok(HermitianEigen { values, vectors })
}

fn canonical_subspace_basis(span: &[Ket], n: usize) -> Vec<Ket> {
    let k = span.len();
    let mut basis: Vec<Ket> = Vec::with_capacity(k);
    for i in 0..n {
        if basis.len() == k {
            break;
        }
        // P e_i
        let mut w: Vec<Complex64> = vec![C0; n];
        for v in span {
            let coef = v[i].conj();
            for (wj, &vj) in w.iter_mut().zip(v.amplitudes()) {
                *wj += vj * coef;
            }
        }
        let mut w = Ket::from_raw(w);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.inner(&w);
                for (wj, &bj) in w.amplitudes_mut().iter_mut().zip(b.amplitudes()) {
                    *wj -= bj * proj;
                }
            }
        }
        let nw = w.norm();
        if nw > 1e-6 {
            w.scale_in_place(1.0 / nw);
            w.fix_phase();
            basis.push(w);
        }
    }
    basis
}

/// `e^{-i H t}` for Hermitian `H`.
pub fn unitary_evolution(h: &CMatrix, t: f64) -> Result<CMatrix> {
    let eig = eig_hermitian(h)?;
    Ok(eig.map(|lam| Complex64::from_polar(1.0, -lam * t)))
}

/// Applies a real function to a Hermitian matrix through its spectrum.
pub fn hermitian_function(h: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let eig = eig_hermitian(h)?;
    Ok(eig.map(|lam| Complex64::new(f(lam), 0.0)))
}
