//! Dense complex linear algebra for small Hilbert spaces.

mod density;
mod eigen;
mod ket;
mod matrix;

pub use density::{
    partial_trace, partial_trace_matrix, rel_entropy, shannon_entropy, thermal_state,
    trace_distance, vn_entropy, vn_entropy_matrix, DensityOp, Subsystem, ENTROPY_FLOOR, STATE_TOL,
};
pub use eigen::{eig_hermitian, hermitian_function, unitary_evolution, HermitianEigen, DEGENERACY_TOL};
pub use ket::{Ket, NORM_TOL};
pub use matrix::CMatrix;

pub use num_complex::Complex64;

pub const C0: Complex64 = Complex64::new(0.0, 0.0);
pub const C1: Complex64 = Complex64::new(1.0, 0.0);
pub const CI: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pauli matrices and qubit ladder operators in the basis `(|e>, |g>)`.
pub mod pauli {
    use super::{c, CMatrix};

    pub fn sigma_x() -> CMatrix {
        CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    pub fn sigma_y() -> CMatrix {
        CMatrix::from_rows(&[&[c(0.0, 0.0), c(0.0, -1.0)], &[c(0.0, 1.0), c(0.0, 0.0)]]).unwrap()
    }

    pub fn sigma_z() -> CMatrix {
        CMatrix::from_real_diag(&[1.0, -1.0])
    }

    /// `σ- = |g><e|`.
    pub fn sigma_minus() -> CMatrix {
        CMatrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]).unwrap()
    }

    /// `σ+ = |e><g|`.
    pub fn sigma_plus() -> CMatrix {
        CMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap()
    }

    pub fn swap() -> CMatrix {
        CMatrix::from_real_rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap()
    }
}
