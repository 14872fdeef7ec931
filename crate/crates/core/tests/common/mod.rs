#![allow(dead_code)]

use proptest::prelude::*;
use qtherm::linalg::*;

pub fn matrix_from(dim: usize, parts: &[f64]) -> CMatrix {
    let data = (0..dim * dim).map(|k| c(parts[2 * k], parts[2 * k + 1])).collect();
    CMatrix::from_vec(dim, dim, data).unwrap()
}

pub fn hermitian_from(dim: usize, parts: &[f64]) -> CMatrix {
    matrix_from(dim, parts).hermitian_part()
}

pub fn unitary_from(dim: usize, parts: &[f64]) -> CMatrix {
    unitary_evolution(&hermitian_from(dim, parts), 1.0).unwrap()
}

/// `A A† / tr(A A†)` plus a small identity admixture, so the state has full rank.
pub fn density_from(dim: usize, parts: &[f64], mix: f64) -> DensityOp {
    let a = matrix_from(dim, parts);
    let aa = a.matmul(&a.adjoint()).unwrap();
    let tr = aa.trace().re;
    let m = &aa.scale_real((1.0 - mix) / tr) + &CMatrix::identity(dim).scale_real(mix / dim as f64);
    DensityOp::from_matrix_symmetrized(&m, 1e-9).unwrap()
}

pub fn ket_from(dim: usize, parts: &[f64]) -> Ket {
    Ket::normalized((0..dim).map(|k| c(parts[2 * k], parts[2 * k + 1])).collect()).unwrap()
}

pub fn parts(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}
