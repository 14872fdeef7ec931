use std::ops::Index;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CMatrix, C0, C1};
use crate::error::{Error, Result};

/// Tolerance on the unit norm of a normalized ket.
pub const NORM_TOL: f64 = 1e-10;

/// Pure state vector. Kets built through [`Ket::new`] or [`Ket::normalized`]
/// have unit Euclidean norm; [`Ket::from_raw`] is reserved for intermediate,
/// unnormalized vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ket {
    amps: Vec<Complex64>,
}

impl Ket {
    /// Validates that `amps` already has unit norm.
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::Dimension("empty ket".into()));
        }
        let k = Self { amps };
        let n = k.norm();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("ket norm {n}")));
        }
        Ok(k)
    }

    /// Normalizes `amps`; fails on a zero vector.
    pub fn normalized(amps: Vec<Complex64>) -> Result<Self> {
        let mut k = Self::from_raw(amps);
        let n = k.norm();
        if k.amps.is_empty() || !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        k.scale_in_place(1.0 / n);
        Ok(k)
    }

    pub fn from_raw(amps: Vec<Complex64>) -> Self {
        Self { amps }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = vec![C0; dim];
        amps[index] = C1;
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for z in &mut self.amps {
            *z *= s;
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Ket) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|<self|other>|²`.
    pub fn overlap_sqr(&self, other: &Ket) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::outer(self, self)
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ket { amps }
    }

    /// Multiplies by the phase that makes the first non-negligible component
    /// real and positive.
    pub fn fix_phase(&mut self) {
        if let Some(z) = self.amps.iter().find(|z| z.norm() > 1e-12).copied() {
            let phase = z.conj() / z.norm();
            for a in &mut self.amps {
                *a *= phase;
            }
        }
    }
}

impl Index<usize> for Ket {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.amps[i]
    }
}
