//! Honeycomb potentials stored as sparse dual-lattice Fourier coefficients.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, DualIndex, Lattice2D, Vec2};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub real_valued: bool,
    pub even: bool,
    pub r_invariant: bool,
}

impl SymmetryReport {
    pub fn is_honeycomb(&self) -> bool {
        self.real_valued && self.even && self.r_invariant
    }
}

/// `V(x) = Σ c_(m,n) exp(i (m k1 + n k2)·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierPotential {
    coeffs: BTreeMap<DualIndex, Complex64>,
    /// Largest `max(|m|, |n|)` among stored indices.
    pub cutoff: i32,
    pub symmetry: SymmetryReport,
    /// Overall energy scale, used for relative tolerances.
    pub scale: f64,
}

impl FourierPotential {
    pub fn from_coefficients<I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (DualIndex, Complex64)>,
    {
        let mut coeffs = BTreeMap::new();
        for (idx, c) in rows {
            *coeffs.entry(idx).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let cutoff = coeffs.keys().map(|&(m, n)| m.abs().max(n.abs())).max().unwrap_or(0);
        let scale = coeffs.values().map(|c| c.norm()).sum::<f64>();
        let mut v = FourierPotential {
            coeffs,
            cutoff,
            symmetry: SymmetryReport { real_valued: true, even: true, r_invariant: true },
            scale,
        };
        v.symmetry = check_symmetries(&v);
        v
    }

    pub fn zero() -> Self {
        Self::from_coefficients(std::iter::empty())
    }

    /// Coefficient at `idx`, zero when absent.
    pub fn coeff(&self, idx: DualIndex) -> Complex64 {
        self.coeffs.get(&idx).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DualIndex, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Cell average `⨍_Ω V`.
    pub fn mean(&self) -> f64 {
        self.coeff((0, 0)).re
    }

    /// Point evaluation. Refuses non-real potentials.
    pub fn evaluate(&self, lat: &Lattice2D, x: Vec2) -> Result<f64> {
        if !self.symmetry.real_valued {
            return Err(Error::refused("evaluate: potential is not real-valued (coefficients lack conjugate partners)"));
        }
        let z = self.evaluate_complex(lat, x);
        let tol = 1e-10 * self.scale.max(1.0);
        if z.im.abs() > tol {
            return Err(Error::refused(format!("evaluate: imaginary residue {:.3e}", z.im)));
        }
        Ok(z.re)
    }

    pub fn evaluate_complex(&self, lat: &Lattice2D, x: Vec2) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(&idx, &c)| c * Complex64::from_polar(1.0, lattice::dot(lat.dual_vector(idx), x)))
            .sum()
    }
}

/// `V0·[cos(k1·x) + cos(k2·x) + cos((k1+k2)·x)]`: coefficient `V0/2` at
/// `±(1,0), ±(0,1), ±(1,1)`.
pub fn make_canonical_honeycomb(v0: f64) -> FourierPotential {
    let h = Complex64::new(v0 / 2.0, 0.0);
    let idx = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];
    if v0 == 0.0 {
        return FourierPotential::zero();
    }
    FourierPotential::from_coefficients(idx.into_iter().map(|i| (i, h)))
}

pub fn check_symmetries(v: &FourierPotential) -> SymmetryReport {
    let mut real_valued = true;
    let mut even = true;
    let mut r_invariant = true;
    for (&(m, n), &c) in v.coeffs.iter() {
        let partner = v.coeff((-m, -n));
        if (partner - c.conj()).norm() > SYMMETRY_TOL {
            real_valued = false;
        }
        if (partner - c).norm() > SYMMETRY_TOL {
            even = false;
        }
        if (v.coeff(lattice::rotate_index((m, n))) - c).norm() > SYMMETRY_TOL {
            r_invariant = false;
        }
    }
    SymmetryReport { real_valued, even, r_invariant }
}
