//! Equilateral triangular lattice, its dual, and the 2π/3 rotation that
//! defines honeycomb symmetry.
//!
//! Dual-lattice points are addressed by integer pairs `(m, n)` meaning
//! `m·k1 + n·k2`. Rotations act on those pairs through exact integer maps so
//! that symmetry checks never go through floating point.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec2 = [f64; 2];

/// Integer coordinates of a dual-lattice vector `m·k1 + n·k2`.
pub type DualIndex = (i32, i32);

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

/// Rotation angle of `R*`. Negative: `R*` turns clockwise by 2π/3, so that
/// `R[f](x) = f(R* x)`.
pub const ROTATION_ANGLE: f64 = -2.0 * PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice2D {
    pub v1: Vec2,
    pub v2: Vec2,
    pub k1: Vec2,
    pub k2: Vec2,
    pub cell_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighSymmetryPoints {
    pub k: Vec2,
    pub k_prime: Vec2,
}

/// The triangular lattice `Λ = Z v1 ⊕ Z v2` with
/// `v1 = (√3/2, 1/2)`, `v2 = (√3/2, −1/2)` and its dual `k1, k2`.
pub fn make_honeycomb_lattice() -> Lattice2D {
    let s3 = 3f64.sqrt();
    let v1 = [s3 / 2.0, 0.5];
    let v2 = [s3 / 2.0, -0.5];
    let c = 4.0 * PI / s3;
    let k1 = [c * 0.5, c * s3 / 2.0];
    let k2 = [c * 0.5, -c * s3 / 2.0];
    let cell_area = (v1[0] * v2[1] - v1[1] * v2[0]).abs();
    Lattice2D { v1, v2, k1, k2, cell_area }
}

impl Default for Lattice2D {
    fn default() -> Self {
        make_honeycomb_lattice()
    }
}

impl Lattice2D {
    /// `max_{m,n} |k_m · v_n − 2π δ_mn|`.
    pub fn duality_defect(&self) -> f64 {
        let ks = [self.k1, self.k2];
        let vs = [self.v1, self.v2];
        let mut worst: f64 = 0.0;
        for (m, k) in ks.iter().enumerate() {
            for (n, v) in vs.iter().enumerate() {
                let target = if m == n { 2.0 * PI } else { 0.0 };
                worst = worst.max((dot(*k, *v) - target).abs());
            }
        }
        worst
    }

    pub fn dual_vector(&self, idx: DualIndex) -> Vec2 {
        let (m, n) = (idx.0 as f64, idx.1 as f64);
        [m * self.k1[0] + n * self.k2[0], m * self.k1[1] + n * self.k2[1]]
    }

    pub fn direct_vector(&self, a: f64, b: f64) -> Vec2 {
        [a * self.v1[0] + b * self.v2[0], a * self.v1[1] + b * self.v2[1]]
    }

    /// Coordinates `(s, t)` with `k = s·k1 + t·k2`.
    ///
    /// Uses `k·v_n = 2π·coefficient_n`.
    pub fn dual_coords(&self, k: Vec2) -> (f64, f64) {
        (dot(k, self.v1) / (2.0 * PI), dot(k, self.v2) / (2.0 * PI))
    }

    /// Coordinates `(a, b)` with `x = a·v1 + b·v2`.
    pub fn direct_coords(&self, x: Vec2) -> (f64, f64) {
        (dot(x, self.k1) / (2.0 * PI), dot(x, self.k2) / (2.0 * PI))
    }

    /// `K = (k1 − k2)/3` and `K' = −K`.
    pub fn high_symmetry_points(&self) -> HighSymmetryPoints {
        let k = scale(1.0 / 3.0, sub(self.k1, self.k2));
        HighSymmetryPoints { k, k_prime: [-k[0], -k[1]] }
    }

    /// Reduce into the parallelogram `{s k1 + t k2 : s, t ∈ [0, 1)}`.
    pub fn reduce_to_cell(&self, k: Vec2) -> Vec2 {
        let (s, t) = self.dual_coords(k);
        let s = wrap_unit(s);
        let t = wrap_unit(t);
        add(scale(s, self.k1), scale(t, self.k2))
    }

    /// True when `a − b` is an integer combination of `k1, k2` within `tol`
    /// (measured in dual coordinates).
    pub fn congruent(&self, a: Vec2, b: Vec2, tol: f64) -> bool {
        let (s, t) = self.dual_coords(sub(a, b));
        (s - s.round()).abs() <= tol && (t - t.round()).abs() <= tol
    }
}

/// Fractional part mapped to `[0, 1)`; values within a few ulps of 1 snap to 0
/// so the reduction is idempotent.
fn wrap_unit(s: f64) -> f64 {
    let mut f = s - s.floor();
    if f >= 1.0 - 1e-13 {
        f = 0.0;
    }
    if f.abs() < 1e-13 {
        f = 0.0;
    }
    f
}

/// `R* p`: clockwise rotation by 2π/3.
pub fn rotate_r(p: Vec2) -> Vec2 {
    let (s, c) = ROTATION_ANGLE.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// `R*` acting on dual indices: `k1 → k2`, `k2 → −(k1 + k2)`.
pub fn rotate_index(idx: DualIndex) -> DualIndex {
    let (m, n) = idx;
    (-n, m - n)
}

/// Inverse of [`rotate_index`] (counter-clockwise by 2π/3).
pub fn rotate_index_inv(idx: DualIndex) -> DualIndex {
    let (m, n) = idx;
    (n - m, -m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_vectors() {
        let l = make_honeycomb_lattice();
        let s3 = 3f64.sqrt();
        assert_eq!(l.v1, [s3 / 2.0, 0.5]);
        assert_eq!(l.v2, [s3 / 2.0, -0.5]);
        assert!((dot(l.k1, l.v2)).abs() < 1e-12);
        assert!((dot(l.k1, l.v1) - 2.0 * PI).abs() < 1e-12);
        assert!(l.duality_defect() <= 1e-12);
        assert!((l.cell_area - s3 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn k_point() {
        let l = make_honeycomb_lattice();
        let hs = l.high_symmetry_points();
        assert!(hs.k[0].abs() < 1e-12);
        assert!((hs.k[1] - 4.0 * PI / 3.0).abs() < 1e-12);
        assert_eq!(hs.k_prime, [-hs.k[0], -hs.k[1]]);
    }

    #[test]
    fn rotation_examples() {
        let r = rotate_r([1.0, 0.0]);
        assert!((r[0] + 0.5).abs() < 1e-12);
        assert!((r[1] + 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(rotate_r([0.0, 0.0]), [0.0, 0.0]);
        let l = make_honeycomb_lattice();
        let k = l.high_symmetry_points().k;
        assert!(l.congruent(rotate_r(k), k, 1e-12));
    }

    #[test]
    fn index_rotation_matches_geometry() {
        let l = make_honeycomb_lattice();
        for m in -3..=3 {
            for n in -3..=3 {
                let g = l.dual_vector((m, n));
                let rg = l.dual_vector(rotate_index((m, n)));
                let d = sub(rotate_r(g), rg);
                assert!(norm(d) < 1e-11);
                assert_eq!(rotate_index_inv(rotate_index((m, n))), (m, n));
            }
        }
    }

    #[test]
    fn reduction_examples() {
        let l = make_honeycomb_lattice();
        assert!(norm(l.reduce_to_cell(l.k1)) < 1e-12);
        assert_eq!(l.reduce_to_cell([0.0, 0.0]), [0.0, 0.0]);
        let k = l.high_symmetry_points().k;
        let shifted = add(k, sub(scale(7.0, l.k1), scale(3.0, l.k2)));
        let rk = l.reduce_to_cell(k);
        let rs = l.reduce_to_cell(shifted);
        assert!(norm(sub(rk, rs)) < 1e-11);
    }

    /// Brute-force oracle: search integer shifts for the representative
    /// inside the half-open parallelogram.
    #[test]
    fn reduction_matches_brute_force() {
        let l = make_honeycomb_lattice();
        let k = l.high_symmetry_points().k;
        let target = add(k, sub(scale(7.0, l.k1), scale(3.0, l.k2)));
        let mut found = None;
        for a in -20..=20 {
            for b in -20..=20 {
                let cand = add(target, l.dual_vector((a, b)));
                let (s, t) = l.dual_coords(cand);
                if (-1e-12..1.0 - 1e-12).contains(&s) && (-1e-12..1.0 - 1e-12).contains(&t) {
                    found = Some(cand);
                }
            }
        }
        let brute = found.expect("representative exists");
        assert!(norm(sub(brute, l.reduce_to_cell(target))) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triple_rotation_is_identity(x in -50.0f64..50.0, y in -50.0f64..50.0) {
                let p = rotate_r(rotate_r(rotate_r([x, y])));
                prop_assert!((p[0] - x).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())));
                prop_assert!((p[1] - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())));
            }

            #[test]
            fn reduction_is_shift_invariant(x in -20.0f64..20.0, y in -20.0f64..20.0,
                                            a in -10i32..10, b in -10i32..10) {
                let l = make_honeycomb_lattice();
                let k = [x, y];
                let shifted = add(k, l.dual_vector((a, b)));
                let r1 = l.reduce_to_cell(k);
                let r2 = l.reduce_to_cell(shifted);
                // both representatives must agree modulo the lattice and,
                // away from the cell boundary, exactly
                prop_assert!(l.congruent(r1, r2, 1e-9));
                let (s, t) = l.dual_coords(r1);
                if s > 1e-9 && s < 1.0 - 1e-9 && t > 1e-9 && t < 1.0 - 1e-9 {
                    prop_assert!(norm(sub(r1, r2)) < 1e-9);
                }
                // idempotent
                prop_assert!(norm(sub(l.reduce_to_cell(r1), r1)) < 1e-12);
            }
        }
    }
}
