//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Dense 2×2 complex matrix, row-major.
pub type M2 = [[Complex64; 2]; 2];

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are orthonormal eigenvectors, ordered like `values`.
    pub vectors: CMat,
}

pub fn hermitian_defect(h: &CMat) -> f64 {
    (h - h.adjoint()).norm()
}

pub fn eigh(h: &CMat) -> Result<HermitianEigen> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::Eigensolver(format!("matrix is {}x{}, not square", n, h.ncols())));
    }
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: CMat::zeros(0, 0) });
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigensolver("matrix has non-finite entries".into()));
    }
    // symmetrize: the solver only reads one triangle
    let hs = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::try_new(hs, 1e-15, 0).ok_or_else(|| {
        let diag_max = (0..n).map(|i| h[(i, i)].re.abs()).fold(0.0, f64::max);
        Error::Eigensolver(format!(
            "QR iteration did not converge (dim {n}, max |diag| {diag_max:.3e}, Frobenius {:.3e})",
            h.norm()
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEigen { values, vectors })
}

/// `exp(−i·t·H)` for Hermitian `H`, through its eigendecomposition.
pub fn expm_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let e = eigh(h)?;
    Ok(apply_spectral(&e, |lam| Complex64::from_polar(1.0, -t * lam)))
}

pub fn apply_spectral<F: Fn(f64) -> Complex64>(e: &HermitianEigen, f: F) -> CMat {
    let n = e.values.len();
    let mut scaled = e.vectors.clone();
    for j in 0..n {
        let fj = f(e.values[j]);
        for i in 0..n {
            scaled[(i, j)] *= fj;
        }
    }
    &scaled * e.vectors.adjoint()
}

/// `‖U†U − I‖_F`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.ncols();
    (u.adjoint() * u - CMat::identity(n, n)).norm()
}

/// Eigen-decomposition of a unitary (hence normal) matrix.
#[derive(Debug, Clone)]
pub struct UnitaryEigen {
    /// Eigenvalues on the unit circle.
    pub values: Vec<Complex64>,
    /// Orthonormal eigenvectors (columns).
    pub vectors: CMat,
}

/// Diagonalizes a unitary matrix by diagonalizing the commuting Hermitian
/// combination `cos θ·(U+U†)/2 + sin θ·(U−U†)/2i`, then splitting any
/// remaining clusters with a second angle.
pub fn eig_unitary(u: &CMat) -> Result<UnitaryEigen> {
    let n = u.nrows();
    let vecs = split_normal(u, &CMat::identity(n, n), 0.618_033_988_749_895, 0)?;
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let v = vecs.column(j);
        let lam = (v.adjoint() * u * v)[(0, 0)];
        values.push(lam / lam.norm());
    }
    Ok(UnitaryEigen { values, vectors: vecs })
}

fn hermitian_part(u: &CMat, theta: f64) -> CMat {
    let ua = u.adjoint();
    let re = (u + &ua).scale(0.5);
    let im = (u - &ua) * c(0.0, -0.5);
    re.scale(theta.cos()) + im.scale(theta.sin())
}

/// Returns orthonormal columns `basis·W` diagonalizing `basis† U basis`.
fn split_normal(u: &CMat, basis: &CMat, theta: f64, depth: usize) -> Result<CMat> {
    let restricted = basis.adjoint() * u * basis;
    let k = hermitian_part(&restricted, theta);
    let e = eigh(&k)?;
    let m = e.values.len();
    let rotated = basis * &e.vectors;
    if depth >= 3 || m <= 1 {
        return Ok(rotated);
    }
    let mut out = rotated.clone();
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && (e.values[end] - e.values[end - 1]).abs() < 1e-7 {
            end += 1;
        }
        if end - start > 1 {
            let sub = rotated.columns(start, end - start).into_owned();
            let refined = split_normal(u, &sub, theta + 1.0 + 0.1 * depth as f64, depth + 1)?;
            out.columns_mut(start, end - start).copy_from(&refined);
        }
        start = end;
    }
    Ok(out)
}

/// Closed-form `exp(−i·t·H)` for a traceless Hermitian 2×2 matrix
/// `H = [[a, z], [z̄, −a]]`.
pub fn expm_traceless_2x2(h: &M2, t: f64) -> M2 {
    let a = h[0][0].re;
    let z = h[0][1];
    let r = (a * a + z.norm_sqr()).sqrt();
    let th = t * r;
    let cth = th.cos();
    let sinc = if r > 0.0 { th.sin() / r } else { t };
    let m = c(0.0, -sinc);
    [
        [c(cth, 0.0) + m * a, m * z],
        [m * z.conj(), c(cth, 0.0) - m * a],
    ]
}

pub fn mul2(a: &M2, b: &M2) -> M2 {
    let mut out = [[Complex64::default(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn identity2() -> M2 {
    [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]
}

pub fn frob2(a: &M2) -> f64 {
    a.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn sub2(a: &M2, b: &M2) -> M2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

pub fn adjoint2(a: &M2) -> M2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

pub fn det2(a: &M2) -> Complex64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let a = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&a + a.adjoint()).scale(0.5)
    }

    #[test]
    fn eigh_residual_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hermitian(40, &mut rng);
        let e = eigh(&h).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(unitarity_defect(&e.vectors) < 1e-10);
        for j in 0..40 {
            let v = e.vectors.column(j);
            let r = (&h * v - v * c(e.values[j], 0.0)).norm();
            assert!(r < 1e-10 * (1.0 + e.values[j].abs()));
        }
    }

    #[test]
    fn unitary_eigen_recovers_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_hermitian(30, &mut rng);
        let u = expm_hermitian(&h, 2.3).unwrap();
        assert!(unitarity_defect(&u) < 1e-11);
        let e = eig_unitary(&u).unwrap();
        assert!(unitarity_defect(&e.vectors) < 1e-9);
        for j in 0..30 {
            let v = e.vectors.column(j);
            let r = (&u * v - v * e.values[j]).norm();
            assert!(r < 1e-8, "residual {r}");
        }
    }

    #[test]
    fn unitary_eigen_handles_degeneracy() {
        let u = CMat::identity(4, 4);
        let e = eig_unitary(&u).unwrap();
        for v in e.values {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }
        // eigenvalues placed symmetrically about the first splitting angle
        let th = 0.618_033_988_749_895;
        let d = CMat::from_diagonal(&CVec::from_vec(vec![
            Complex64::from_polar(1.0, th + 0.4),
            Complex64::from_polar(1.0, th - 0.4),
            Complex64::from_polar(1.0, 2.0),
        ]));
        let e = eig_unitary(&d).unwrap();
        for j in 0..3 {
            let v = e.vectors.column(j);
            assert!((&d * v - v * e.values[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn closed_form_2x2_exponential() {
        let h = [[c(0.3, 0.0), c(0.2, -0.7)], [c(0.2, 0.7), c(-0.3, 0.0)]];
        let u = expm_traceless_2x2(&h, 1.7);
        let hm = CMat::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]);
        let ref_u = expm_hermitian(&hm, 1.7).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((u[i][j] - ref_u[(i, j)]).norm() < 1e-13);
            }
        }
        assert!((det2(&u) - c(1.0, 0.0)).norm() < 1e-14);
    }
}
