//! Plane-wave Bloch Hamiltonians `H(k)`, band structures, Dirac points and
//! the Fermi velocity.
//!
//! A Bloch function at quasi-momentum `k` is stored by its coefficients in
//! `exp(i(k + g)·x)`, `g` running over a finite set of dual-lattice vectors.
//! Inner products are normalized by the cell area, so coefficient vectors
//! that are orthonormal in `ℓ²` describe functions that are orthonormal in
//! `L²(Ω, dx/|Ω|)`.

use std::collections::HashMap;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt17;
use crate::lattice::{self, DualIndex, Lattice2D, Vec2};
use crate::linalg::{self, c, CMat, CVec};
use crate::potential::FourierPotential;

/// Truncated plane-wave basis `{g = m k1 + n k2 : |c + g| ≤ N_c |k1|}`
/// around a centering momentum `c` (the origin by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveBasis {
    pub cutoff_radius: u32,
    pub center: Vec2,
    pub index_list: Vec<DualIndex>,
    #[serde(skip)]
    lookup: HashMap<DualIndex, usize>,
}

impl PlaneWaveBasis {
    pub fn new(lat: &Lattice2D, cutoff_radius: u32) -> Self {
        Self::centered(lat, cutoff_radius, [0.0, 0.0])
    }

    /// Basis whose kinetic shells are centered on `center`. Centering on a
    /// rotation-fixed momentum such as `K` makes the truncated space exactly
    /// invariant under the honeycomb symmetries at that momentum.
    pub fn centered(lat: &Lattice2D, cutoff_radius: u32, center: Vec2) -> Self {
        let kmax = cutoff_radius as f64 * lattice::norm(lat.k1);
        let span = cutoff_radius as i32 + 2;
        let mut index_list = Vec::new();
        for m in -span..=span {
            for n in -span..=span {
                let q = lattice::add(center, lat.dual_vector((m, n)));
                if lattice::norm(q) <= kmax * (1.0 + 1e-12) {
                    index_list.push((m, n));
                }
            }
        }
        if !index_list.contains(&(0, 0)) {
            index_list.push((0, 0));
            index_list.sort();
        }
        let lookup = index_list.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        PlaneWaveBasis { cutoff_radius, center, index_list, lookup }
    }

    /// Basis with an explicit index set, e.g. the modes of a sampling grid.
    pub fn from_indices(center: Vec2, index_list: Vec<DualIndex>) -> Self {
        let lookup = index_list.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        PlaneWaveBasis { cutoff_radius: 0, center, index_list, lookup }
    }

    pub fn dim(&self) -> usize {
        self.index_list.len()
    }

    pub fn position(&self, g: DualIndex) -> Option<usize> {
        if self.lookup.is_empty() && !self.index_list.is_empty() {
            return self.index_list.iter().position(|&x| x == g);
        }
        self.lookup.get(&g).copied()
    }

    /// Largest `max(|m|, |n|)` in the basis.
    pub fn max_index(&self) -> i32 {
        self.index_list.iter().map(|&(m, n)| m.abs().max(n.abs())).max().unwrap_or(0)
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = self.index_list.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    }
}

/// `H(k) = |k + g|² δ_gg' + V̂(g − g')`.
pub fn assemble_hk(v: &FourierPotential, lat: &Lattice2D, k: Vec2, basis: &PlaneWaveBasis) -> CMat {
    let n = basis.dim();
    let v0 = v.coeff((0, 0));
    let mut h = CMat::zeros(n, n);
    for (i, &gi) in basis.index_list.iter().enumerate() {
        let q = lattice::add(k, lat.dual_vector(gi));
        h[(i, i)] = c(lattice::dot(q, q), 0.0) + v0;
    }
    for (&g, &vg) in v.iter() {
        if g == (0, 0) {
            continue;
        }
        for (j, &gj) in basis.index_list.iter().enumerate() {
            if let Some(i) = basis.position((gj.0 + g.0, gj.1 + g.1)) {
                h[(i, j)] += vg;
            }
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct BlochEigenSystem {
    pub k: Vec2,
    pub energies: Vec<f64>,
    /// `dim × n_bands`, orthonormal columns.
    pub vectors: CMat,
}

pub fn solve_bands(
    v: &FourierPotential,
    lat: &Lattice2D,
    k: Vec2,
    n_bands: usize,
    basis: &PlaneWaveBasis,
) -> Result<BlochEigenSystem> {
    if n_bands > basis.dim() {
        return Err(Error::refused(format!("n_bands = {n_bands} exceeds basis dimension {}", basis.dim())));
    }
    let h = assemble_hk(v, lat, k, basis);
    let e = linalg::eigh(&h)?;
    Ok(BlochEigenSystem {
        k,
        energies: e.values[..n_bands].to_vec(),
        vectors: e.vectors.columns(0, n_bands).into_owned(),
    })
}

/// Row of a band-structure table.
#[derive(Debug, Clone, Serialize)]
pub struct BandRow {
    pub arclength: f64,
    pub k: Vec2,
    pub energies: Vec<f64>,
}

/// Samples bands along a polyline of waypoints. Zero-length legs are skipped.
pub fn band_path(
    v: &FourierPotential,
    lat: &Lattice2D,
    waypoints: &[Vec2],
    samples_per_leg: usize,
    n_bands: usize,
    basis: &PlaneWaveBasis,
) -> Result<Vec<BandRow>> {
    if waypoints.len() < 2 {
        return Err(Error::refused("band_path needs at least two waypoints"));
    }
    if n_bands > basis.dim() {
        return Err(Error::refused(format!("n_bands = {n_bands} exceeds basis dimension {}", basis.dim())));
    }
    let samples_per_leg = samples_per_leg.max(1);
    let mut points: Vec<(f64, Vec2)> = Vec::new();
    let mut s0 = 0.0;
    for (leg, w) in waypoints.windows(2).enumerate() {
        let d = lattice::sub(w[1], w[0]);
        let len = lattice::norm(d);
        if len == 0.0 {
            continue;
        }
        let first = if points.is_empty() { 0 } else { 1 };
        let _ = leg;
        for i in first..=samples_per_leg {
            let t = i as f64 / samples_per_leg as f64;
            points.push((s0 + t * len, lattice::add(w[0], lattice::scale(t, d))));
        }
        s0 += len;
    }
    if points.is_empty() {
        points.push((0.0, waypoints[0]));
    }
    points
        .par_iter()
        .map(|&(s, k)| {
            let sys = solve_bands(v, lat, k, n_bands, basis)?;
            Ok(BandRow { arclength: s, k, energies: sys.energies })
        })
        .collect()
}

pub fn write_band_csv<W: Write>(rows: &[BandRow], mut out: W) -> std::io::Result<()> {
    let n = rows.first().map(|r| r.energies.len()).unwrap_or(0);
    write!(out, "arclength,kx,ky")?;
    for b in 1..=n {
        write!(out, ",E_{b}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{},{},{}", fmt17(r.arclength), fmt17(r.k[0]), fmt17(r.k[1]))?;
        for e in &r.energies {
            write!(out, ",{}", fmt17(*e))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiracOptions {
    pub degeneracy_tol: f64,
    pub v_min: f64,
    /// Only pairs among the lowest `max_band` bands are considered.
    pub max_band: usize,
}

impl Default for DiracOptions {
    fn default() -> Self {
        DiracOptions { degeneracy_tol: 1e-8, v_min: 1e-6, max_band: 24 }
    }
}

/// A Dirac point and its symmetry-adapted degenerate pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiracPointData {
    pub k_d: Vec2,
    /// One-based band indices `(b, b+1)`.
    pub band_pair: (usize, usize),
    pub e_d: f64,
    pub v_d: f64,
    pub phi1: Vec<Complex64>,
    pub phi2: Vec<Complex64>,
    pub degeneracy_residual: f64,
    /// Rotation eigenvalue of `phi1` (a primitive cube root of unity).
    pub tau: Complex64,
    /// Gap from the pair to the nearest other band at `k_d`.
    pub isolation: f64,
    pub basis: PlaneWaveBasis,
}

impl DiracPointData {
    pub fn phi1_vec(&self) -> CVec {
        CVec::from_vec(self.phi1.clone())
    }

    pub fn phi2_vec(&self) -> CVec {
        CVec::from_vec(self.phi2.clone())
    }

    /// The pair at `K' = −K` obtained from parity: `f(x) ↦ f(−x)` sends
    /// `exp(i(K+g)·x)` to `exp(i(−K−g)·x)`, i.e. index `g ↦ −g` around `−K`.
    pub fn parity_partner(&self, lat: &Lattice2D) -> DiracPointData {
        let idx: Vec<DualIndex> = self.basis.index_list.iter().map(|&(m, n)| (-m, -n)).collect();
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by_key(|&i| idx[i]);
        let k_d = [-self.k_d[0], -self.k_d[1]];
        let basis = PlaneWaveBasis::centered(lat, self.basis.cutoff_radius, [-self.basis.center[0], -self.basis.center[1]]);
        let permute = |v: &[Complex64]| -> Vec<Complex64> {
            let mut out = vec![Complex64::default(); basis.dim()];
            for &i in &order {
                if let Some(p) = basis.position(idx[i]) {
                    out[p] = v[i];
                }
            }
            out
        };
        DiracPointData {
            k_d,
            band_pair: self.band_pair,
            e_d: self.e_d,
            v_d: self.v_d,
            phi1: permute(&self.phi1),
            phi2: permute(&self.phi2),
            degeneracy_residual: self.degeneracy_residual,
            tau: self.tau,
            isolation: self.isolation,
            basis,
        }
    }
}

/// Dual index `s` with `R*⁻¹ k = k + s`, if `k` is rotation-fixed modulo `Λ*`.
fn rotation_shift(lat: &Lattice2D, k: Vec2) -> Option<DualIndex> {
    let rk = rotate_inv(k);
    let (s, t) = lat.dual_coords(lattice::sub(rk, k));
    if (s - s.round()).abs() > 1e-9 || (t - t.round()).abs() > 1e-9 {
        return None;
    }
    Some((s.round() as i32, t.round() as i32))
}

fn rotate_inv(p: Vec2) -> Vec2 {
    let (s, co) = (-lattice::ROTATION_ANGLE).sin_cos();
    [co * p[0] - s * p[1], s * p[0] + co * p[1]]
}

/// Coefficients of `R[f](x) = f(R* x)` for `f` at a rotation-fixed `k`.
/// Components leaving the truncated basis are dropped.
pub fn apply_rotation(lat: &Lattice2D, k: Vec2, basis: &PlaneWaveBasis, coeffs: &CVec) -> Result<CVec> {
    let shift = rotation_shift(lat, k)
        .ok_or_else(|| Error::refused("rotation action needs k fixed by R* modulo the dual lattice"))?;
    let mut out = CVec::zeros(basis.dim());
    for (i, &g) in basis.index_list.iter().enumerate() {
        let r = lattice::rotate_index_inv(g);
        let target = (r.0 + shift.0, r.1 + shift.1);
        if let Some(j) = basis.position(target) {
            out[j] += coeffs[i];
        }
    }
    Ok(out)
}

/// `⟨Φ_a, ∇Φ_b⟩` (cell-normalized) for coefficient vectors at `k`.
pub fn gradient_matrix_element(lat: &Lattice2D, k: Vec2, basis: &PlaneWaveBasis, a: &CVec, b: &CVec) -> [Complex64; 2] {
    let mut out = [Complex64::default(); 2];
    for (i, &g) in basis.index_list.iter().enumerate() {
        let q = lattice::add(k, lat.dual_vector(g));
        let w = a[i].conj() * b[i] * linalg::I;
        out[0] += w * q[0];
        out[1] += w * q[1];
    }
    out
}

/// Fermi-velocity data of a normalized pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FermiVelocity {
    pub v_d: f64,
    /// `⟨Φ1, −2i∇Φ2⟩`.
    pub vector: [Complex64; 2],
    /// `‖vector − v_D (1, i)‖`.
    pub form_defect: f64,
    /// `|⟨Φ1, ∇Φ1⟩|`.
    pub self_gradient_1: f64,
    /// `|⟨Φ2, ∇Φ2⟩|`.
    pub self_gradient_2: f64,
}

fn velocity_vector(lat: &Lattice2D, k: Vec2, basis: &PlaneWaveBasis, p1: &CVec, p2: &CVec) -> [Complex64; 2] {
    let g = gradient_matrix_element(lat, k, basis, p1, p2);
    [g[0] * c(0.0, -2.0), g[1] * c(0.0, -2.0)]
}

pub fn fermi_velocity_inner_product(d: &DiracPointData, lat: &Lattice2D) -> Result<FermiVelocity> {
    let p1 = d.phi1_vec();
    let p2 = d.phi2_vec();
    let w = velocity_vector(lat, d.k_d, &d.basis, &p1, &p2);
    let vd_c = (w[0] - linalg::I * w[1]) * 0.5;
    let v_d = vd_c.re;
    let form_defect = ((w[0] - c(v_d, 0.0)).norm_sqr() + (w[1] - c(0.0, v_d)).norm_sqr()).sqrt();
    let g11 = gradient_matrix_element(lat, d.k_d, &d.basis, &p1, &p1);
    let g22 = gradient_matrix_element(lat, d.k_d, &d.basis, &p2, &p2);
    let norm2 = |g: [Complex64; 2]| (g[0].norm_sqr() + g[1].norm_sqr()).sqrt();
    let fv = FermiVelocity {
        v_d,
        vector: w,
        form_defect,
        self_gradient_1: norm2(g11),
        self_gradient_2: norm2(g22),
    };
    if form_defect > 1e-6 * (1.0 + v_d.abs()) || vd_c.im.abs() > 1e-6 * (1.0 + v_d.abs()) || v_d < 0.0 {
        return Err(Error::Normalization(format!(
            "velocity vector ({:.6e}, {:.6e}) is not of the form v_D(1, i) (defect {:.3e})",
            w[0], w[1], form_defect
        )));
    }
    Ok(fv)
}

/// Symmetry-adapted basis of a two-dimensional eigenspace at a
/// rotation-fixed `k`. Returns `(phi1, phi2, tau)` or `None` when the space
/// does not split into the two primitive cube roots of unity.
fn normalize_pair(
    lat: &Lattice2D,
    k: Vec2,
    basis: &PlaneWaveBasis,
    u1: &CVec,
    u2: &CVec,
) -> Result<Option<(CVec, CVec, Complex64, f64)>> {
    let ru1 = apply_rotation(lat, k, basis, u1)?;
    let ru2 = apply_rotation(lat, k, basis, u2)?;
    let r = CMat::from_row_slice(
        2,
        2,
        &[u1.dotc(&ru1), u1.dotc(&ru2), u2.dotc(&ru1), u2.dotc(&ru2)],
    );
    let e = linalg::eig_unitary(&r)?;
    let tau = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    // pick the eigenvector for τ; the other one must be τ̄
    let (j1, j2) = if (e.values[0] - tau).norm() < (e.values[1] - tau).norm() { (0, 1) } else { (1, 0) };
    if (e.values[j1] - tau).norm() > 1e-6 || (e.values[j2] - tau.conj()).norm() > 1e-6 {
        return Ok(None);
    }
    let mut phi1 = u1 * e.vectors[(0, j1)] + u2 * e.vectors[(1, j1)];
    let nrm = phi1.norm();
    phi1.unscale_mut(nrm);
    // PC symmetry: f(x) ↦ conj(f(−x)) conjugates the coefficients
    let mut phi2 = phi1.map(|z| z.conj());
    let mut tau_1 = tau;
    let w = velocity_vector(lat, k, basis, &phi1, &phi2);
    let plus = (w[0] - linalg::I * w[1]).norm();
    let minus = (w[0] + linalg::I * w[1]).norm();
    if minus > plus {
        // vector ∝ (1, −i): the conjugate choice carries (1, i)
        std::mem::swap(&mut phi1, &mut phi2);
        tau_1 = tau.conj();
    }
    let w = velocity_vector(lat, k, basis, &phi1, &phi2);
    let vd_c = (w[0] - linalg::I * w[1]) * 0.5;
    // Φ1 → e^{iθ}Φ1, Φ2 → e^{−iθ}Φ2 multiplies the vector by e^{−2iθ}
    let theta = vd_c.arg() / 2.0;
    let ph = Complex64::from_polar(1.0, theta);
    phi1 *= ph;
    phi2 = phi1.map(|z| z.conj());
    Ok(Some((phi1, phi2, tau_1, vd_c.norm())))
}

/// Locates the lowest consecutive band pair degenerate at `k_guess` that
/// forms a cone with nonzero velocity, and builds the normalized pair.
pub fn find_dirac_point(
    v: &FourierPotential,
    lat: &Lattice2D,
    basis: &PlaneWaveBasis,
    k_guess: Vec2,
    opts: &DiracOptions,
) -> Result<DiracPointData> {
    if !v.symmetry.is_honeycomb() {
        return Err(Error::refused(format!("potential is not honeycomb-symmetric: {:?}", v.symmetry)));
    }
    if rotation_shift(lat, k_guess).is_none() {
        return Err(Error::refused("Dirac search momentum must be a rotation-fixed point (K or K')"));
    }
    let h = assemble_hk(v, lat, k_guess, basis);
    let e = linalg::eigh(&h)?;
    let nb = e.values.len().min(opts.max_band);
    let mut min_split = f64::INFINITY;
    let mut degenerate_but_flat = None;
    for b in 0..nb.saturating_sub(1) {
        let split = (e.values[b + 1] - e.values[b]).abs();
        min_split = min_split.min(split);
        if split > opts.degeneracy_tol {
            continue;
        }
        let below = if b > 0 { e.values[b] - e.values[b - 1] } else { f64::INFINITY };
        let above = if b + 2 < e.values.len() { e.values[b + 2] - e.values[b + 1] } else { f64::INFINITY };
        let isolation = below.min(above);
        if isolation <= 100.0 * opts.degeneracy_tol {
            // part of a higher multiplicity cluster, not a conical pair
            continue;
        }
        let u1 = e.vectors.column(b).into_owned();
        let u2 = e.vectors.column(b + 1).into_owned();
        let Some((phi1, phi2, tau, vd)) = normalize_pair(lat, k_guess, basis, &u1, &u2)? else {
            continue;
        };
        if vd < opts.v_min {
            degenerate_but_flat = Some(vd);
            continue;
        }
        let mut d = DiracPointData {
            k_d: k_guess,
            band_pair: (b + 1, b + 2),
            e_d: 0.5 * (e.values[b] + e.values[b + 1]),
            v_d: vd,
            phi1: phi1.iter().copied().collect(),
            phi2: phi2.iter().copied().collect(),
            degeneracy_residual: split,
            tau,
            isolation,
            basis: basis.clone(),
        };
        let fv = fermi_velocity_inner_product(&d, lat)?;
        d.v_d = fv.v_d;
        return Ok(d);
    }
    if let Some(vd) = degenerate_but_flat {
        return Err(Error::DegenerateCone { v_d: vd, v_min: opts.v_min });
    }
    Err(Error::NoDiracPoint { min_splitting: min_split, tolerance: opts.degeneracy_tol })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeFit {
    pub v_fit: f64,
    pub slope_plus: f64,
    pub slope_minus: f64,
    /// `max/min − 1` of the directional slopes at the smallest radius.
    pub isotropy_spread: f64,
    /// Same quantity for each radius, in the order given.
    pub spread_by_radius: Vec<f64>,
    pub warning: Option<String>,
}

/// Least-squares cone slope `|E_±(k_D + r u) − E_D| ≈ v r` over radii and
/// directions.
pub fn fermi_velocity_cone_fit(
    v: &FourierPotential,
    lat: &Lattice2D,
    d: &DiracPointData,
    radii: &[f64],
    directions: usize,
) -> Result<ConeFit> {
    if radii.is_empty() || directions == 0 {
        return Err(Error::refused("cone fit needs radii and at least one direction"));
    }
    let (lo, hi) = (d.band_pair.0 - 1, d.band_pair.1 - 1);
    let jobs: Vec<(usize, usize)> = (0..directions).flat_map(|j| (0..radii.len()).map(move |i| (j, i))).collect();
    let samples: Vec<Result<(usize, usize, f64, f64)>> = jobs
        .par_iter()
        .map(|&(j, i)| {
            let ang = 2.0 * std::f64::consts::PI * (j as f64 + 0.25) / directions as f64;
            let k = lattice::add(d.k_d, [radii[i] * ang.cos(), radii[i] * ang.sin()]);
            let sys = solve_bands(v, lat, k, hi + 1, &d.basis)?;
            Ok((j, i, sys.energies[hi] - d.e_d, sys.energies[lo] - d.e_d))
        })
        .collect();
    let mut plus = vec![vec![0.0; radii.len()]; directions];
    let mut minus = vec![vec![0.0; radii.len()]; directions];
    for s in samples {
        let (j, i, ep, em) = s?;
        plus[j][i] = ep;
        minus[j][i] = em;
    }
    let r2: f64 = radii.iter().map(|r| r * r).sum();
    let fit = |vals: &[f64]| radii.iter().zip(vals).map(|(r, e)| r * e).sum::<f64>() / r2;
    let sp: Vec<f64> = plus.iter().map(|p| fit(p)).collect();
    let sm: Vec<f64> = minus.iter().map(|m| fit(m)).collect();
    let slope_plus = sp.iter().sum::<f64>() / directions as f64;
    let slope_minus = sm.iter().sum::<f64>() / directions as f64;
    let v_fit = 0.5 * (slope_plus - slope_minus);
    let spread_by_radius: Vec<f64> = (0..radii.len())
        .map(|i| {
            let dir: Vec<f64> = (0..directions).map(|j| 0.5 * (plus[j][i] - minus[j][i]) / radii[i]).collect();
            let mx = dir.iter().cloned().fold(f64::MIN, f64::max);
            let mn = dir.iter().cloned().fold(f64::MAX, f64::min);
            mx / mn - 1.0
        })
        .collect();
    let smallest = radii
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let isotropy_spread = spread_by_radius[smallest];
    let warning = (isotropy_spread > 0.1)
        .then(|| format!("anisotropy {:.1}% at the smallest radius: cone not yet asymptotic", 100.0 * isotropy_spread));
    Ok(ConeFit { v_fit, slope_plus, slope_minus, isotropy_spread, spread_by_radius, warning })
}

#[derive(Debug, Clone, Serialize)]
pub struct NoFoldReport {
    pub holds: bool,
    pub worst_k: Vec2,
    pub worst_gap: f64,
    pub samples: usize,
}

/// Distance from `k` to the nearest lattice translate of `p`.
pub fn lattice_distance(lat: &Lattice2D, k: Vec2, p: Vec2) -> f64 {
    let (s, t) = lat.dual_coords(lattice::sub(k, p));
    let (s0, t0) = (s - s.round(), t - t.round());
    let mut best = f64::INFINITY;
    for a in -1..=1 {
        for b in -1..=1 {
            let q = lattice::add(lattice::scale(s0 + a as f64, lat.k1), lattice::scale(t0 + b as f64, lat.k2));
            best = best.min(lattice::norm(q));
        }
    }
    best
}

/// Scans a uniform grid of the dual cell, excluding discs of radius `delta`
/// around each point of `exclusions`, and checks `min_b |E_b(k) − E_D| ≥ delta0`.
#[allow(clippy::too_many_arguments)]
pub fn check_no_fold(
    v: &FourierPotential,
    lat: &Lattice2D,
    e_d: f64,
    delta: f64,
    delta0: f64,
    k_grid_n: usize,
    basis: &PlaneWaveBasis,
    exclusions: &[Vec2],
) -> Result<NoFoldReport> {
    let hs = lat.high_symmetry_points();
    if delta >= lattice::norm(hs.k) {
        return Err(Error::refused("no-fold radius must be smaller than |K|"));
    }
    let n = k_grid_n.max(1);
    let ks: Vec<Vec2> = (0..n * n)
        .map(|i| {
            let (a, b) = (i / n, i % n);
            lattice::add(lattice::scale(a as f64 / n as f64, lat.k1), lattice::scale(b as f64 / n as f64, lat.k2))
        })
        .filter(|&k| exclusions.iter().all(|&p| lattice_distance(lat, k, p) > delta))
        .collect();
    let gaps: Vec<Result<(Vec2, f64)>> = ks
        .par_iter()
        .map(|&k| {
            let h = assemble_hk(v, lat, k, basis);
            let e = linalg::eigh(&h)?;
            let gap = e.values.iter().map(|x| (x - e_d).abs()).fold(f64::INFINITY, f64::min);
            Ok((k, gap))
        })
        .collect();
    let mut worst = ([0.0, 0.0], f64::INFINITY);
    for g in gaps {
        let (k, gap) = g?;
        if gap < worst.1 {
            worst = (k, gap);
        }
    }
    Ok(NoFoldReport { holds: worst.1 >= delta0, worst_k: worst.0, worst_gap: worst.1, samples: ks.len() })
}

/// Maps each energy into `[0, 2π/T_per)`.
pub fn fold_quasi_energies(energies: &[f64], t_per: f64) -> Result<Vec<f64>> {
    if !(t_per > 0.0) {
        return Err(Error::refused("fold_quasi_energies: T_per must be positive"));
    }
    let w = 2.0 * std::f64::consts::PI / t_per;
    Ok(energies
        .iter()
        .map(|&e| {
            let f = e.rem_euclid(w);
            if f >= w {
                0.0
            } else {
                f
            }
        })
        .collect())
}

pub fn write_fold_csv<W: Write>(energies: &[f64], folded: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "band_index,E,E_folded")?;
    for (i, (e, f)) in energies.iter().zip(folded).enumerate() {
        writeln!(out, "{},{},{}", i + 1, fmt17(*e), fmt17(*f))?;
    }
    Ok(())
}

/// Largest gap between consecutive sorted points on the circle of
/// circumference `period`.
pub fn max_circular_spacing(points: &[f64], period: f64) -> f64 {
    if points.is_empty() {
        return period;
    }
    let mut p = points.to_vec();
    p.sort_by(f64::total_cmp);
    let mut worst = p[0] + period - p[p.len() - 1];
    for w in p.windows(2) {
        worst = worst.max(w[1] - w[0]);
    }
    worst
}
