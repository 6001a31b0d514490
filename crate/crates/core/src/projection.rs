//! Averaging identity, energy-window and band-limited Dirac projections, the
//! wave-packet scaling check and the effective-gap harness.
//!
//! Projections work fiber by fiber: a supercell field splits into the
//! quasi-momenta `k = (a k1 + b k2)/N`, `0 ≤ a, b < N`, each carrying the grid
//! modes `k + g`. A band-limited packet `α(εx)ᵀΦ(x; K)` with envelope mode `ξ`
//! lives in the single fiber `K + εξ`, with the same coefficient vectors as
//! `Φ_j` itself.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{self, DiracPointData, NoFoldReport, PlaneWaveBasis};
use crate::dirac::ForcingProfile;
use crate::error::{Error, Result};
use crate::fit::{self, LineFit};
use crate::flow::{self, EnvelopeSpec, MatrixStepControl, SupercellGrid, WaveField, WavePacketEnvelope};
use crate::io::fmt17;
use crate::lattice::{self, DualIndex, Lattice2D, Vec2};
use crate::linalg::{self, CMat, CVec};
use crate::potential::FourierPotential;

/// Scalar band-limited function on the torus `L·Ω`:
/// `q(X) = Σ q̂(a,b) e^{iξ_ab·X}`, `ξ_ab = (a k1 + b k2)/L`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarEnvelope {
    pub length: f64,
    pub modes: Vec<(DualIndex, Complex64)>,
}

impl ScalarEnvelope {
    pub fn band_radius(&self, lat: &Lattice2D) -> f64 {
        self.modes
            .iter()
            .filter(|(_, z)| z.norm() > 0.0)
            .map(|(i, _)| lattice::norm(lattice::scale(1.0 / self.length, lat.dual_vector(*i))))
            .fold(0.0, f64::max)
    }

    /// `∫_{LΩ} q = L²|Ω| q̂(0)`.
    pub fn integral(&self, lat: &Lattice2D) -> Complex64 {
        let q0: Complex64 = self.modes.iter().filter(|(i, _)| *i == (0, 0)).map(|(_, z)| *z).sum();
        q0 * self.length * self.length * lat.cell_area
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AverageReport {
    pub lhs: Complex64,
    pub rhs: Complex64,
    /// `|lhs − rhs|` relative to `ε⁻² L²|Ω| Σ|p̂| Σ|q̂|`, a bound for both
    /// sides; stays meaningful when the mean of `p` vanishes.
    pub residual: f64,
    pub n_cells: usize,
    pub pts_per_cell: usize,
}

/// `∫ p(x) q(εx) dx` over the supercell `(L/ε)·Ω`, against
/// `ε⁻² (⨍_Ω p)(∫ q)`.
///
/// The cell factor is the average of `p`: with plain `dx` on both sides the
/// identity only holds when `|Ω| = 1`.
pub fn poisson_average(p: &FourierPotential, q: &ScalarEnvelope, epsilon: f64, lat: &Lattice2D) -> Result<AverageReport> {
    if !(epsilon > 0.0) || !(q.length > 0.0) {
        return Err(Error::refused("poisson_average needs ε > 0 and a positive torus length"));
    }
    let nf = q.length / epsilon;
    let n = nf.round();
    if (nf - n).abs() > 1e-9 * nf || n < 1.0 {
        return Err(Error::refused(format!("L/ε = {nf} must be a positive integer number of cells")));
    }
    let n = n as usize;
    let d = q.band_radius(lat);
    for (&g, &pg) in p.iter() {
        if g != (0, 0) && pg.norm() > 0.0 {
            let kg = lattice::norm(lat.dual_vector(g));
            if kg <= epsilon * d * (1.0 + 1e-12) {
                return Err(Error::refused(format!(
                    "dual-lattice alias n = ({}, {}): |n| = {kg:.6} ≤ ε·d = {:.6}; lower ε or the band limit",
                    g.0,
                    g.1,
                    epsilon * d
                )));
            }
        }
    }
    let m = 2 * p.cutoff.max(0) as usize + 4;
    let grid = SupercellGrid::new(lat, n, m)?;
    let ni = n as i64;
    let mut ps = vec![Complex64::default(); grid.len()];
    for (&g, &pg) in p.iter() {
        let idx = grid
            .spectral_index(g.0 as i64 * ni, g.1 as i64 * ni)
            .ok_or_else(|| Error::refused("periodic factor exceeds the quadrature grid"))?;
        ps[idx] += pg;
    }
    let mut qs = vec![Complex64::default(); grid.len()];
    for &((a, b), z) in &q.modes {
        // εξ_ab = (a k1 + b k2)/N
        let idx = grid
            .spectral_index(a as i64, b as i64)
            .ok_or_else(|| Error::refused(format!("envelope mode ({a}, {b}) exceeds the quadrature grid")))?;
        qs[idx] += z;
    }
    let pv = grid.synthesize(&ps);
    let qv = grid.synthesize(&qs);
    let lhs: Complex64 = pv.iter().zip(&qv).map(|(a, b)| a * b).sum::<Complex64>() * grid.cell_element();
    let rhs = p.coeff((0, 0)) * q.integral(lat) / (epsilon * epsilon);
    let bound = p.iter().map(|(_, z)| z.norm()).sum::<f64>()
        * q.modes.iter().map(|(_, z)| z.norm()).sum::<f64>()
        * q.length
        * q.length
        * lat.cell_area
        / (epsilon * epsilon);
    let diff = (lhs - rhs).norm();
    let residual = if bound > 0.0 { diff / bound } else { diff };
    Ok(AverageReport { lhs, rhs, residual, n_cells: n, pts_per_cell: m })
}

/// Fourier coefficients of the periodic product `conj(Φ_a)·Φ_b` of two
/// Bloch functions at the same quasi-momentum.
pub fn bloch_product(basis: &PlaneWaveBasis, a: &[Complex64], b: &[Complex64]) -> FourierPotential {
    let mut rows = Vec::new();
    for (i, &gi) in basis.index_list.iter().enumerate() {
        for (j, &gj) in basis.index_list.iter().enumerate() {
            let z = a[i].conj() * b[j];
            if z.norm() > 0.0 {
                rows.push(((gj.0 - gi.0, gj.1 - gi.1), z));
            }
        }
    }
    FourierPotential::from_coefficients(rows)
}

/// Grid modes sharing one supercell quasi-momentum.
#[derive(Debug, Clone)]
struct Fiber {
    k: Vec2,
    slots: Vec<usize>,
    kept: CMat,
    kept_energies: Vec<f64>,
}

fn fibers(grid: &SupercellGrid) -> Vec<(Vec2, Vec<DualIndex>, Vec<usize>)> {
    let n = grid.n_cells as i64;
    let modes = grid.modes();
    let mut out = Vec::with_capacity(grid.n_cells * grid.n_cells);
    for a0 in 0..n {
        for b0 in 0..n {
            let mut idx = Vec::new();
            let mut slots = Vec::new();
            for (p, &(a, b)) in modes.iter().enumerate() {
                if (a - a0).rem_euclid(n) == 0 && (b - b0).rem_euclid(n) == 0 {
                    idx.push((((a - a0) / n) as i32, ((b - b0) / n) as i32));
                    slots.push(p);
                }
            }
            out.push((grid.wavevector(a0, b0), idx, slots));
        }
    }
    out
}

/// `Proj(|H − E_D| < half_width)` on a supercell, built fiber by fiber from
/// the plane-wave Hamiltonian restricted to the grid modes.
#[derive(Debug, Clone)]
pub struct EnergyWindowProjector {
    pub center: f64,
    pub half_width: f64,
    grid: SupercellGrid,
    fibers: Vec<Fiber>,
}

impl EnergyWindowProjector {
    pub fn new(v: &FourierPotential, grid: &SupercellGrid, center: f64, half_width: f64) -> Result<Self> {
        if half_width.is_nan() || half_width < 0.0 {
            return Err(Error::refused("energy window half-width must be ≥ 0"));
        }
        let lat = grid.lat;
        let built: Result<Vec<Fiber>> = fibers(grid)
            .into_par_iter()
            .map(|(k, idx, slots)| {
                let basis = PlaneWaveBasis::from_indices(k, idx);
                let e = linalg::eigh(&bloch::assemble_hk(v, &lat, k, &basis))?;
                let keep: Vec<usize> = (0..e.values.len()).filter(|&i| (e.values[i] - center).abs() < half_width).collect();
                let mut kept = CMat::zeros(slots.len(), keep.len());
                for (c, &i) in keep.iter().enumerate() {
                    kept.set_column(c, &e.vectors.column(i));
                }
                Ok(Fiber { k, slots, kept, kept_energies: keep.iter().map(|&i| e.values[i]).collect() })
            })
            .collect();
        Ok(EnergyWindowProjector { center, half_width, grid: grid.clone(), fibers: built? })
    }

    /// `(k, E_b(k))` for every retained mode.
    pub fn mode_list(&self) -> Vec<(Vec2, f64)> {
        self.fibers.iter().flat_map(|f| f.kept_energies.iter().map(move |&e| (f.k, e))).collect()
    }

    pub fn rank(&self) -> usize {
        self.fibers.iter().map(|f| f.kept.ncols()).sum()
    }

    pub fn apply(&self, f: &WaveField) -> Result<WaveField> {
        if f.values.len() != self.grid.len() {
            return Err(Error::refused("field does not live on the projector's grid"));
        }
        let spec = self.grid.analyze(&f.values);
        let mut out = vec![Complex64::default(); spec.len()];
        for fb in &self.fibers {
            if fb.kept.ncols() == 0 {
                continue;
            }
            let x = CVec::from_iterator(fb.slots.len(), fb.slots.iter().map(|&s| spec[s]));
            let y = &fb.kept * (fb.kept.adjoint() * x);
            for (i, &s) in fb.slots.iter().enumerate() {
                out[s] = y[i];
            }
        }
        WaveField::new(&self.grid, self.grid.synthesize(&out))
    }
}

pub fn energy_window_project(f: &WaveField, v: &FourierPotential, grid: &SupercellGrid, e_d: f64, width: f64) -> Result<WaveField> {
    EnergyWindowProjector::new(v, grid, e_d, width)?.apply(f)
}

#[derive(Debug, Clone)]
pub struct BLDecomposition {
    pub bl_part: WaveField,
    pub residual: WaveField,
    /// `‖bl_part‖²/‖ψ‖²`.
    pub bl_fraction: f64,
    /// Packet attached to each Dirac point, in input order.
    pub parts: Vec<WaveField>,
    /// `‖raw − bl_part‖/‖ψ‖` for the low-pass formula before re-orthogonalization.
    pub raw_defect: f64,
}

struct BlBasis {
    /// One entry per (Dirac point, lab mode, component): spectral slots and
    /// coefficients.
    elements: Vec<(usize, Vec<(usize, Complex64)>)>,
}

fn bl_basis(grid: &SupercellGrid, points: &[&DiracPointData], cutoff: f64) -> Result<BlBasis> {
    let n = grid.n_cells as i64;
    let mut elements = Vec::new();
    for (pi, d) in points.iter().enumerate() {
        let (s, t) = grid.lat.dual_coords(d.k_d);
        let center = grid
            .mode_of(s, t)
            .ok_or_else(|| Error::refused(format!("k_D is not a supercell momentum for N = {}", grid.n_cells)))?;
        let span = (cutoff / lattice::norm(grid.wavevector(1, 0))).ceil() as i64 + 1;
        for a in -span..=span {
            for b in -span..=span {
                if lattice::norm(grid.wavevector(a, b)) > cutoff {
                    continue;
                }
                for phi in [&d.phi1, &d.phi2] {
                    let mut el = Vec::with_capacity(phi.len());
                    for (&(m, k), &cf) in d.basis.index_list.iter().zip(phi.iter()) {
                        let slot = grid
                            .spectral_index(center.0 + a + m as i64 * n, center.1 + b + k as i64 * n)
                            .ok_or_else(|| Error::refused("grid does not resolve the band-limited Dirac basis"))?;
                        el.push((slot, cf));
                    }
                    elements.push((pi, el));
                }
            }
        }
    }
    Ok(BlBasis { elements })
}

impl BlBasis {
    /// Orthogonal projection in coefficient space, split per Dirac point.
    fn project(&self, spec: &[Complex64], n_points: usize) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::default(); spec.len()]; n_points];
        for (pi, el) in &self.elements {
            let coef: Complex64 = el.iter().map(|&(s, c)| c.conj() * spec[s]).sum();
            for &(s, c) in el {
                out[*pi][s] += coef * c;
            }
        }
        out
    }
}

/// Splits `ψ` into its band-limited Dirac part around each of `points` and
/// the remainder.
///
/// The low-pass formula `β_j = [conj(Φ_j)ψ]_{|q| ≤ εd0}` is evaluated first;
/// one Gram–Schmidt pass against the explicit basis `e^{iq·x}Φ_j` then makes
/// the split exactly orthogonal.
pub fn bl_project(
    psi: &WaveField,
    points: &[&DiracPointData],
    epsilon: f64,
    d0: f64,
    grid: &SupercellGrid,
) -> Result<BLDecomposition> {
    if points.is_empty() {
        return Err(Error::refused("bl_project needs at least one Dirac point"));
    }
    let cutoff = epsilon * d0;
    let basis = bl_basis(grid, points, cutoff)?;
    let modes = grid.modes();
    let mut raw = vec![Complex64::default(); grid.len()];
    for d in points {
        let (s, t) = grid.lat.dual_coords(d.k_d);
        let center = grid.mode_of(s, t).expect("checked by bl_basis");
        for phi in [&d.phi1, &d.phi2] {
            let field = flow::synthesize_bloch(grid, center, &d.basis, phi)?;
            let prod: Vec<Complex64> = field.values.iter().zip(&psi.values).map(|(f, p)| f.conj() * p).collect();
            let mut spec = grid.analyze(&prod);
            for (p, &(a, b)) in modes.iter().enumerate() {
                if lattice::norm(grid.wavevector(a, b)) > cutoff {
                    spec[p] = Complex64::default();
                }
            }
            let beta = grid.synthesize(&spec);
            for ((r, b), f) in raw.iter_mut().zip(&beta).zip(&field.values) {
                *r += b * f;
            }
        }
    }
    let psi_spec = grid.analyze(&psi.values);
    let raw_spec = grid.analyze(&raw);
    let first = basis.project(&raw_spec, points.len());
    let mut parts_spec = first.clone();
    let mut rest = psi_spec.clone();
    for part in &first {
        rest.iter_mut().zip(part).for_each(|(r, p)| *r -= p);
    }
    let correction = basis.project(&rest, points.len());
    for (part, corr) in parts_spec.iter_mut().zip(&correction) {
        part.iter_mut().zip(corr).for_each(|(p, c)| *p += c);
    }
    let mut total = vec![Complex64::default(); grid.len()];
    for part in &parts_spec {
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    let parts: Result<Vec<WaveField>> = parts_spec.iter().map(|s| WaveField::new(grid, grid.synthesize(s))).collect();
    let bl_part = WaveField::new(grid, grid.synthesize(&total))?;
    let residual = psi.sub(&bl_part);
    let raw_field = WaveField::new(grid, raw)?;
    let scale = psi.norm_l2.max(f64::MIN_POSITIVE);
    let bl_fraction = if psi.norm_l2 > 0.0 { (bl_part.norm_l2 / psi.norm_l2).powi(2).min(1.0) } else { 0.0 };
    Ok(BLDecomposition { raw_defect: raw_field.sub(&bl_part).norm_l2 / scale, bl_part, residual, bl_fraction, parts: parts? })
}

/// `|⟨Φ1,u⟩|² + |⟨Φ2,u⟩|²` over `‖u‖²` for a fiber vector `u` at
/// `k_D + εξ`, `|ξ| ≤ d0`, stored in the Dirac basis ordering.
pub fn fiber_bl_fraction(d: &DiracPointData, u: &CVec) -> f64 {
    let n2 = u.norm_squared();
    if n2 == 0.0 {
        return 0.0;
    }
    let a = d.phi1_vec().dotc(u);
    let b = d.phi2_vec().dotc(u);
    ((a.norm_sqr() + b.norm_sqr()) / n2).min(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub residual: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub fit: Option<LineFit>,
    pub note: Option<String>,
}

fn scaling_report(rows: Vec<ScalingRow>) -> ScalingReport {
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.relative).collect();
    match fit::loglog_fit(&eps, &res) {
        Ok(f) => ScalingReport { rows, fit: Some(f), note: None },
        Err(e) => ScalingReport { rows, fit: None, note: Some(e.to_string()) },
    }
}

/// Weight of `w` on eigenvectors of `H(k)` outside `|E − E_D| < width`.
fn out_of_window(v: &FourierPotential, lat: &Lattice2D, k: Vec2, basis: &PlaneWaveBasis, e_d: f64, width: f64, w: &CVec) -> Result<f64> {
    let e = linalg::eigh(&bloch::assemble_hk(v, lat, k, basis))?;
    let coeffs = e.vectors.adjoint() * w;
    Ok((0..e.values.len()).filter(|&i| (e.values[i] - e_d).abs() >= width).map(|i| coeffs[i].norm_sqr()).sum())
}

/// `‖Proj(|H − E_D| ≥ ε) u‖/‖u‖` for band-limited packets `u` with a fixed
/// envelope, over a list of `ε`, and the log-log slope.
#[allow(clippy::too_many_arguments)]
pub fn projection_scaling_check(
    v: &FourierPotential,
    lat: &Lattice2D,
    d: &DiracPointData,
    envelope: &EnvelopeSpec,
    length: f64,
    d0: f64,
    eps_list: &[f64],
    no_fold: &NoFoldReport,
) -> Result<ScalingReport> {
    if !no_fold.holds {
        return Err(Error::refused(format!(
            "no-fold condition fails: min |E_b(k) − E_D| = {:.4e} at k = ({:.4}, {:.4}) over {} samples",
            no_fold.worst_gap, no_fold.worst_k[0], no_fold.worst_k[1], no_fold.samples
        )));
    }
    let c1 = d.phi1_vec();
    let c2 = d.phi2_vec();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let env = WavePacketEnvelope::build(lat, envelope, length, d0, eps)?.normalized(lat);
        let parts: Result<Vec<(f64, f64)>> = env
            .modes
            .par_iter()
            .map(|&(idx, a)| {
                let k = lattice::add(d.k_d, lattice::scale(eps, env.xi(lat, idx)));
                let w = &c1 * a[0] + &c2 * a[1];
                Ok((out_of_window(v, lat, k, &d.basis, d.e_d, eps, &w)?, w.norm_squared()))
            })
            .collect();
        let (out, total) = parts?.into_iter().fold((0.0, 0.0), |acc, (o, t)| (acc.0 + o, acc.1 + t));
        let relative = if total > 0.0 { (out / total).sqrt() } else { 0.0 };
        rows.push(ScalingRow { epsilon: eps, residual: relative * env.norm_l2(lat), relative });
    }
    Ok(scaling_report(rows))
}

/// Forward direction: random fiber data is pushed through the energy window
/// `|H − E_D| < ε`, then split into its band-limited packets at `K` and `K′`
/// (band limit `a`, in envelope units); reports the relative remainder.
pub fn window_decomposition_check(
    v: &FourierPotential,
    lat: &Lattice2D,
    points: &[&DiracPointData],
    a: f64,
    eps_list: &[f64],
    samples_per_ring: usize,
    seed: u64,
) -> Result<ScalingReport> {
    use rand::Rng;
    let mut rows = Vec::new();
    for &eps in eps_list {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jobs = Vec::new();
        for d in points {
            let dim = d.basis.dim();
            for ring in [0.0, 0.3, 0.6, 0.9] {
                let n = if ring == 0.0 { 1 } else { samples_per_ring.max(1) };
                for s in 0..n {
                    let th = 2.0 * std::f64::consts::PI * (s as f64 + 0.25) / n as f64;
                    let xi = [ring * a * th.cos(), ring * a * th.sin()];
                    let f = CVec::from_fn(dim, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                    jobs.push((*d, xi, f));
                }
            }
        }
        let parts: Result<Vec<(f64, f64)>> = jobs
            .par_iter()
            .map(|(d, xi, f)| {
                let k = lattice::add(d.k_d, lattice::scale(eps, *xi));
                let e = linalg::eigh(&bloch::assemble_hk(v, lat, k, &d.basis))?;
                let coeffs = e.vectors.adjoint() * f;
                let mut pw = CVec::zeros(f.len());
                for i in 0..e.values.len() {
                    if (e.values[i] - d.e_d).abs() < eps {
                        pw += e.vectors.column(i) * coeffs[i];
                    }
                }
                let c1 = d.phi1_vec();
                let c2 = d.phi2_vec();
                let bl = &c1 * c1.dotc(&pw) + &c2 * c2.dotc(&pw);
                Ok(((pw - bl).norm_squared(), f.norm_squared()))
            })
            .collect();
        let (num, den) = parts?.into_iter().fold((0.0, 0.0), |acc, (x, y)| (acc.0 + x, acc.1 + y));
        let relative = (num / den).sqrt();
        rows.push(ScalingRow { epsilon: eps, residual: relative, relative });
    }
    Ok(scaling_report(rows))
}

/// Arc `{ν : dist(ν, center) ≤ half_width}` of quasi-energies mod 2π, for
/// multipliers written `e^{−iν}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuasiEnergyWindow {
    pub center: f64,
    pub half_width: f64,
}

impl QuasiEnergyWindow {
    /// `(ε⁻¹E_D ± g)T_per` reduced mod 2π.
    pub fn around_dirac(e_d: f64, epsilon: f64, t_per: f64, g: f64) -> Self {
        QuasiEnergyWindow { center: (e_d * t_per / epsilon).rem_euclid(2.0 * std::f64::consts::PI), half_width: g * t_per }
    }

    pub fn distance(&self, nu: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let d = (nu - self.center).rem_euclid(tau);
        d.min(tau - d)
    }

    pub fn contains(&self, nu: f64) -> bool {
        self.distance(nu) <= self.half_width
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeRecord {
    /// Quasi-energy with multiplier `e^{−iν}`, in `[0, 2π)`.
    pub nu: f64,
    pub in_window: bool,
    pub bl_fraction: f64,
    pub residual_fraction: f64,
    /// One of the two modes per fiber with the largest Dirac overlap.
    pub dirac_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiberScan {
    pub xi: Vec2,
    pub k: Vec2,
    pub steps: usize,
    pub unitarity_defect: f64,
    pub empty_window: bool,
    pub modes: Vec<ModeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapSummary {
    pub in_window_count: usize,
    pub in_window_min_residual: Option<f64>,
    pub in_window_median_residual: Option<f64>,
    pub control_count: usize,
    pub control_max_residual: f64,
    pub control_min_bl_fraction: f64,
    /// Percentiles (10, 50, 90) of residual fractions of out-of-window modes.
    pub out_of_window_percentiles: [f64; 3],
}

impl GapSummary {
    /// In-window residuals at least `factor` times the control maximum, and
    /// control modes at least `bl_min` inside the band-limited space.
    pub fn ordering_holds(&self, factor: f64, bl_min: f64) -> bool {
        let ordered = match self.in_window_min_residual {
            Some(m) => m >= factor * self.control_max_residual,
            None => true,
        };
        ordered && self.control_min_bl_fraction >= bl_min
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveGapReport {
    pub epsilon: f64,
    pub d0: f64,
    pub window: QuasiEnergyWindow,
    pub fibers: Vec<FiberScan>,
    pub summary: GapSummary,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Full monodromy spectra at `k = k_D + εξ` for `ξ ∈ xis`, with each
/// eigenmode's band-limited fraction and its position relative to `window`.
#[allow(clippy::too_many_arguments)]
pub fn effective_gap_scan(
    v: &FourierPotential,
    lat: &Lattice2D,
    d: &DiracPointData,
    forcing: &ForcingProfile,
    epsilon: f64,
    d0: f64,
    window: QuasiEnergyWindow,
    xis: &[Vec2],
    ctl: &MatrixStepControl,
) -> Result<EffectiveGapReport> {
    for xi in xis {
        if lattice::norm(*xi) > d0 * (1.0 + 1e-12) {
            return Err(Error::refused(format!("ξ = ({:.4}, {:.4}) lies outside the band limit d0 = {d0}", xi[0], xi[1])));
        }
    }
    let tau = 2.0 * std::f64::consts::PI;
    let scans: Result<Vec<FiberScan>> = xis
        .par_iter()
        .map(|&xi| {
            let k = lattice::add(d.k_d, lattice::scale(epsilon, xi));
            let m = flow::schrodinger_monodromy_bloch(v, lat, forcing, epsilon, k, &d.basis, ctl)?;
            let eig = linalg::eig_unitary(&m.matrix)?;
            let mut modes: Vec<ModeRecord> = (0..eig.values.len())
                .map(|i| {
                    let nu = (-eig.values[i].arg()).rem_euclid(tau);
                    let u = eig.vectors.column(i).into_owned();
                    let bl = fiber_bl_fraction(d, &u);
                    ModeRecord {
                        nu,
                        in_window: window.contains(nu),
                        bl_fraction: bl,
                        residual_fraction: (1.0 - bl).max(0.0).sqrt(),
                        dirac_band: false,
                    }
                })
                .collect();
            let mut order: Vec<usize> = (0..modes.len()).collect();
            order.sort_by(|&a, &b| modes[b].bl_fraction.total_cmp(&modes[a].bl_fraction));
            for &i in order.iter().take(2) {
                modes[i].dirac_band = true;
            }
            let empty_window = !modes.iter().any(|r| r.in_window);
            Ok(FiberScan { xi, k, steps: m.steps, unitarity_defect: m.unitarity_defect, empty_window, modes })
        })
        .collect();
    let fibers = scans?;
    let mut inside: Vec<f64> = Vec::new();
    let mut outside: Vec<f64> = Vec::new();
    let mut control_max_residual: f64 = 0.0;
    let mut control_min_bl: f64 = 1.0;
    let mut control_count = 0;
    for f in &fibers {
        for r in &f.modes {
            if r.in_window {
                inside.push(r.residual_fraction);
            } else {
                outside.push(r.residual_fraction);
                if r.dirac_band {
                    control_count += 1;
                    control_max_residual = control_max_residual.max(r.residual_fraction);
                    control_min_bl = control_min_bl.min(r.bl_fraction);
                }
            }
        }
    }
    inside.sort_by(f64::total_cmp);
    outside.sort_by(f64::total_cmp);
    let summary = GapSummary {
        in_window_count: inside.len(),
        in_window_min_residual: inside.first().copied(),
        in_window_median_residual: (!inside.is_empty()).then(|| percentile(&inside, 0.5)),
        control_count,
        control_max_residual,
        control_min_bl_fraction: if control_count == 0 { 0.0 } else { control_min_bl },
        out_of_window_percentiles: [percentile(&outside, 0.1), percentile(&outside, 0.5), percentile(&outside, 0.9)],
    };
    Ok(EffectiveGapReport { epsilon, d0, window, fibers, summary })
}

/// Points `ξ = 0` and `rings × per_ring` points on circles up to `d0`.
pub fn ring_set(d0: f64, rings: usize, per_ring: usize) -> Vec<Vec2> {
    let mut out = vec![[0.0, 0.0]];
    for r in 1..=rings {
        let rad = d0 * r as f64 / rings as f64;
        for s in 0..per_ring {
            let th = 2.0 * std::f64::consts::PI * s as f64 / per_ring as f64;
            out.push([rad * th.cos(), rad * th.sin()]);
        }
    }
    out
}

pub fn write_gap_scan_csv<W: Write>(report: &EffectiveGapReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "k_x,k_y,nu,bl_fraction,residual_fraction,in_window,dirac_band")?;
    for f in &report.fibers {
        for r in &f.modes {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt17(f.k[0]),
                fmt17(f.k[1]),
                fmt17(r.nu),
                fmt17(r.bl_fraction),
                fmt17(r.residual_fraction),
                r.in_window,
                r.dirac_band
            )?;
        }
    }
    Ok(())
}
