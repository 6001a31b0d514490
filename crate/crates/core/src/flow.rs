//! Driven Schrödinger dynamics `i∂_t ψ = (−Δ + V + 2iεA(εt)·∇)ψ` on a
//! periodic supercell, Dirac wave packets, and the effective envelope
//! comparison.
//!
//! The supercell is `N×N` copies of the unit cell sampled with `M` points per
//! cell and direction: `x_ij = (i v1 + j v2)/M`. Its Fourier modes are
//! `q_ab = (a k1 + b k2)/N`, with `q_ab·x_ij = 2π(ai + bj)/(NM)`, so the
//! transform is a plain two-dimensional DFT.
//!
//! Envelopes live on the torus `L·Ω` in the slow variable `X = εx`, with
//! `L = εN`; their Fourier modes are `ξ = (a k1 + b k2)/L`. The momentum `K`
//! is a supercell mode only when `N` is a multiple of 3.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bloch::{self, DiracPointData, PlaneWaveBasis};
use crate::dirac::{self, ForcingProfile, StepControl};
use crate::error::{Error, Result};
use crate::lattice::{self, DualIndex, Lattice2D, Vec2};
use crate::linalg::{self, c, CMat, CVec};
use crate::potential::FourierPotential;

#[derive(Clone)]
pub struct SupercellGrid {
    pub lat: Lattice2D,
    pub n_cells: usize,
    pub pts_per_cell: usize,
    /// Points per direction, `N·M`.
    pub side: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SupercellGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SupercellGrid")
            .field("n_cells", &self.n_cells)
            .field("pts_per_cell", &self.pts_per_cell)
            .finish()
    }
}

impl SupercellGrid {
    pub fn new(lat: &Lattice2D, n_cells: usize, pts_per_cell: usize) -> Result<Self> {
        if n_cells == 0 || pts_per_cell < 2 {
            return Err(Error::refused("supercell needs N ≥ 1 cells and M ≥ 2 points per cell"));
        }
        let side = n_cells * pts_per_cell;
        let mut planner = FftPlanner::new();
        Ok(SupercellGrid {
            lat: *lat,
            n_cells,
            pts_per_cell,
            side,
            fwd: planner.plan_fft_forward(side),
            inv: planner.plan_fft_inverse(side),
        })
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Area element of one grid point.
    pub fn cell_element(&self) -> f64 {
        self.lat.cell_area / (self.pts_per_cell * self.pts_per_cell) as f64
    }

    pub fn area(&self) -> f64 {
        self.lat.cell_area * (self.n_cells * self.n_cells) as f64
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        let m = self.pts_per_cell as f64;
        self.lat.direct_vector(i as f64 / m, j as f64 / m)
    }

    /// Signed mode number of DFT slot `s`, in `(−side/2, side/2]`.
    pub fn signed(&self, s: usize) -> i64 {
        let n = self.side as i64;
        let s = s as i64;
        if s > n / 2 {
            s - n
        } else {
            s
        }
    }

    /// DFT slot of a signed mode number, if representable.
    pub fn slot(&self, a: i64) -> Option<usize> {
        let n = self.side as i64;
        if a > n / 2 || a <= -(n + 1) / 2 {
            return None;
        }
        Some(a.rem_euclid(n) as usize)
    }

    pub fn wavevector(&self, a: i64, b: i64) -> Vec2 {
        let n = self.n_cells as f64;
        lattice::add(lattice::scale(a as f64 / n, self.lat.k1), lattice::scale(b as f64 / n, self.lat.k2))
    }

    /// Supercell mode numbers `(a, b)` of the momentum `s k1 + t k2`, if the
    /// momentum is a supercell mode.
    pub fn mode_of(&self, s: f64, t: f64) -> Option<(i64, i64)> {
        let n = self.n_cells as f64;
        let (a, b) = (s * n, t * n);
        if (a - a.round()).abs() > 1e-9 || (b - b.round()).abs() > 1e-9 {
            return None;
        }
        Some((a.round() as i64, b.round() as i64))
    }

    /// In-place 2D DFT. `forward` computes `Σ f e^{−iq·x}`, the inverse the
    /// unnormalized synthesis `Σ f̂ e^{iq·x}`.
    pub fn fft2(&self, data: &mut [Complex64], forward: bool) {
        let n = self.side;
        let plan = if forward { &self.fwd } else { &self.inv };
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::default(); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }

    /// Fourier coefficients `f̂` with `f = Σ f̂ e^{iq·x}`.
    pub fn analyze(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut d = values.to_vec();
        self.fft2(&mut d, true);
        let s = 1.0 / self.len() as f64;
        d.iter_mut().for_each(|z| *z *= s);
        d
    }

    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut d = coeffs.to_vec();
        self.fft2(&mut d, false);
        d
    }

    /// Index into the coefficient array of mode `(a, b)`.
    pub fn spectral_index(&self, a: i64, b: i64) -> Option<usize> {
        Some(self.slot(a)? * self.side + self.slot(b)?)
    }

    /// Signed modes `(a, b)` of every spectral slot, row-major.
    pub fn modes(&self) -> Vec<(i64, i64)> {
        let n = self.side;
        (0..n * n).map(|p| (self.signed(p / n), self.signed(p % n))).collect()
    }

    /// Mode numbers of `K + g` on this grid: `a = N/3 + mN`, `b = −N/3 + nN`.
    pub fn k_point_mode(&self) -> Result<(i64, i64)> {
        if self.n_cells % 3 != 0 {
            return Err(Error::refused(format!(
                "K is a supercell momentum only when N is a multiple of 3 (N = {})",
                self.n_cells
            )));
        }
        let third = (self.n_cells / 3) as i64;
        Ok((third, -third))
    }

    /// Checks that every plane wave of `basis` around `center_mode` fits.
    pub fn resolves(&self, center_mode: (i64, i64), basis: &PlaneWaveBasis) -> bool {
        let n = self.n_cells as i64;
        basis
            .index_list
            .iter()
            .all(|&(m, k)| self.slot(center_mode.0 + m as i64 * n).is_some() && self.slot(center_mode.1 + k as i64 * n).is_some())
    }

    /// Real potential values on the grid.
    pub fn potential_values(&self, v: &FourierPotential) -> Result<Vec<f64>> {
        let n = self.side;
        (0..n * n).map(|p| v.evaluate(&self.lat, self.point(p / n, p % n))).collect()
    }
}

/// Complex field on a supercell grid.
#[derive(Debug, Clone)]
pub struct WaveField {
    pub values: Vec<Complex64>,
    pub norm_l2: f64,
    element: f64,
}

impl WaveField {
    pub fn new(grid: &SupercellGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::refused(format!("field has {} values, grid has {}", values.len(), grid.len())));
        }
        let element = grid.cell_element();
        let norm_l2 = l2_norm(&values, element);
        Ok(WaveField { values, norm_l2, element })
    }

    pub fn zeros(grid: &SupercellGrid) -> Self {
        WaveField { values: vec![Complex64::default(); grid.len()], norm_l2: 0.0, element: grid.cell_element() }
    }

    pub fn recompute_norm(&self) -> f64 {
        l2_norm(&self.values, self.element)
    }

    fn refresh(&mut self) {
        self.norm_l2 = self.recompute_norm();
    }

    /// `∫ conj(self)·other`.
    pub fn inner(&self, other: &WaveField) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<Complex64>() * self.element
    }

    pub fn sub(&self, other: &WaveField) -> WaveField {
        let mut w = self.clone();
        w.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a -= b);
        w.refresh();
        w
    }

    pub fn add(&self, other: &WaveField) -> WaveField {
        let mut w = self.clone();
        w.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        w.refresh();
        w
    }

    pub fn scaled(&self, s: Complex64) -> WaveField {
        let mut w = self.clone();
        w.values.iter_mut().for_each(|a| *a *= s);
        w.refresh();
        w
    }
}

fn l2_norm(values: &[Complex64], element: f64) -> f64 {
    (values.iter().map(|z| z.norm_sqr()).sum::<f64>() * element).sqrt()
}

/// Bloch function with plane-wave coefficients `coeffs` (around momentum
/// mode `center`) sampled on the grid, including an extra momentum shift.
pub fn synthesize_bloch(
    grid: &SupercellGrid,
    center: (i64, i64),
    basis: &PlaneWaveBasis,
    coeffs: &[Complex64],
) -> Result<WaveField> {
    if !grid.resolves(center, basis) {
        return Err(Error::refused("supercell grid does not resolve the plane-wave basis (raise points per cell)"));
    }
    let n = grid.n_cells as i64;
    let mut spec = vec![Complex64::default(); grid.len()];
    for (&(m, k), &cf) in basis.index_list.iter().zip(coeffs) {
        let idx = grid.spectral_index(center.0 + m as i64 * n, center.1 + k as i64 * n).expect("resolved");
        spec[idx] += cf;
    }
    WaveField::new(grid, grid.synthesize(&spec))
}

/// Band-limited two-component envelope on the torus `L·Ω`, stored by its
/// Fourier coefficients: `α(X) = Σ α̂(a,b) e^{iξ_ab·X}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavePacketEnvelope {
    pub length: f64,
    pub d0: f64,
    pub epsilon: f64,
    pub modes: Vec<(DualIndex, [Complex64; 2])>,
}

/// How to build an envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvelopeSpec {
    /// `α̂(ξ) ∝ exp(−w²|ξ|²/4)·amplitude`, truncated at `|ξ| ≤ d0`.
    Gaussian { width: f64, amplitude: [Complex64; 2] },
    /// Explicit modes.
    Modes { modes: Vec<(DualIndex, [Complex64; 2])> },
}

impl WavePacketEnvelope {
    pub fn xi(&self, lat: &Lattice2D, idx: DualIndex) -> Vec2 {
        lattice::scale(1.0 / self.length, lat.dual_vector(idx))
    }

    pub fn build(lat: &Lattice2D, spec: &EnvelopeSpec, length: f64, d0: f64, epsilon: f64) -> Result<Self> {
        if !(length > 0.0 && d0 > 0.0 && epsilon > 0.0) {
            return Err(Error::refused("envelope needs positive torus length, band limit and ε"));
        }
        let env = WavePacketEnvelope { length, d0, epsilon, modes: Vec::new() };
        let modes = match spec {
            EnvelopeSpec::Modes { modes } => modes.clone(),
            EnvelopeSpec::Gaussian { width, amplitude } => {
                let span = (d0 * length / lattice::norm(lat.k1)).ceil() as i32 * 2 + 1;
                let mut out = Vec::new();
                for a in -span..=span {
                    for b in -span..=span {
                        let xi = env.xi(lat, (a, b));
                        let r = lattice::norm(xi);
                        if r <= d0 {
                            let w = (-width * width * r * r / 4.0).exp();
                            out.push(((a, b), [amplitude[0] * w, amplitude[1] * w]));
                        }
                    }
                }
                out
            }
        };
        let env = WavePacketEnvelope { modes, ..env };
        env.check_band_limit(lat)?;
        Ok(env)
    }

    pub fn check_band_limit(&self, lat: &Lattice2D) -> Result<()> {
        for &(idx, a) in &self.modes {
            let r = lattice::norm(self.xi(lat, idx));
            if r > self.d0 * (1.0 + 1e-12) && (a[0].norm() + a[1].norm()) > 0.0 {
                return Err(Error::refused(format!(
                    "envelope mode {idx:?} has |ξ| = {r:.6} beyond the band limit d0 = {}",
                    self.d0
                )));
            }
        }
        Ok(())
    }

    /// `‖α‖²_{L²(LΩ)} = L²|Ω| Σ |α̂|²`.
    pub fn norm_l2(&self, lat: &Lattice2D) -> f64 {
        let s: f64 = self.modes.iter().map(|(_, a)| a[0].norm_sqr() + a[1].norm_sqr()).sum();
        (self.length * self.length * lat.cell_area * s).sqrt()
    }

    /// Normalizes to unit `L²` norm.
    pub fn normalized(mut self, lat: &Lattice2D) -> Self {
        let n = self.norm_l2(lat);
        if n > 0.0 {
            for (_, a) in self.modes.iter_mut() {
                a[0] /= n;
                a[1] /= n;
            }
        }
        self
    }

    /// Largest relative spectral weight outside `|ξ| ≤ d0`.
    pub fn leakage(&self, lat: &Lattice2D) -> f64 {
        let total: f64 = self.modes.iter().map(|(_, a)| a[0].norm_sqr() + a[1].norm_sqr()).sum();
        let out: f64 = self
            .modes
            .iter()
            .filter(|(i, _)| lattice::norm(self.xi(lat, *i)) > self.d0)
            .map(|(_, a)| a[0].norm_sqr() + a[1].norm_sqr())
            .sum();
        if total == 0.0 {
            0.0
        } else {
            (out / total).sqrt()
        }
    }
}

/// `ε α(εx)ᵀΦ(x)` on the grid.
pub fn build_wavepacket(env: &WavePacketEnvelope, d: &DiracPointData, grid: &SupercellGrid) -> Result<WaveField> {
    env.check_band_limit(&grid.lat)?;
    let expect_n = env.length / env.epsilon;
    if (expect_n - grid.n_cells as f64).abs() > 1e-9 * expect_n {
        return Err(Error::refused(format!(
            "envelope torus L = {} and ε = {} need N = L/ε = {expect_n}, grid has N = {}",
            env.length, env.epsilon, grid.n_cells
        )));
    }
    let center = grid.mode_of(grid.lat.dual_coords(d.k_d).0, grid.lat.dual_coords(d.k_d).1).ok_or_else(|| {
        Error::refused(format!("k_D is not a supercell momentum for N = {} (use N divisible by 3)", grid.n_cells))
    })?;
    if !grid.resolves(center, &d.basis) {
        return Err(Error::refused("supercell grid does not resolve the Dirac plane-wave basis"));
    }
    let n = grid.n_cells as i64;
    let half = n / 2;
    let mut spec = vec![Complex64::default(); grid.len()];
    for &((a, b), amp) in &env.modes {
        // εξ = (a k1 + b k2)/N is the supercell mode (a, b)
        let (a, b) = (a as i64, b as i64);
        if a.abs() > half || b.abs() > half || (n % 2 == 0 && (a == half || b == half)) && n > 1 {
            return Err(Error::refused(format!("envelope mode ({a}, {b}) aliases on an N = {n} supercell")));
        }
        for (gi, &(m, k)) in d.basis.index_list.iter().enumerate() {
            let cf = amp[0] * d.phi1[gi] + amp[1] * d.phi2[gi];
            let idx = grid
                .spectral_index(center.0 + a + m as i64 * n, center.1 + b + k as i64 * n)
                .ok_or_else(|| Error::refused("wave packet exceeds the grid Nyquist range"))?;
            spec[idx] += cf * env.epsilon;
        }
    }
    WaveField::new(grid, grid.synthesize(&spec))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    /// When set, the run is repeated with `dt/2` and refused if the two
    /// results differ by more than this (relative to the initial norm).
    pub halving_tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub field: WaveField,
    pub steps: usize,
    pub halving_difference: Option<f64>,
    /// Fields at the requested checkpoints.
    pub checkpoints: Vec<(f64, WaveField)>,
}

/// Strang split-step evolution with the drive evaluated at the step
/// midpoint. Kinetic and drive factors are both diagonal in Fourier space.
pub fn evolve(
    psi0: &WaveField,
    grid: &SupercellGrid,
    v: &FourierPotential,
    forcing: &ForcingProfile,
    epsilon: f64,
    t_final: f64,
    opts: &EvolveOptions,
) -> Result<EvolveResult> {
    evolve_with_checkpoints(psi0, grid, v, forcing, epsilon, t_final, opts, &[])
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_with_checkpoints(
    psi0: &WaveField,
    grid: &SupercellGrid,
    v: &FourierPotential,
    forcing: &ForcingProfile,
    epsilon: f64,
    t_final: f64,
    opts: &EvolveOptions,
    checkpoints: &[f64],
) -> Result<EvolveResult> {
    if !(opts.dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::refused("evolve needs dt > 0 and t_final ≥ 0"));
    }
    let vals = grid.potential_values(v)?;
    let main = split_step(psi0, grid, &vals, forcing, epsilon, t_final, opts.dt, checkpoints)?;
    let mut halving_difference = None;
    if let Some(tol) = opts.halving_tol {
        let fine = split_step(psi0, grid, &vals, forcing, epsilon, t_final, opts.dt / 2.0, &[])?;
        let diff = main.0.sub(&fine.0).norm_l2 / psi0.norm_l2.max(f64::MIN_POSITIVE);
        halving_difference = Some(diff);
        if diff > tol {
            // second-order global error: shrink by the fourth root of the excess, with margin
            let rec = opts.dt * (tol / diff).sqrt() * 0.5;
            return Err(Error::StepControl {
                achieved: diff,
                tolerance: tol,
                steps: main.1,
                hint: format!("; recommended dt ≤ {rec:.3e}"),
            });
        }
    }
    Ok(EvolveResult { field: main.0, steps: main.1, halving_difference, checkpoints: main.2 })
}

type SplitOutput = (WaveField, usize, Vec<(f64, WaveField)>);

#[allow(clippy::too_many_arguments)]
fn split_step(
    psi0: &WaveField,
    grid: &SupercellGrid,
    vals: &[f64],
    forcing: &ForcingProfile,
    epsilon: f64,
    t_final: f64,
    dt: f64,
    checkpoints: &[f64],
) -> Result<SplitOutput> {
    let steps = if t_final == 0.0 { 0 } else { (t_final / dt).ceil().max(1.0) as usize };
    let h = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let modes = grid.modes();
    let q: Vec<Vec2> = modes.iter().map(|&(a, b)| grid.wavevector(a, b)).collect();
    let q2: Vec<f64> = q.iter().map(|v| lattice::dot(*v, *v)).collect();
    let vphase: Vec<Complex64> = vals.iter().map(|&x| Complex64::from_polar(1.0, -h * x)).collect();
    let norm = 1.0 / grid.len() as f64;
    let mut spec = psi0.values.clone();
    grid.fft2(&mut spec, true);
    spec.iter_mut().for_each(|z| *z *= norm);
    let mut cps: Vec<(usize, f64)> = checkpoints
        .iter()
        .map(|&t| (if h == 0.0 { 0 } else { (t / h).round() as usize }, t))
        .collect();
    cps.sort_by_key(|c| c.0);
    let mut out_cps = Vec::new();
    let mut next_cp = 0;
    let record = |step: usize, spec: &[Complex64], out: &mut Vec<(f64, WaveField)>, next: &mut usize| -> Result<()> {
        while *next < cps.len() && cps[*next].0 == step {
            let vals = grid.synthesize(spec);
            out.push((cps[*next].1, WaveField::new(grid, vals)?));
            *next += 1;
        }
        Ok(())
    };
    record(0, &spec, &mut out_cps, &mut next_cp)?;
    let drive = |n: usize| -> Vec2 {
        let a = forcing.a(epsilon * (n as f64 + 0.5) * h);
        [2.0 * epsilon * a[0], 2.0 * epsilon * a[1]]
    };
    for n in 0..steps {
        let w = drive(n);
        // half kinetic step: exp(−i h/2 (|q|² − 2εA·q))
        for (p, z) in spec.iter_mut().enumerate() {
            let e = q2[p] - (w[0] * q[p][0] + w[1] * q[p][1]);
            *z *= Complex64::from_polar(1.0, -0.5 * h * e);
        }
        grid.fft2(&mut spec, false);
        for (z, ph) in spec.iter_mut().zip(&vphase) {
            *z *= ph;
        }
        grid.fft2(&mut spec, true);
        for (p, z) in spec.iter_mut().enumerate() {
            let e = q2[p] - (w[0] * q[p][0] + w[1] * q[p][1]);
            *z *= Complex64::from_polar(1.0, -0.5 * h * e) * norm;
        }
        record(n + 1, &spec, &mut out_cps, &mut next_cp)?;
    }
    let vals = grid.synthesize(&spec);
    Ok((WaveField::new(grid, vals)?, steps, out_cps))
}

/// Effective forcing seen by the envelope for a lab-frame drive `A`.
///
/// Multiple-scale expansion of `2iεA·∇` on `εα(εx)Φ(x)` gives the momentum
/// shift `ξ − A`, while [`dirac::dirac_hat`] is written with `ξ + A`; the
/// envelope is therefore driven by `−A`.
pub fn envelope_forcing(lab: &ForcingProfile) -> ForcingProfile {
    lab.negated()
}

/// Applies the per-momentum Dirac propagator to every envelope mode.
pub fn dirac_envelope_evolve(
    env: &WavePacketEnvelope,
    lat: &Lattice2D,
    forcing: &ForcingProfile,
    v_d: f64,
    t_final: f64,
    ctl: &StepControl,
) -> Result<WavePacketEnvelope> {
    let modes: Result<Vec<(DualIndex, [Complex64; 2])>> = env
        .modes
        .par_iter()
        .map(|&(idx, a)| {
            let xi = env.xi(lat, idx);
            let u = dirac::propagate(xi, forcing, v_d, t_final, ctl)?.u;
            Ok((idx, [u[0][0] * a[0] + u[0][1] * a[1], u[1][0] * a[0] + u[1][1] * a[1]]))
        })
        .collect();
    Ok(WavePacketEnvelope { modes: modes?, ..env.clone() })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub t: f64,
    pub error: f64,
    pub relative_error: f64,
    pub norm: f64,
}

/// Error curve `‖U^ε ψ_wp(t) − ε α(εt, εx)ᵀΦ(x) e^{−iE_D t}‖` at multiples
/// of the physical forcing period `T_per/ε`.
#[allow(clippy::too_many_arguments)]
pub fn validate_effective_dynamics(
    v: &FourierPotential,
    d: &DiracPointData,
    forcing: &ForcingProfile,
    env: &WavePacketEnvelope,
    grid: &SupercellGrid,
    horizon_periods: usize,
    opts: &EvolveOptions,
    ctl: &StepControl,
) -> Result<Vec<ValidationRow>> {
    let eps = env.epsilon;
    let psi0 = build_wavepacket(env, d, grid)?;
    let period = forcing.t_per / eps;
    let times: Vec<f64> = (0..=horizon_periods).map(|p| p as f64 * period).collect();
    // align the step with the checkpoints
    let per_period = (period / opts.dt).ceil().max(1.0);
    let o = EvolveOptions { dt: period / per_period, ..*opts };
    let t_final = *times.last().expect("nonempty");
    let run = evolve_with_checkpoints(&psi0, grid, v, forcing, eps, t_final, &o, &times)?;
    let eff = envelope_forcing(forcing);
    let mut rows = Vec::new();
    for (t, field) in &run.checkpoints {
        let big_t = eps * t;
        let alpha = dirac_envelope_evolve(env, &grid.lat, &eff, d.v_d, big_t, ctl)?;
        let pred = build_wavepacket(&alpha, d, grid)?.scaled(Complex64::from_polar(1.0, -d.e_d * t));
        let err = field.sub(&pred).norm_l2;
        rows.push(ValidationRow { t: *t, error: err, relative_error: err / psi0.norm_l2, norm: field.norm_l2 });
    }
    Ok(rows)
}

pub fn write_validation_csv<W: std::io::Write>(rows: &[ValidationRow], mut out: W) -> std::io::Result<()> {
    use crate::io::fmt17;
    writeln!(out, "t,error,norm")?;
    for r in rows {
        writeln!(out, "{},{},{}", fmt17(r.t), fmt17(r.error), fmt17(r.norm))?;
    }
    Ok(())
}

/// Time stepper for the plane-wave monodromy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixScheme {
    /// Exponential midpoint rule, second order.
    ExpMidpoint,
    /// Commutator-free fourth-order exponential scheme.
    Cf4,
    /// Triple-jump composition of the symmetric splitting
    /// `e^{−iτD/2} e^{−iτH(k)} e^{−iτD/2}` (drive `D` at the substep
    /// midpoint), fourth order. `e^{−iτH(k)}` is diagonalized once.
    Split4,
}

impl MatrixScheme {
    pub fn order(self) -> i32 {
        match self {
            MatrixScheme::ExpMidpoint => 2,
            MatrixScheme::Cf4 | MatrixScheme::Split4 => 4,
        }
    }
}

/// Step control for the plane-wave monodromy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatrixStepControl {
    pub scheme: MatrixScheme,
    pub initial_steps: usize,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for MatrixStepControl {
    fn default() -> Self {
        MatrixStepControl { scheme: MatrixScheme::Cf4, initial_steps: 256, tol: 1e-6, max_steps: 1 << 16 }
    }
}

#[derive(Debug, Clone)]
pub struct BlochMonodromy {
    pub k: Vec2,
    pub matrix: CMat,
    pub steps: usize,
    pub step_difference: f64,
    pub unitarity_defect: f64,
}

/// `H(k) − 2εA(εt)·diag(k + g)`: the drive `2iεA·∇` acting on `e^{i(k+g)·x}`.
fn driven_hk(h0: &CMat, kg: &[Vec2], a: Vec2, epsilon: f64) -> CMat {
    let mut h = h0.clone();
    for (i, q) in kg.iter().enumerate() {
        h[(i, i)] -= c(drive_entry(q, a, epsilon), 0.0);
    }
    h
}

fn drive_entry(q: &Vec2, a: Vec2, epsilon: f64) -> f64 {
    2.0 * epsilon * (a[0] * q[0] + a[1] * q[1])
}

const YOSHIDA_OUTER: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_INNER: f64 = -1.702_414_383_919_315_3;

fn monodromy_fixed(
    h0: &CMat,
    h0_eig: &linalg::HermitianEigen,
    kg: &[Vec2],
    forcing: &ForcingProfile,
    epsilon: f64,
    steps: usize,
    scheme: MatrixScheme,
) -> Result<CMat> {
    let t_final = forcing.t_per / epsilon;
    let h = t_final / steps as f64;
    let n = h0.nrows();
    let mut u = CMat::identity(n, n);
    let at = |t: f64| forcing.a(epsilon * t);
    const NODE: f64 = 0.288_675_134_594_812_9;
    if scheme == MatrixScheme::Split4 {
        let outer = linalg::apply_spectral(h0_eig, |lam| Complex64::from_polar(1.0, -YOSHIDA_OUTER * h * lam));
        let inner = linalg::apply_spectral(h0_eig, |lam| Complex64::from_polar(1.0, -YOSHIDA_INNER * h * lam));
        // the drive term enters with a minus sign: e^{−iτ/2·(−w)} = e^{iτw/2}
        let half_drive = |u: &mut CMat, t_mid: f64, tau: f64| {
            let a = at(t_mid);
            for (i, q) in kg.iter().enumerate() {
                let ph = Complex64::from_polar(1.0, 0.5 * tau * drive_entry(q, a, epsilon));
                for j in 0..n {
                    u[(i, j)] *= ph;
                }
            }
        };
        for s in 0..steps {
            let mut t = s as f64 * h;
            for (w, e) in [(YOSHIDA_OUTER, &outer), (YOSHIDA_INNER, &inner), (YOSHIDA_OUTER, &outer)] {
                let tau = w * h;
                let mid = t + 0.5 * tau;
                half_drive(&mut u, mid, tau);
                u = e * &u;
                half_drive(&mut u, mid, tau);
                t += tau;
            }
        }
        return Ok(u);
    }
    for s in 0..steps {
        let t = s as f64 * h;
        let step = match scheme {
            MatrixScheme::ExpMidpoint => linalg::expm_hermitian(&driven_hk(h0, kg, at(t + 0.5 * h), epsilon), h)?,
            MatrixScheme::Cf4 => {
                let h1 = driven_hk(h0, kg, at(t + (0.5 - NODE) * h), epsilon);
                let h2 = driven_hk(h0, kg, at(t + (0.5 + NODE) * h), epsilon);
                let big = 0.25 + NODE;
                let small = 0.25 - NODE;
                let first = linalg::expm_hermitian(&(&h1 * c(big, 0.0) + &h2 * c(small, 0.0)), h)?;
                let second = linalg::expm_hermitian(&(&h1 * c(small, 0.0) + &h2 * c(big, 0.0)), h)?;
                second * first
            }
            MatrixScheme::Split4 => unreachable!(),
        };
        u = step * u;
    }
    Ok(u)
}

/// Full monodromy over one physical period `T_per/ε` in the fiber `L²_k`,
/// represented in a plane-wave basis.
pub fn schrodinger_monodromy_bloch(
    v: &FourierPotential,
    lat: &Lattice2D,
    forcing: &ForcingProfile,
    epsilon: f64,
    k: Vec2,
    basis: &PlaneWaveBasis,
    ctl: &MatrixStepControl,
) -> Result<BlochMonodromy> {
    if !(epsilon > 0.0) {
        return Err(Error::refused("schrodinger_monodromy_bloch needs ε > 0"));
    }
    let h0 = bloch::assemble_hk(v, lat, k, basis);
    let kg: Vec<Vec2> = basis.index_list.iter().map(|&g| lattice::add(k, lat.dual_vector(g))).collect();
    if forcing.is_zero() {
        let m = linalg::expm_hermitian(&h0, forcing.t_per / epsilon)?;
        let ud = linalg::unitarity_defect(&m);
        return Ok(BlochMonodromy { k, matrix: m, steps: 1, step_difference: 0.0, unitarity_defect: ud });
    }
    let mut n = ctl.initial_steps.max(1);
    let h0_eig = linalg::eigh(&h0)?;
    let mut coarse = monodromy_fixed(&h0, &h0_eig, &kg, forcing, epsilon, n, ctl.scheme)?;
    loop {
        let fine = monodromy_fixed(&h0, &h0_eig, &kg, forcing, epsilon, 2 * n, ctl.scheme)?;
        let diff = (&fine - &coarse).norm();
        if diff <= ctl.tol {
            let ud = linalg::unitarity_defect(&fine);
            return Ok(BlochMonodromy { k, matrix: fine, steps: 2 * n, step_difference: diff, unitarity_defect: ud });
        }
        if 4 * n > ctl.max_steps {
            return Err(Error::StepControl {
                achieved: diff,
                tolerance: ctl.tol,
                steps: 2 * n,
                hint: String::from("; increase max_steps or use a smaller plane-wave cutoff"),
            });
        }
        n *= 2;
        coarse = fine;
    }
}

/// Coefficient vector of a Dirac mode `e^{iκ·x}Φ_j` in the fiber `K + κ`,
/// in the Dirac basis ordering.
pub fn dirac_fiber_vectors(d: &DiracPointData) -> (CVec, CVec) {
    (d.phi1_vec(), d.phi2_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{find_dirac_point, DiracOptions};
    use crate::lattice::make_honeycomb_lattice;
    use crate::potential::make_canonical_honeycomb;

    fn dirac10() -> (Lattice2D, FourierPotential, DiracPointData) {
        let l = make_honeycomb_lattice();
        let v = make_canonical_honeycomb(10.0);
        let k = l.high_symmetry_points().k;
        let b = PlaneWaveBasis::centered(&l, 4, k);
        let d = find_dirac_point(&v, &l, &b, k, &DiracOptions::default()).unwrap();
        (l, v, d)
    }

    #[test]
    fn fft_round_trip_and_modes() {
        let l = make_honeycomb_lattice();
        let g = SupercellGrid::new(&l, 3, 4).unwrap();
        let vals: Vec<Complex64> = (0..g.len()).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let back = g.synthesize(&g.analyze(&vals));
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).norm() < 1e-9);
        }
        // a single plane wave lands in a single slot
        let q = g.wavevector(2, -1);
        let pw: Vec<Complex64> = (0..g.len())
            .map(|p| Complex64::from_polar(1.0, lattice::dot(q, g.point(p / g.side, p % g.side))))
            .collect();
        let spec = g.analyze(&pw);
        let idx = g.spectral_index(2, -1).unwrap();
        assert!((spec[idx] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(spec.iter().enumerate().all(|(i, z)| i == idx || z.norm() < 1e-12));
    }

    #[test]
    fn slots_cover_signed_range() {
        let l = make_honeycomb_lattice();
        for (n, m) in [(3, 4), (3, 5)] {
            let g = SupercellGrid::new(&l, n, m).unwrap();
            for s in 0..g.side {
                assert_eq!(g.slot(g.signed(s)), Some(s));
            }
            assert!(g.slot(g.side as i64).is_none());
        }
    }

    #[test]
    fn drive_multiplier_on_plane_wave() {
        // 2iεA·∇ e^{iξ·x} = −2εA·ξ e^{iξ·x}
        let l = make_honeycomb_lattice();
        let grid = SupercellGrid::new(&l, 3, 8).unwrap();
        let xi = grid.wavevector(1, 2);
        let eps = 0.25;
        let a = [0.3, -0.7];
        let pw: Vec<Complex64> = (0..grid.len())
            .map(|p| Complex64::from_polar(1.0, lattice::dot(xi, grid.point(p / grid.side, p % grid.side))))
            .collect();
        let spec = grid.analyze(&pw);
        // spectral gradient: multiply by i q
        let modes = grid.modes();
        let mut dx = spec.clone();
        let mut dy = spec.clone();
        for (p, &(ma, mb)) in modes.iter().enumerate() {
            let q = grid.wavevector(ma, mb);
            dx[p] *= c(0.0, q[0]);
            dy[p] *= c(0.0, q[1]);
        }
        let gx = grid.synthesize(&dx);
        let gy = grid.synthesize(&dy);
        let expect = -2.0 * eps * lattice::dot(a, xi);
        for p in 0..grid.len() {
            let applied = (gx[p] * a[0] + gy[p] * a[1]) * c(0.0, 2.0 * eps);
            assert!((applied - pw[p] * expect).norm() < 1e-10);
        }
    }

    #[test]
    fn free_plane_wave_phase() {
        let l = make_honeycomb_lattice();
        let grid = SupercellGrid::new(&l, 3, 4).unwrap();
        let xi = grid.wavevector(1, 1);
        let vals: Vec<Complex64> = (0..grid.len())
            .map(|p| Complex64::from_polar(1.0, lattice::dot(xi, grid.point(p / grid.side, p % grid.side))))
            .collect();
        let psi = WaveField::new(&grid, vals.clone()).unwrap();
        let z = ForcingProfile::zero(1.0).unwrap();
        let t = 0.37;
        let r = evolve(&psi, &grid, &FourierPotential::zero(), &z, 0.1, t, &EvolveOptions { dt: 0.01, halving_tol: None }).unwrap();
        let ph = Complex64::from_polar(1.0, -lattice::dot(xi, xi) * t);
        for (a, b) in r.field.values.iter().zip(&vals) {
            assert!((a - b * ph).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_envelope_packet() {
        let (l, _, d) = dirac10();
        let eps = 1.0 / 3.0;
        let grid = SupercellGrid::new(&l, 3, 16).unwrap();
        let env = WavePacketEnvelope::build(
            &l,
            &EnvelopeSpec::Modes { modes: vec![((0, 0), [c(1.0, 0.0), c(0.0, 0.0)])] },
            eps * 3.0,
            0.5,
            eps,
        )
        .unwrap();
        let psi = build_wavepacket(&env, &d, &grid).unwrap();
        // ψ = ε Φ1 with ⨍|Φ1|² = 1 over N² cells
        let expect = eps * grid.area().sqrt();
        assert!((psi.norm_l2 - expect).abs() < 1e-10 * expect);
        assert!((psi.norm_l2 - env.norm_l2(&l)).abs() < 1e-10);
        let bad = SupercellGrid::new(&l, 4, 16).unwrap();
        assert!(build_wavepacket(&env, &d, &bad).unwrap_err().is_refusal());
    }

    #[test]
    fn gaussian_envelope_is_band_limited() {
        let l = make_honeycomb_lattice();
        let env = WavePacketEnvelope::build(
            &l,
            &EnvelopeSpec::Gaussian { width: 4.0, amplitude: [c(1.0, 0.0), c(0.0, 1.0)] },
            60.0,
            0.5,
            0.1,
        )
        .unwrap();
        assert!(env.modes.len() > 1);
        assert!(env.leakage(&l) <= 1e-12);
        let bad = WavePacketEnvelope { modes: vec![((40, 0), [c(1.0, 0.0), c(0.0, 0.0)])], ..env.clone() };
        assert!(bad.check_band_limit(&l).is_err());
    }

    #[test]
    fn norm_preserved_by_split_step() {
        let (l, v, d) = dirac10();
        let grid = SupercellGrid::new(&l, 3, 16).unwrap();
        let eps = 1.0 / 3.0;
        let env = WavePacketEnvelope::build(
            &l,
            &EnvelopeSpec::Modes { modes: vec![((0, 0), [c(0.6, 0.0), c(0.0, 0.8)]), ((1, 0), [c(0.1, 0.0), c(0.2, 0.0)])] },
            1.0,
            8.0,
            eps,
        )
        .unwrap();
        let psi = build_wavepacket(&env, &d, &grid).unwrap();
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let r = evolve(&psi, &grid, &v, &f, eps, 0.5, &EvolveOptions { dt: 0.005, halving_tol: None }).unwrap();
        assert!((r.field.norm_l2 - psi.norm_l2).abs() <= 1e-12 * psi.norm_l2 * r.steps as f64);
        assert!((r.field.recompute_norm() - r.field.norm_l2).abs() <= 1e-12 * r.field.norm_l2);
    }

    #[test]
    fn bloch_mode_phase() {
        let (l, v, d) = dirac10();
        let grid = SupercellGrid::new(&l, 3, 16).unwrap();
        let center = grid.k_point_mode().unwrap();
        let psi = synthesize_bloch(&grid, center, &d.basis, &d.phi1).unwrap();
        let z = ForcingProfile::zero(PI_F).unwrap();
        let t = PI_F;
        let r = evolve(&psi, &grid, &v, &z, 1.0, t, &EvolveOptions { dt: 2.5e-4, halving_tol: None }).unwrap();
        let expect = psi.scaled(Complex64::from_polar(1.0, -d.e_d * t));
        let rel = r.field.sub(&expect).norm_l2 / psi.norm_l2;
        assert!(rel < 2e-4, "relative deviation {rel}");
    }

    const PI_F: f64 = std::f64::consts::PI;

    #[test]
    fn autonomous_bloch_monodromy() {
        let (l, v, d) = dirac10();
        let z = ForcingProfile::zero(PI_F).unwrap();
        let eps = 0.5;
        let m = schrodinger_monodromy_bloch(&v, &l, &z, eps, d.k_d, &d.basis, &MatrixStepControl::default()).unwrap();
        assert!(m.unitarity_defect < 1e-8);
        let u = &m.matrix * d.phi1_vec();
        let expect = d.phi1_vec() * Complex64::from_polar(1.0, -d.e_d * PI_F / eps);
        assert!((u - expect).norm() < 1e-9);
    }

    #[test]
    fn monodromy_schemes_agree() {
        let l = make_honeycomb_lattice();
        let v = make_canonical_honeycomb(10.0);
        let k = l.high_symmetry_points().k;
        let b = PlaneWaveBasis::centered(&l, 2, k);
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let eps = 0.5;
        let kk = lattice::add(k, [0.03, -0.02]);
        let run = |scheme, tol| {
            let ctl = MatrixStepControl { scheme, initial_steps: 16, tol, max_steps: 1 << 16 };
            schrodinger_monodromy_bloch(&v, &l, &f, eps, kk, &b, &ctl).unwrap()
        };
        let a = run(MatrixScheme::Split4, 1e-9);
        let c4 = run(MatrixScheme::Cf4, 1e-9);
        assert!((&a.matrix - &c4.matrix).norm() < 1e-8);
        assert!(a.unitarity_defect < 1e-8, "{}", a.unitarity_defect);
        // fourth order: doubling the steps shrinks the error about 16x
        let h0 = bloch::assemble_hk(&v, &l, kk, &b);
        let e0 = linalg::eigh(&h0).unwrap();
        let kg: Vec<Vec2> = b.index_list.iter().map(|&g| lattice::add(kk, l.dual_vector(g))).collect();
        let e1 = (&monodromy_fixed(&h0, &e0, &kg, &f, eps, 1600, MatrixScheme::Split4).unwrap() - &a.matrix).norm();
        let e2 = (&monodromy_fixed(&h0, &e0, &kg, &f, eps, 3200, MatrixScheme::Split4).unwrap() - &a.matrix).norm();
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.5, "observed order {order}");
    }
}
