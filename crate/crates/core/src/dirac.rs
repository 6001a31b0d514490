//! The effective driven Dirac system at fixed envelope momentum `ξ`:
//! `i ∂_T α = D̂(T; ξ) α` with
//! `D̂(T; ξ) = v_D[(ξ1 + A1(T))σ1 − (ξ2 + A2(T))σ2]`.
//!
//! Floquet exponents use the branch `μ·T_per ∈ [0, π]`: the two multipliers
//! of a unit-determinant unitary are `e^{±iθ}`, and labelling the one with
//! `θ ∈ [0, π]` as `λ₊` makes `μ·T_per` the arc distance from the point 1.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt17;
use crate::lattice::Vec2;
use crate::linalg::{self, c, frob2, mul2, M2};

pub const SIGMA1: M2 = [[c0(0.0), c0(1.0)], [c0(1.0), c0(0.0)]];
pub const SIGMA2: M2 = [
    [c0(0.0), Complex64 { re: 0.0, im: -1.0 }],
    [Complex64 { re: 0.0, im: 1.0 }, c0(0.0)],
];

const fn c0(re: f64) -> Complex64 {
    Complex64 { re, im: 0.0 }
}

/// Shape of the vector potential `A(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingKind {
    Zero,
    /// `A(T) = R (cos(ωT + φ), sin(ωT + φ))`.
    Circular {
        r_amp: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Equispaced samples of `A` over one period, trigonometrically
    /// interpolated.
    Tabulated { samples: Vec<Vec2> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingProfile {
    pub t_per: f64,
    pub kind: ForcingKind,
    pub zero_mean: bool,
    #[serde(skip)]
    trig: Option<TrigSeries>,
}

/// Real trigonometric interpolant of a periodic sample table.
#[derive(Debug, Clone, PartialEq)]
struct TrigSeries {
    mean: Vec2,
    /// `(frequency index, cos coefficients, sin coefficients)`.
    terms: Vec<(f64, Vec2, Vec2)>,
}

impl TrigSeries {
    fn new(samples: &[Vec2]) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let mut mean = [0.0; 2];
        for s in samples {
            mean[0] += s[0] / nf;
            mean[1] += s[1] / nf;
        }
        let mut terms = Vec::new();
        for m in 1..=n / 2 {
            let mut a = [0.0; 2];
            let mut b = [0.0; 2];
            for (j, s) in samples.iter().enumerate() {
                let th = 2.0 * PI * (m * j) as f64 / nf;
                for d in 0..2 {
                    a[d] += 2.0 * s[d] * th.cos() / nf;
                    b[d] += 2.0 * s[d] * th.sin() / nf;
                }
            }
            if 2 * m == n {
                // Nyquist term is shared between ±m
                a = [a[0] / 2.0, a[1] / 2.0];
                b = [0.0, 0.0];
            }
            terms.push((m as f64, a, b));
        }
        TrigSeries { mean, terms }
    }

    fn eval(&self, phase: f64) -> Vec2 {
        let mut out = self.mean;
        for &(m, a, b) in &self.terms {
            let (s, co) = (m * phase).sin_cos();
            out[0] += a[0] * co + b[0] * s;
            out[1] += a[1] * co + b[1] * s;
        }
        out
    }
}

impl ForcingProfile {
    pub fn new(t_per: f64, kind: ForcingKind) -> Result<Self> {
        if !(t_per.is_finite() && t_per > 0.0) {
            return Err(Error::refused(format!("forcing period must be positive and finite, got {t_per}")));
        }
        let mut trig = None;
        let zero_mean = match &kind {
            ForcingKind::Zero => true,
            ForcingKind::Circular { r_amp, omega, phase } => {
                if ![*r_amp, *omega, *phase].iter().all(|x| x.is_finite()) {
                    return Err(Error::refused("circular forcing parameters must be finite"));
                }
                if (t_per * omega - 2.0 * PI).abs() > 1e-12 * 2.0 * PI {
                    return Err(Error::refused(format!(
                        "circular forcing needs T_per·ω = 2π, got {}",
                        t_per * omega
                    )));
                }
                true
            }
            ForcingKind::Tabulated { samples } => {
                if samples.len() < 2 {
                    return Err(Error::refused("tabulated forcing needs at least two samples"));
                }
                if samples.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::refused("tabulated forcing has non-finite samples"));
                }
                let t = TrigSeries::new(samples);
                // the interpolant integrates to T_per times the sample mean
                let zm = t.mean[0].abs() * t_per <= 1e-10 && t.mean[1].abs() * t_per <= 1e-10;
                trig = Some(t);
                zm
            }
        };
        Ok(ForcingProfile { t_per, kind, zero_mean, trig })
    }

    /// Circular forcing with one cycle per period, `T_per = 2π/ω`.
    pub fn circular(r_amp: f64, omega: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::refused("circular forcing needs ω > 0"));
        }
        Self::new(2.0 * PI / omega, ForcingKind::Circular { r_amp, omega, phase: 0.0 })
    }

    pub fn zero(t_per: f64) -> Result<Self> {
        Self::new(t_per, ForcingKind::Zero)
    }

    pub fn tabulated(t_per: f64, samples: Vec<Vec2>) -> Result<Self> {
        Self::new(t_per, ForcingKind::Tabulated { samples })
    }

    pub fn a(&self, t: f64) -> Vec2 {
        match &self.kind {
            ForcingKind::Zero => [0.0, 0.0],
            ForcingKind::Circular { r_amp, omega, phase } => {
                let (s, co) = (omega * t + phase).sin_cos();
                [r_amp * co, r_amp * s]
            }
            ForcingKind::Tabulated { samples } => {
                let phase = 2.0 * PI * t / self.t_per;
                match &self.trig {
                    Some(tr) => tr.eval(phase),
                    None => TrigSeries::new(samples).eval(phase),
                }
            }
        }
    }

    /// `−A(T)`, e.g. to express the same drive with the opposite coupling sign.
    pub fn negated(&self) -> Self {
        let kind = match &self.kind {
            ForcingKind::Zero => ForcingKind::Zero,
            ForcingKind::Circular { r_amp, omega, phase } => {
                ForcingKind::Circular { r_amp: *r_amp, omega: *omega, phase: phase + PI }
            }
            ForcingKind::Tabulated { samples } => {
                ForcingKind::Tabulated { samples: samples.iter().map(|s| [-s[0], -s[1]]).collect() }
            }
        };
        ForcingProfile::new(self.t_per, kind).expect("negation preserves validity")
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            ForcingKind::Zero => true,
            ForcingKind::Circular { r_amp, .. } => *r_amp == 0.0,
            ForcingKind::Tabulated { samples } => samples.iter().flatten().all(|x| *x == 0.0),
        }
    }

    /// `(sup |A|, sup |A'|)` from a dense scan of one period.
    pub fn sup_norms(&self, samples: usize) -> (f64, f64) {
        let n = samples.max(8);
        let h = self.t_per / n as f64;
        let mut sa: f64 = 0.0;
        let mut sd: f64 = 0.0;
        for j in 0..n {
            let t = j as f64 * h;
            let a = self.a(t);
            sa = sa.max(a[0].hypot(a[1]));
            let ap = self.a(t + 1e-6 * self.t_per);
            let am = self.a(t - 1e-6 * self.t_per);
            let d = [(ap[0] - am[0]) / (2e-6 * self.t_per), (ap[1] - am[1]) / (2e-6 * self.t_per)];
            sd = sd.max(d[0].hypot(d[1]));
        }
        (sa, sd)
    }
}

/// `v_D[(ξ1 + A1(T))σ1 − (ξ2 + A2(T))σ2]`.
pub fn dirac_hat(xi: Vec2, t: f64, forcing: &ForcingProfile, v_d: f64) -> M2 {
    let a = forcing.a(t);
    let p = xi[0] + a[0];
    let q = xi[1] + a[1];
    [[c(0.0, 0.0), c(v_d * p, v_d * q)], [c(v_d * p, -v_d * q), c(0.0, 0.0)]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential midpoint rule, second order.
    ExpMidpoint,
    /// Fourth-order commutator-free exponential scheme with two Gauss nodes.
    Cf4,
}

impl Scheme {
    pub fn order(self) -> i32 {
        match self {
            Scheme::ExpMidpoint => 2,
            Scheme::Cf4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepControl {
    pub scheme: Scheme,
    pub initial_steps: usize,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { scheme: Scheme::Cf4, initial_steps: 32, tol: 1e-10, max_steps: 1 << 22 }
    }
}

const CF4_NODES: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];
const CF4_BIG: f64 = 0.25 + 0.288_675_134_594_812_9;
const CF4_SMALL: f64 = 0.25 - 0.288_675_134_594_812_9;

fn lin2(a: f64, x: &M2, b: f64, y: &M2) -> M2 {
    let mut out = [[Complex64::default(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][j] * a + y[i][j] * b;
        }
    }
    out
}

/// Fixed-step propagator from `t0` to `t1`.
pub fn propagate_fixed(xi: Vec2, forcing: &ForcingProfile, v_d: f64, t0: f64, t1: f64, steps: usize, scheme: Scheme) -> M2 {
    let steps = steps.max(1);
    let h = (t1 - t0) / steps as f64;
    let mut u = linalg::identity2();
    if h == 0.0 {
        return u;
    }
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let step = match scheme {
            Scheme::ExpMidpoint => linalg::expm_traceless_2x2(&dirac_hat(xi, t + 0.5 * h, forcing, v_d), h),
            Scheme::Cf4 => {
                let h1 = dirac_hat(xi, t + CF4_NODES[0] * h, forcing, v_d);
                let h2 = dirac_hat(xi, t + CF4_NODES[1] * h, forcing, v_d);
                let first = linalg::expm_traceless_2x2(&lin2(CF4_BIG, &h1, CF4_SMALL, &h2), h);
                let second = linalg::expm_traceless_2x2(&lin2(CF4_SMALL, &h1, CF4_BIG, &h2), h);
                mul2(&second, &first)
            }
        };
        u = mul2(&step, &u);
    }
    u
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Propagation {
    pub u: M2,
    pub steps: usize,
    /// Richardson estimate of the error of `u`.
    pub error_estimate: f64,
}

/// Propagator with step doubling until two successive approximations agree
/// to `ctl.tol`.
pub fn propagate_between(
    xi: Vec2,
    forcing: &ForcingProfile,
    v_d: f64,
    t0: f64,
    t1: f64,
    ctl: &StepControl,
) -> Result<Propagation> {
    if t1 == t0 {
        return Ok(Propagation { u: linalg::identity2(), steps: 0, error_estimate: 0.0 });
    }
    let mut n = ctl.initial_steps.max(1);
    let mut coarse = propagate_fixed(xi, forcing, v_d, t0, t1, n, ctl.scheme);
    let gain = 2f64.powi(ctl.scheme.order()) - 1.0;
    loop {
        let fine = propagate_fixed(xi, forcing, v_d, t0, t1, 2 * n, ctl.scheme);
        let diff = frob2(&linalg::sub2(&fine, &coarse));
        if diff <= ctl.tol {
            return Ok(Propagation { u: fine, steps: 2 * n, error_estimate: diff / gain });
        }
        if 4 * n > ctl.max_steps {
            return Err(Error::StepControl {
                achieved: diff,
                tolerance: ctl.tol,
                steps: 2 * n,
                hint: String::from("; increase max_steps or relax the tolerance"),
            });
        }
        n *= 2;
        coarse = fine;
    }
}

pub fn propagate(xi: Vec2, forcing: &ForcingProfile, v_d: f64, t_final: f64, ctl: &StepControl) -> Result<Propagation> {
    propagate_between(xi, forcing, v_d, 0.0, t_final, ctl)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Monodromy2 {
    pub xi: Vec2,
    pub matrix: M2,
    pub t_per: f64,
    pub steps: usize,
    pub error_estimate: f64,
}

impl Monodromy2 {
    pub fn unitarity_defect(&self) -> f64 {
        let p = mul2(&linalg::adjoint2(&self.matrix), &self.matrix);
        frob2(&linalg::sub2(&p, &linalg::identity2()))
    }

    pub fn det_defect(&self) -> f64 {
        (linalg::det2(&self.matrix) - c(1.0, 0.0)).norm()
    }
}

pub fn monodromy(xi: Vec2, forcing: &ForcingProfile, v_d: f64, ctl: &StepControl) -> Result<Monodromy2> {
    let p = propagate(xi, forcing, v_d, forcing.t_per, ctl)?;
    Ok(Monodromy2 { xi, matrix: p.u, t_per: forcing.t_per, steps: p.steps, error_estimate: p.error_estimate })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FloquetSample {
    pub xi: Vec2,
    pub mu: f64,
    /// `μ·T_per ∈ [0, π]`.
    pub mu_t: f64,
    /// `(e^{iμT}, e^{−iμT})`.
    pub multipliers: (Complex64, Complex64),
    pub v_plus: [Complex64; 2],
    pub v_minus: [Complex64; 2],
}

/// Multipliers and eigenvectors of a unit-determinant unitary 2×2 matrix
/// written as `M = cos θ·I − i sin θ·(n·σ)` with `θ ∈ [0, π]`.
pub fn floquet_exponent(m: &Monodromy2) -> FloquetSample {
    let u = &m.matrix;
    let half_tr = 0.5 * (u[0][0] + u[1][1]);
    // Hermitian part K = (M − M†)/2i, traceless piece −sin θ·(n·σ)
    let k = [
        [(u[0][0] - u[0][0].conj()) * c(0.0, -0.5), (u[0][1] - u[1][0].conj()) * c(0.0, -0.5)],
        [(u[1][0] - u[0][1].conj()) * c(0.0, -0.5), (u[1][1] - u[1][1].conj()) * c(0.0, -0.5)],
    ];
    let kt = 0.5 * (k[0][0].re + k[1][1].re);
    let a = k[0][0].re - kt;
    let z = k[0][1];
    let s = (a * a + z.norm_sqr()).sqrt();
    let theta = s.atan2(half_tr.re);
    let lp = Complex64::from_polar(1.0, theta);
    let (v_plus, v_minus) = if s < 1e-13 {
        ([c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)])
    } else {
        // eigenvector of [[a, z], [z̄, −a]] for +s
        let (p, q) = if a >= 0.0 { (c(a + s, 0.0), z.conj()) } else { (z, c(s - a, 0.0)) };
        let nrm = (p.norm_sqr() + q.norm_sqr()).sqrt();
        let vp = [p / nrm, q / nrm];
        (vp, [-vp[1].conj(), vp[0].conj()])
    };
    FloquetSample {
        xi: m.xi,
        mu: theta / m.t_per,
        mu_t: theta,
        multipliers: (lp, lp.conj()),
        v_plus,
        v_minus,
    }
}

/// `μ(0) = (√(ω² + 4R²v_D²) − ω)/2`, unfolded.
pub fn exponent_at_zero_analytic(r_amp: f64, omega: f64, v_d: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::refused("exponent_at_zero_analytic needs ω > 0"));
    }
    Ok(0.5 * ((omega * omega + 4.0 * r_amp * r_amp * v_d * v_d).sqrt() - omega))
}

/// Arc distance of `e^{iθ}` from 1, in `[0, π]`.
pub fn branch_fold(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    t.min(2.0 * PI - t)
}

#[derive(Debug, Clone, Serialize)]
pub struct PolarGrid {
    pub d0: f64,
    pub n_radial: usize,
    pub n_angular: usize,
}

impl PolarGrid {
    /// `ξ = 0` once, then `n_radial` rings up to `d0` with `n_angular` points.
    pub fn points(&self) -> Vec<Vec2> {
        let mut pts = vec![[0.0, 0.0]];
        for i in 1..=self.n_radial {
            let r = self.d0 * i as f64 / self.n_radial as f64;
            for j in 0..self.n_angular {
                let a = 2.0 * PI * j as f64 / self.n_angular as f64;
                pts.push([r * a.cos(), r * a.sin()]);
            }
        }
        pts
    }
}

pub fn floquet_samples(points: &[Vec2], forcing: &ForcingProfile, v_d: f64, ctl: &StepControl) -> Result<Vec<FloquetSample>> {
    points
        .par_iter()
        .map(|&xi| Ok(floquet_exponent(&monodromy(xi, forcing, v_d, ctl)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub g_tilde: f64,
    pub argmin_xi: Vec2,
    pub d0: f64,
    pub grid: PolarGrid,
    #[serde(skip)]
    pub samples: Vec<FloquetSample>,
}

/// Smallest arc distance of the multipliers from 1 over `|ξ| ≤ d0`, divided
/// by `T_per`.
pub fn gap_over_disk(
    forcing: &ForcingProfile,
    v_d: f64,
    d0: f64,
    n_radial: usize,
    n_angular: usize,
    ctl: &StepControl,
) -> Result<GapReport> {
    if !(d0 > 0.0) {
        return Err(Error::refused("gap_over_disk needs d0 > 0"));
    }
    let grid = PolarGrid { d0, n_radial: n_radial.max(1), n_angular: n_angular.max(1) };
    let samples = floquet_samples(&grid.points(), forcing, v_d, ctl)?;
    let best = samples
        .iter()
        .min_by(|a, b| a.mu_t.total_cmp(&b.mu_t))
        .expect("grid contains ξ = 0");
    Ok(GapReport { g_tilde: best.mu_t / forcing.t_per, argmin_xi: best.xi, d0, grid, samples })
}

pub fn write_samples_csv<W: Write>(samples: &[FloquetSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "xi_x,xi_y,mu,mult_re,mult_im")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt17(s.xi[0]),
            fmt17(s.xi[1]),
            fmt17(s.mu),
            fmt17(s.multipliers.0.re),
            fmt17(s.multipliers.0.im)
        )?;
    }
    Ok(())
}

/// Frobenius distance, in the `σ1` eigenbasis `w± = (1, ±1)/√2`, between the
/// monodromy at `(ξ, 0)` with `v_D = 1` and `diag(e^{−iξT}, e^{iξT})`.
pub fn wkb_residual(xi: f64, forcing: &ForcingProfile, ctl: &StepControl) -> Result<f64> {
    if !forcing.zero_mean {
        return Err(Error::refused("wkb_residual assumes a zero-mean forcing"));
    }
    if !(xi > 0.0) {
        return Err(Error::refused("wkb_residual needs ξ > 0"));
    }
    // keep the per-step phase small at large ξ
    let mut ctl = *ctl;
    let (sa, _) = forcing.sup_norms(64);
    let phase = (xi + sa) * forcing.t_per;
    ctl.initial_steps = ctl.initial_steps.max((phase / 0.5).ceil() as usize);
    let m = monodromy([xi, 0.0], forcing, 1.0, &ctl)?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let w = [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]];
    let conj = mul2(&w, &mul2(&m.matrix, &w));
    let e = xi * forcing.t_per;
    let target = [
        [Complex64::from_polar(1.0, -e), c(0.0, 0.0)],
        [c(0.0, 0.0), Complex64::from_polar(1.0, e)],
    ];
    Ok(frob2(&linalg::sub2(&conj, &target)))
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub d0: f64,
    pub bins: usize,
    pub covered_fraction: f64,
    pub samples: usize,
}

/// Momentum set for coverage scans: rings at a fixed radial step, so grids
/// for increasing `d0` are nested.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub radial_step: f64,
    pub n_angular: usize,
    pub bins: usize,
}

impl CoverageGrid {
    pub fn points(&self, d0: f64) -> Vec<Vec2> {
        let mut pts = vec![[0.0, 0.0]];
        let mut i = 1;
        loop {
            let r = i as f64 * self.radial_step;
            if r > d0 * (1.0 + 1e-12) {
                break;
            }
            for j in 0..self.n_angular.max(1) {
                let a = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / self.n_angular.max(1) as f64;
                pts.push([r * a.cos(), r * a.sin()]);
            }
            i += 1;
        }
        pts
    }
}

fn bin_of(phase: f64, bins: usize) -> usize {
    let f = phase.rem_euclid(2.0 * PI) / (2.0 * PI);
    ((f * bins as f64) as usize).min(bins - 1)
}

fn coverage_from(samples: &[FloquetSample], bins: usize) -> f64 {
    let mut hit = vec![false; bins];
    for s in samples {
        hit[bin_of(s.mu_t, bins)] = true;
        hit[bin_of(-s.mu_t, bins)] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / bins as f64
}

/// Fraction of unit-circle arcs hit by `e^{±iμ(ξ)T}` over `|ξ| ≤ d0`.
pub fn circle_coverage(
    forcing: &ForcingProfile,
    v_d: f64,
    d0: f64,
    grid: &CoverageGrid,
    ctl: &StepControl,
) -> Result<CoverageReport> {
    if !(d0 > 0.0) {
        return Err(Error::refused("circle_coverage needs d0 > 0"));
    }
    if grid.bins == 0 || !(grid.radial_step > 0.0) {
        return Err(Error::refused("coverage grid needs bins ≥ 1 and a positive radial step"));
    }
    let samples = floquet_samples(&grid.points(d0), forcing, v_d, ctl)?;
    Ok(CoverageReport { d0, bins: grid.bins, covered_fraction: coverage_from(&samples, grid.bins), samples: samples.len() })
}

/// Coverage along an increasing ladder of radii, sharing one sample set.
/// Returns the reports and the first `d0` reaching `target`, if any.
pub fn coverage_scan(
    forcing: &ForcingProfile,
    v_d: f64,
    ladder: &[f64],
    grid: &CoverageGrid,
    target: f64,
    ctl: &StepControl,
) -> Result<(Vec<CoverageReport>, Option<f64>)> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) || !(ladder[0] > 0.0) {
        return Err(Error::refused("coverage ladder must be positive and strictly increasing"));
    }
    if grid.bins == 0 || !(grid.radial_step > 0.0) {
        return Err(Error::refused("coverage grid needs bins ≥ 1 and a positive radial step"));
    }
    let dmax = *ladder.last().expect("nonempty");
    let pts = grid.points(dmax);
    let samples = floquet_samples(&pts, forcing, v_d, ctl)?;
    let mut reports = Vec::new();
    let mut first = None;
    for &d0 in ladder {
        let sub: Vec<FloquetSample> =
            samples.iter().filter(|s| s.xi[0].hypot(s.xi[1]) <= d0 * (1.0 + 1e-12)).copied().collect();
        let f = coverage_from(&sub, grid.bins);
        if first.is_none() && f >= target {
            first = Some(d0);
        }
        reports.push(CoverageReport { d0, bins: grid.bins, covered_fraction: f, samples: sub.len() });
    }
    Ok((reports, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &M2, b: &M2) -> f64 {
        frob2(&linalg::sub2(a, b))
    }

    #[test]
    fn hamiltonian_entries() {
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let h = dirac_hat([0.0, 0.0], 0.0, &f, 1.5);
        assert_eq!(h[0][1], c(1.5, 0.0));
        assert_eq!(h[1][0], c(1.5, 0.0));
        let z = ForcingProfile::zero(1.0).unwrap();
        let h = dirac_hat([1.0, 0.0], 0.3, &z, 1.0);
        assert_eq!(h, SIGMA1);
        // paper form: top-right v(ξ1 + iξ2 + R e^{iωT})
        let t = 0.37;
        let h = dirac_hat([0.2, -0.4], t, &f, 2.0);
        let e = Complex64::from_polar(1.0, 2.0 * t);
        assert!((h[0][1] - (c(0.2, -0.4) + e) * 2.0).norm() < 1e-14);
        assert!((h[1][0] - (c(0.2, 0.4) + e.conj()) * 2.0).norm() < 1e-14);
    }

    #[test]
    fn forcing_validation() {
        assert!(ForcingProfile::new(1.0, ForcingKind::Circular { r_amp: 1.0, omega: 2.0, phase: 0.0 })
            .unwrap_err()
            .is_refusal());
        let t = ForcingProfile::tabulated(2.0, vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!(t.zero_mean);
        let a = t.a(0.5);
        assert!((a[0]).abs() < 1e-14 && (a[1] - 1.0).abs() < 1e-14);
        let b = ForcingProfile::tabulated(2.0, vec![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(!b.zero_mean);
        let n = ForcingProfile::circular(1.0, 2.0).unwrap().negated();
        let a = n.a(0.3);
        assert!((a[0] + (0.6f64).cos()).abs() < 1e-14);
    }

    #[test]
    fn constant_hamiltonian_exponential() {
        let z = ForcingProfile::zero(1.0).unwrap();
        let p = propagate([1.0, 0.0], &z, 1.0, PI / 2.0, &StepControl::default()).unwrap();
        let target = [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, -1.0), c(0.0, 0.0)]];
        assert!(close(&p.u, &target) < 1e-12);
        let p0 = propagate([1.0, 0.0], &z, 1.0, 0.0, &StepControl::default()).unwrap();
        assert_eq!(p0.u, linalg::identity2());
    }

    /// Classical RK4 on `U' = −i H(T) U`, an independent oracle.
    fn rk4(xi: Vec2, f: &ForcingProfile, v_d: f64, t_final: f64, steps: usize) -> M2 {
        let h = t_final / steps as f64;
        let rhs = |t: f64, u: &M2| -> M2 {
            let m = mul2(&dirac_hat(xi, t, f, v_d), u);
            [[m[0][0] * c(0.0, -1.0), m[0][1] * c(0.0, -1.0)], [m[1][0] * c(0.0, -1.0), m[1][1] * c(0.0, -1.0)]]
        };
        let mut u = linalg::identity2();
        for n in 0..steps {
            let t = n as f64 * h;
            let k1 = rhs(t, &u);
            let k2 = rhs(t + h / 2.0, &lin2(1.0, &u, h / 2.0, &k1));
            let k3 = rhs(t + h / 2.0, &lin2(1.0, &u, h / 2.0, &k2));
            let k4 = rhs(t + h, &lin2(1.0, &u, h, &k3));
            let s = lin2(1.0, &lin2(1.0, &k1, 2.0, &k2), 1.0, &lin2(2.0, &k3, 1.0, &k4));
            u = lin2(1.0, &u, h / 6.0, &s);
        }
        u
    }

    #[test]
    fn matches_fine_rk4() {
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let xi = [0.3, -0.1];
        let oracle = rk4(xi, &f, 1.0, f.t_per, 1_000_000);
        for scheme in [Scheme::Cf4, Scheme::ExpMidpoint] {
            let ctl = StepControl { scheme, ..StepControl::default() };
            let p = propagate(xi, &f, 1.0, f.t_per, &ctl).unwrap();
            assert!(close(&p.u, &oracle) < 1e-8, "{scheme:?}: {}", close(&p.u, &oracle));
        }
    }

    #[test]
    fn observed_orders() {
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let xi = [0.3, -0.1];
        let exact = propagate_fixed(xi, &f, 1.0, 0.0, f.t_per, 4096, Scheme::Cf4);
        for (scheme, p) in [(Scheme::ExpMidpoint, 2.0), (Scheme::Cf4, 4.0)] {
            let e1 = close(&propagate_fixed(xi, &f, 1.0, 0.0, f.t_per, 32, scheme), &exact);
            let e2 = close(&propagate_fixed(xi, &f, 1.0, 0.0, f.t_per, 64, scheme), &exact);
            let observed = (e1 / e2).log2();
            assert!((observed - p).abs() < 0.3, "{scheme:?}: observed order {observed}");
        }
    }

    #[test]
    fn autonomous_monodromy() {
        let z = ForcingProfile::zero(2.0).unwrap();
        let xi = [0.4, 0.3];
        let m = monodromy(xi, &z, 1.3, &StepControl::default()).unwrap();
        let s = floquet_exponent(&m);
        assert!((s.mu_t - branch_fold(1.3 * 0.5 * 2.0)).abs() < 1e-10);
    }

    #[test]
    fn exponent_at_zero_examples() {
        assert!((exponent_at_zero_analytic(1.0, 2.0, 1.0).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(exponent_at_zero_analytic(0.0, 2.0, 1.0).unwrap(), 0.0);
        assert!((exponent_at_zero_analytic(2.0, 3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(exponent_at_zero_analytic(1.0, 0.0, 1.0).unwrap_err().is_refusal());
    }

    #[test]
    fn exponent_examples() {
        let m = Monodromy2 { xi: [0.0, 0.0], matrix: linalg::identity2(), t_per: 1.0, steps: 0, error_estimate: 0.0 };
        assert_eq!(floquet_exponent(&m).mu, 0.0);
        let d = [[Complex64::from_polar(1.0, 0.7), c(0.0, 0.0)], [c(0.0, 0.0), Complex64::from_polar(1.0, -0.7)]];
        let s = floquet_exponent(&Monodromy2 { matrix: d, ..m });
        assert!((s.mu_t - 0.7).abs() < 1e-15);
        assert!((s.v_plus[0].norm() - 1.0).abs() < 1e-15);
        let minus = [[c(-1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let s = floquet_exponent(&Monodromy2 { matrix: minus, ..m });
        assert!((s.mu_t - PI).abs() < 1e-15);
        assert_eq!(s.v_plus, [c(1.0, 0.0), c(0.0, 0.0)]);
    }

    /// Characteristic-polynomial oracle for random SU(2) matrices.
    #[test]
    fn multipliers_match_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let (a, b) = (a / n, b / n);
            let u = [[a, b], [-b.conj(), a.conj()]];
            let s = floquet_exponent(&Monodromy2 { xi: [0.0, 0.0], matrix: u, t_per: 1.0, steps: 0, error_estimate: 0.0 });
            let tr = u[0][0] + u[1][1];
            let det = linalg::det2(&u);
            let disc = (tr * tr - det * 4.0).sqrt();
            let roots = [(tr + disc) / 2.0, (tr - disc) / 2.0];
            for lam in [s.multipliers.0, s.multipliers.1] {
                let d = roots.iter().map(|r| (r - lam).norm()).fold(f64::INFINITY, f64::min);
                assert!(d < 1e-12, "{d}");
            }
            let mv = [u[0][0] * s.v_plus[0] + u[0][1] * s.v_plus[1], u[1][0] * s.v_plus[0] + u[1][1] * s.v_plus[1]];
            assert!((mv[0] - s.multipliers.0 * s.v_plus[0]).norm() < 1e-12);
            assert!((mv[1] - s.multipliers.0 * s.v_plus[1]).norm() < 1e-12);
            let ip = s.v_plus[0].conj() * s.v_minus[0] + s.v_plus[1].conj() * s.v_minus[1];
            assert!(ip.norm() < 1e-15);
        }
    }

    #[test]
    fn random_tables_give_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let samples: Vec<Vec2> = (0..9).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            let f = ForcingProfile::tabulated(1.5, samples).unwrap();
            let m = monodromy([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], &f, 1.0, &StepControl::default()).unwrap();
            assert!(m.det_defect() < 1e-10);
            assert!(m.unitarity_defect() < 1e-10);
        }
    }

    #[test]
    fn unforced_gap_is_zero() {
        let z = ForcingProfile::zero(PI).unwrap();
        let g = gap_over_disk(&z, 1.0, 0.5, 4, 8, &StepControl::default()).unwrap();
        assert_eq!(g.g_tilde, 0.0);
        assert_eq!(g.argmin_xi, [0.0, 0.0]);
    }

    #[test]
    fn step_control_failure_is_reported() {
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let ctl = StepControl { max_steps: 8, initial_steps: 2, ..StepControl::default() };
        let e = propagate([5.0, 0.0], &f, 1.0, f.t_per, &ctl).unwrap_err();
        assert!(matches!(e, Error::StepControl { .. }));
    }

    #[test]
    fn wkb_refusals_and_zero_forcing() {
        let b = ForcingProfile::tabulated(PI, vec![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(wkb_residual(10.0, &b, &StepControl::default()).unwrap_err().is_refusal());
        let z = ForcingProfile::zero(PI).unwrap();
        assert!(wkb_residual(10.0, &z, &StepControl::default()).unwrap() < 1e-9);
        assert!(wkb_residual(-1.0, &z, &StepControl::default()).unwrap_err().is_refusal());
    }

    #[test]
    fn coverage_small_disk() {
        let f = ForcingProfile::circular(1.0, 2.0).unwrap();
        let grid = CoverageGrid { radial_step: 1.0, n_angular: 4, bins: 720 };
        let r = circle_coverage(&f, 1.0, 1e-3, &grid, &StepControl::default()).unwrap();
        assert_eq!(r.samples, 1);
        assert!((r.covered_fraction - 2.0 / 720.0).abs() < 1e-15);
    }
}
