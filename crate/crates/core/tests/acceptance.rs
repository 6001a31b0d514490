//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line. Criteria run one at a time so that the
//! wall-clock budgets are measured without contention.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use floquet_dirac::bloch::{self, find_dirac_point, DiracOptions, DiracPointData, PlaneWaveBasis};
use floquet_dirac::dirac::{self, CoverageGrid, ForcingProfile, StepControl};
use floquet_dirac::fit::loglog_fit;
use floquet_dirac::flow::{self, EnvelopeSpec, EvolveOptions, MatrixScheme, MatrixStepControl, SupercellGrid, WavePacketEnvelope};
use floquet_dirac::lattice::{self, make_honeycomb_lattice, Lattice2D};
use floquet_dirac::linalg::{self, c};
use floquet_dirac::potential::{check_symmetries, make_canonical_honeycomb, FourierPotential};
use floquet_dirac::projection::{self, QuasiEnergyWindow, ScalarEnvelope};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion line and fails the test unless both the check and
/// the time budget pass.
fn verdict(n: u32, name: &str, ok: bool, detail: String, start: Instant, budget: Duration) {
    let took = start.elapsed();
    let in_time = took <= budget;
    let pass = ok && in_time;
    let line = format!(
        "criterion {n:>2} {name}: {} | {detail} | {:.2}s of {:.0}s\n",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs_f64()
    );
    // Written to the handle directly so the line survives libtest's capture.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
    assert!(in_time, "criterion {n} ({name}) over budget: {:.2}s", took.as_secs_f64());
}

fn canonical_dirac(v0: f64, cutoff: u32) -> (Lattice2D, FourierPotential, DiracPointData) {
    let l = make_honeycomb_lattice();
    let v = make_canonical_honeycomb(v0);
    let k = l.high_symmetry_points().k;
    let b = PlaneWaveBasis::centered(&l, cutoff, k);
    let d = find_dirac_point(&v, &l, &b, k, &DiracOptions::default()).unwrap();
    (l, v, d)
}

/// `μ(0)` from the numerical monodromy (branch `μT ∈ [0, π]`).
fn mu_zero(f: &ForcingProfile, v_d: f64) -> f64 {
    dirac::floquet_exponent(&dirac::monodromy([0.0, 0.0], f, v_d, &StepControl::default()).unwrap()).mu
}

#[test]
fn criterion_01_analytic_exponent() {
    let _g = serial();
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for r in [0.5, 1.0, 2.0] {
        for w in [0.5, 1.0, 2.0] {
            for vd in [0.5, 1.0, 2.0] {
                let f = ForcingProfile::circular(r, w).unwrap();
                let exact = dirac::exponent_at_zero_analytic(r, w, vd).unwrap();
                // same multiplier pair, reported on the branch μT ∈ [0, π]
                let exact_branch = dirac::branch_fold(exact * f.t_per) / f.t_per;
                worst = worst.max((mu_zero(&f, vd) - exact_branch).abs());
            }
        }
    }
    verdict(1, "analytic Floquet exponent", worst <= 1e-10, format!("max |Δμ(0)| = {worst:.3e} (tol 1e-10)"), t0, Duration::from_secs(1));
}

#[test]
fn criterion_02_unforced_law() {
    let _g = serial();
    let t0 = Instant::now();
    let v_d = 4.126_326_457;
    let f = ForcingProfile::zero(PI).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<[f64; 2]> = (0..100).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
    let samples = dirac::floquet_samples(&pts, &f, v_d, &StepControl::default()).unwrap();
    let worst = samples
        .iter()
        .map(|s| {
            let exact = dirac::branch_fold(v_d * lattice::norm(s.xi) * f.t_per);
            (s.mu_t - exact).abs() / f.t_per
        })
        .fold(0.0, f64::max);
    verdict(2, "unforced law", worst <= 1e-10, format!("max |μ − v_D|ξ|| folded = {worst:.3e} over 100 ξ (tol 1e-10)"), t0, Duration::from_secs(1));
}

#[test]
fn criterion_03_gap_over_disk() {
    let _g = serial();
    let t0 = Instant::now();
    let (_, _, d) = canonical_dirac(10.0, 5);
    let f = ForcingProfile::circular(1.0, 2.0).unwrap();
    let ctl = StepControl::default();
    let mu0 = mu_zero(&f, d.v_d);
    let d0 = 0.25 * mu0 / d.v_d;
    let g = dirac::gap_over_disk(&f, d.v_d, d0, 16, 32, &ctl).unwrap().g_tilde;
    let ladder = [2.0 * d0, d0, 0.5 * d0, 0.25 * d0, 0.125 * d0];
    let gs: Vec<f64> = ladder.iter().map(|&r| dirac::gap_over_disk(&f, d.v_d, r, 16, 32, &ctl).unwrap().g_tilde).collect();
    let monotone = gs.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    let gaps: Vec<f64> = gs.iter().map(|x| mu0 - x).collect();
    let converging = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9) && gaps[gaps.len() - 1] <= 0.01 * mu0;
    let ok = g >= 0.5 * mu0 && monotone && converging;
    verdict(
        3,
        "gap over disk",
        ok,
        format!("μ(0) = {mu0:.8}, d0 = {d0:.6}, g̃ = {g:.8} (≥ {:.8}); ladder μ(0) − g̃ = {:?}", 0.5 * mu0, gaps.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>()),
        t0,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_04_wkb_decay() {
    let _g = serial();
    let t0 = Instant::now();
    let f = ForcingProfile::circular(1.0, 2.0).unwrap();
    let xs = [10.0, 20.0, 40.0, 80.0, 160.0];
    let res: Vec<f64> = xs.iter().map(|&x| dirac::wkb_residual(x, &f, &StepControl::default()).unwrap()).collect();
    let slope = loglog_fit(&xs, &res).unwrap().slope;
    verdict(4, "WKB decay", (-1.3..=-0.7).contains(&slope), format!("log-log slope {slope:.4} (want [−1.3, −0.7])"), t0, Duration::from_secs(10));
}

#[test]
fn criterion_05_circle_coverage() {
    let _g = serial();
    let t0 = Instant::now();
    let (_, _, d) = canonical_dirac(10.0, 5);
    let f = ForcingProfile::circular(1.0, 2.0).unwrap();
    // one ring step must advance the phase v_D·Δr·T by less than a bin
    let grid = CoverageGrid { radial_step: 0.002 / d.v_d, n_angular: 4, bins: 720 };
    let ladder: Vec<f64> = (1..=16).map(|i| 0.25 * i as f64).collect();
    let (reports, first) = dirac::coverage_scan(&f, d.v_d, &ladder, &grid, 0.99, &StepControl::default()).unwrap();
    let fr: Vec<f64> = reports.iter().map(|r| r.covered_fraction).collect();
    let monotone = fr.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        5,
        "circle coverage",
        monotone && first.is_some(),
        format!("v_D = {:.6}, nondecreasing = {monotone}, first d0 with ≥ 0.99 = {first:?}, final {:.4}", d.v_d, fr[fr.len() - 1]),
        t0,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_06_velocity_identities() {
    let _g = serial();
    let t0 = Instant::now();
    let mut worst_self: f64 = 0.0;
    let mut worst_form: f64 = 0.0;
    for v0 in [5.0, 10.0, 20.0] {
        let (l, _, d) = canonical_dirac(v0, 5);
        let fv = bloch::fermi_velocity_inner_product(&d, &l).unwrap();
        worst_self = worst_self.max(fv.self_gradient_1);
        worst_form = worst_form.max(fv.form_defect);
    }
    verdict(
        6,
        "Fermi velocity identities",
        worst_self <= 1e-8 && worst_form <= 1e-6,
        format!("max ‖⟨Φ1,∇Φ1⟩‖ = {worst_self:.2e} (tol 1e-8), max ‖⟨Φ1,−2i∇Φ2⟩ − v_D(1,i)‖ = {worst_form:.2e} (tol 1e-6)"),
        t0,
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_07_cross_method_velocity() {
    let _g = serial();
    let t0 = Instant::now();
    let (l, v, d) = canonical_dirac(10.0, 5);
    let cone = bloch::fermi_velocity_cone_fit(&v, &l, &d, &[1e-3, 2e-3, 4e-3], 12).unwrap();
    let rel = (d.v_d - cone.v_fit).abs() / d.v_d;
    verdict(7, "cross-method v_D", rel <= 1e-2, format!("inner product {:.8}, cone fit {:.8}, rel {rel:.2e} (tol 1e-2)", d.v_d, cone.v_fit), t0, Duration::from_secs(60));
}

#[test]
fn criterion_08_averaging_lemma() {
    let _g = serial();
    let t0 = Instant::now();
    let (l, _, d) = canonical_dirac(10.0, 3);
    let periodic = vec![
        make_canonical_honeycomb(1.0),
        make_canonical_honeycomb(10.0),
        projection::bloch_product(&d.basis, &d.phi1, &d.phi1),
        projection::bloch_product(&d.basis, &d.phi1, &d.phi2),
        projection::bloch_product(&d.basis, &d.phi2, &d.phi2),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for p in &periodic {
        for eps in [1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 1.0 / 8.0] {
            let mut modes = vec![((0, 0), c(rng.gen_range(0.5..1.5), 0.0))];
            for idx in [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1), (-1, -1)] {
                modes.push((idx, c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))));
            }
            let q = ScalarEnvelope { length: 1.0, modes };
            let r = projection::poisson_average(p, &q, eps, &l).unwrap();
            worst = worst.max(r.residual);
            cases += 1;
        }
    }
    let q_alias = ScalarEnvelope { length: 1.0, modes: vec![((0, 0), c(1.0, 0.0)), ((-3, 0), c(1.0, 0.0))] };
    let refused = projection::poisson_average(&periodic[0], &q_alias, 1.0 / 3.0, &l).map_or_else(|e| e.is_refusal(), |_| false);
    verdict(
        8,
        "averaging lemma",
        worst <= 1e-10 && refused,
        format!("max residual {worst:.2e} over {cases} cases (tol 1e-10), aliased case refused = {refused}"),
        t0,
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_09_projection_scaling() {
    let _g = serial();
    let t0 = Instant::now();
    let (l, v, d) = canonical_dirac(10.0, 5);
    let hs = l.high_symmetry_points();
    let nf = bloch::check_no_fold(&v, &l, d.e_d, 0.3, 0.1, 24, &PlaneWaveBasis::new(&l, 4), &[hs.k, hs.k_prime]).unwrap();
    let spec = EnvelopeSpec::Gaussian { width: 10.0, amplitude: [c(std::f64::consts::FRAC_1_SQRT_2, 0.0), c(0.0, std::f64::consts::FRAC_1_SQRT_2)] };
    let eps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let r = projection::projection_scaling_check(&v, &l, &d, &spec, 80.0, 0.5 / d.v_d, &eps, &nf).unwrap();
    let slope = r.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let dp = d.parity_partner(&l);
    let fwd = projection::window_decomposition_check(&v, &l, &[&d, &dp], 0.5 / d.v_d, &eps, 6, 9).unwrap();
    let fwd_slope = fwd.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    verdict(
        9,
        "wave-packet projection scaling",
        slope >= 2.5,
        format!(
            "residuals {:?}, fitted exponent {slope:.4} (want ≥ 2.5); forward window split exponent {fwd_slope:.4}; no-fold gap {:.3}",
            r.rows.iter().map(|x| format!("{:.3e}", x.relative)).collect::<Vec<_>>(),
            nf.worst_gap
        ),
        t0,
        Duration::from_secs(300),
    );
}

fn one_period_error(v: &FourierPotential, d: &DiracPointData, l: &Lattice2D, eps: f64) -> f64 {
    let f = ForcingProfile::circular(1.0, 2.0).unwrap();
    let grid = SupercellGrid::new(l, 3, 16).unwrap();
    let spec = EnvelopeSpec::Modes { modes: vec![((0, 0), [c(1.0, 0.0), c(0.0, 0.0)])] };
    let env = WavePacketEnvelope::build(l, &spec, 3.0 * eps, 1e-9, eps).unwrap();
    let opts = EvolveOptions { dt: 1e-3, halving_tol: None };
    let rows = flow::validate_effective_dynamics(v, d, &f, &env, &grid, 1, &opts, &StepControl::default()).unwrap();
    rows[rows.len() - 1].relative_error
}

#[test]
fn criterion_10_effective_dynamics_scaling() {
    let _g = serial();
    let t0 = Instant::now();
    let (l, v, d) = canonical_dirac(10.0, 5);
    let e8 = one_period_error(&v, &d, &l, 1.0 / 8.0);
    let e16 = one_period_error(&v, &d, &l, 1.0 / 16.0);
    let ratio = e16 / e8;
    verdict(
        10,
        "one-period effective dynamics",
        (0.3..=0.7).contains(&ratio),
        format!("relative error ε=1/8: {e8:.4e}, ε=1/16: {e16:.4e}, ratio {ratio:.4} (want [0.3, 0.7])"),
        t0,
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_11_effective_gap() {
    let _g = serial();
    let t0 = Instant::now();
    let (l, v, d) = canonical_dirac(10.0, 3);
    let lab = ForcingProfile::circular(1.0, 2.0).unwrap();
    let eff = flow::envelope_forcing(&lab);
    let mu0 = mu_zero(&eff, d.v_d);
    let d0 = 0.25 * mu0 / d.v_d;
    let g = dirac::gap_over_disk(&eff, d.v_d, d0, 16, 32, &StepControl::default()).unwrap().g_tilde;
    let eps = 1.0 / 8.0;
    let window = QuasiEnergyWindow::around_dirac(d.e_d, eps, lab.t_per, 0.5 * g);
    let ctl = MatrixStepControl { scheme: MatrixScheme::Cf4, initial_steps: 256, tol: 1e-4, max_steps: 1 << 16 };
    let r = projection::effective_gap_scan(&v, &l, &d, &lab, eps, d0, window, &projection::ring_set(d0, 1, 6), &ctl).unwrap();
    let s = &r.summary;
    let ok = s.in_window_count > 0 && s.control_count > 0 && s.ordering_holds(5.0, 0.9);
    verdict(
        11,
        "effective gap ordering",
        ok,
        format!(
            "{} in-window modes, min residual {:.6}; {} control modes, max residual {:.4e}, min bl_fraction {:.6}",
            s.in_window_count,
            s.in_window_min_residual.unwrap_or(f64::NAN),
            s.control_count,
            s.control_max_residual,
            s.control_min_bl_fraction
        ),
        t0,
        Duration::from_secs(900),
    );
}

/// Runs `cases` proptest trials and returns the failure message, if any.
fn trials<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Option<String> {
    let mut runner = TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, check).err().map(|e| e.to_string())
}

fn symmetric_potential(rows: &[(i32, i32, f64)]) -> FourierPotential {
    let mut out = Vec::new();
    for &(m, n, a) in rows {
        let mut g = (m, n);
        for _ in 0..3 {
            out.push((g, c(a, 0.0)));
            out.push(((-g.0, -g.1), c(a, 0.0)));
            g = lattice::rotate_index(g);
        }
    }
    FourierPotential::from_coefficients(out)
}

#[test]
fn criterion_12_structural_invariants() {
    let _g = serial();
    let t0 = Instant::now();
    let n = 100;
    let l = make_honeycomb_lattice();
    let mut failures: Vec<String> = Vec::new();
    let mut record = |name: &str, r: Option<String>| {
        if let Some(m) = r {
            failures.push(format!("{name}: {m}"));
        }
    };

    // Dirac monodromy: unitary with unit determinant
    record(
        "dirac monodromy unitary",
        trials(n, (-3.0..3.0f64, -3.0..3.0f64, 0.1..2.0f64, 0.5..3.0f64, 0.2..3.0f64), |(x, y, r, w, vd)| {
            let f = ForcingProfile::circular(r, w).unwrap();
            let m = dirac::monodromy([x, y], &f, vd, &StepControl::default()).unwrap();
            prop_assert!(m.unitarity_defect() < 1e-9);
            prop_assert!(m.det_defect() < 1e-9);
            let s = dirac::floquet_exponent(&m);
            prop_assert!((0.0..=PI).contains(&s.mu_t));
            Ok(())
        }),
    );

    // plane-wave monodromy: unitary
    let small = PlaneWaveBasis::centered(&l, 1, l.high_symmetry_points().k);
    record(
        "bloch monodromy unitary",
        trials(n, (-0.3..0.3f64, -0.3..0.3f64, 0.5..1.5f64), |(x, y, r)| {
            let v = make_canonical_honeycomb(5.0);
            let f = ForcingProfile::circular(r, 2.0).unwrap();
            let k = lattice::add(l.high_symmetry_points().k, [x, y]);
            let ctl = MatrixStepControl { tol: 1e-6, ..MatrixStepControl::default() };
            let m = flow::schrodinger_monodromy_bloch(&v, &l, &f, 0.5, k, &small, &ctl).unwrap();
            prop_assert!(m.unitarity_defect < 1e-9);
            Ok(())
        }),
    );

    // symmetrized potentials: honeycomb symmetric, Hermitian H(k)
    record(
        "potential symmetry and hermiticity",
        trials(n, (prop::collection::vec((-3i32..=3, -3i32..=3, -5.0..5.0f64), 1..5), -5.0..5.0f64, -5.0..5.0f64), |(rows, kx, ky)| {
            let v = symmetric_potential(&rows);
            prop_assert!(check_symmetries(&v).is_honeycomb());
            let h = bloch::assemble_hk(&v, &l, [kx, ky], &PlaneWaveBasis::new(&l, 2));
            prop_assert!(linalg::hermitian_defect(&h) < 1e-12);
            Ok(())
        }),
    );

    // Dirac pair: rotation eigenvectors with conjugate eigenvalues
    let basis2 = PlaneWaveBasis::centered(&l, 2, l.high_symmetry_points().k);
    record(
        "dirac pair rotation symmetry",
        trials(n, 2.0..20.0f64, |v0| {
            let v = make_canonical_honeycomb(v0);
            let k = l.high_symmetry_points().k;
            let d = find_dirac_point(&v, &l, &basis2, k, &DiracOptions::default()).unwrap();
            let r1 = bloch::apply_rotation(&l, k, &d.basis, &d.phi1_vec()).unwrap();
            let r2 = bloch::apply_rotation(&l, k, &d.basis, &d.phi2_vec()).unwrap();
            prop_assert!((r1 - d.phi1_vec() * d.tau).norm() < 1e-10);
            prop_assert!((r2 - d.phi2_vec() * d.tau.conj()).norm() < 1e-10);
            prop_assert!(d.phi1_vec().dotc(&d.phi2_vec()).norm() < 1e-10);
            Ok(())
        }),
    );

    // energy-window projector: idempotent and self-adjoint
    let (_, v10, d3) = canonical_dirac(10.0, 3);
    let grid = SupercellGrid::new(&l, 3, 8).unwrap();
    let proj = projection::EnergyWindowProjector::new(&v10, &grid, d3.e_d, 4.0).unwrap();
    let field = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        flow::WaveField::new(&grid, vals).unwrap()
    };
    record(
        "window projector idempotent",
        trials(n, any::<u64>(), |seed| {
            let f = field(seed);
            let g = field(seed.wrapping_add(1));
            let pf = proj.apply(&f).unwrap();
            let pg = proj.apply(&g).unwrap();
            prop_assert!(proj.apply(&pf).unwrap().sub(&pf).norm_l2 < 1e-10 * f.norm_l2);
            prop_assert!((pf.inner(&g) - f.inner(&pg)).norm() < 1e-10 * f.norm_l2 * g.norm_l2);
            Ok(())
        }),
    );

    // band-limited split: orthogonal and complete
    let dp = d3.parity_partner(&l);
    let grid6 = SupercellGrid::new(&l, 6, 8).unwrap();
    record(
        "BL decomposition orthogonal",
        trials(n, (any::<u64>(), 1.0..8.0f64), |(seed, d0)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals = (0..grid6.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let f = flow::WaveField::new(&grid6, vals).unwrap();
            let dec = projection::bl_project(&f, &[&d3, &dp], 1.0 / 6.0, d0, &grid6).unwrap();
            let n2 = f.norm_l2.powi(2);
            prop_assert!(dec.bl_part.inner(&dec.residual).norm() < 1e-8 * n2);
            prop_assert!(dec.bl_part.add(&dec.residual).sub(&f).norm_l2 < 1e-10 * f.norm_l2);
            let again = projection::bl_project(&dec.bl_part, &[&d3, &dp], 1.0 / 6.0, d0, &grid6).unwrap();
            prop_assert!(again.residual.norm_l2 < 1e-8 * f.norm_l2);
            Ok(())
        }),
    );

    // split-step evolution: norm preserving
    let grid_small = SupercellGrid::new(&l, 3, 8).unwrap();
    record(
        "split-step unitary",
        trials(n, (any::<u64>(), 0.0..2.0f64), |(seed, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals = (0..grid_small.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let f = flow::WaveField::new(&grid_small, vals).unwrap();
            let forcing = ForcingProfile::circular(r, 2.0).unwrap();
            let out = flow::evolve(&f, &grid_small, &v10, &forcing, 0.5, 0.2, &EvolveOptions { dt: 0.01, halving_tol: None }).unwrap();
            prop_assert!((out.field.norm_l2 - f.norm_l2).abs() < 1e-10 * f.norm_l2);
            Ok(())
        }),
    );

    // folding lands in [0, 2π/T)
    record(
        "quasi-energy folding range",
        trials(n, (prop::collection::vec(-1e3..1e3f64, 1..20), 0.1..10.0f64), |(es, t)| {
            let folded = bloch::fold_quasi_energies(&es, t).unwrap();
            let w = 2.0 * PI / t;
            for (e, f) in es.iter().zip(&folded) {
                prop_assert!((0.0..w).contains(f));
                let k = (e - f) / w;
                prop_assert!((k - k.round()).abs() < 1e-6);
            }
            Ok(())
        }),
    );

    let total = 8;
    verdict(
        12,
        "structural invariants",
        failures.is_empty(),
        if failures.is_empty() { format!("{total} invariant families × {n} trials") } else { failures.join("; ") },
        t0,
        Duration::from_secs(120),
    );
}
