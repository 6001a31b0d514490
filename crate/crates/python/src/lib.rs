//! Python bindings: potentials, Dirac points, forcing profiles, Floquet
//! monodromies and the harness entry points.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use floquet_dirac::bloch::{self, DiracOptions, DiracPointData, PlaneWaveBasis};
use floquet_dirac::dirac::{self, CoverageGrid, StepControl};
use floquet_dirac::flow::{self, MatrixStepControl};
use floquet_dirac::lattice::{self, make_honeycomb_lattice};
use floquet_dirac::potential::{make_canonical_honeycomb, FourierPotential};
use floquet_dirac::projection::{self, QuasiEnergyWindow, ScalarEnvelope};

fn to_py(e: floquet_dirac::Error) -> PyErr {
    if e.is_refusal() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Fourier-series honeycomb potential.
#[pyclass(name = "Potential", module = "floquet_dirac_py", from_py_object)]
#[derive(Clone)]
struct PyPotential {
    inner: FourierPotential,
}

#[pymethods]
impl PyPotential {
    /// `V0·[cos(k1·x) + cos(k2·x) + cos((k1+k2)·x)]`.
    #[staticmethod]
    fn canonical(v0: f64) -> Self {
        PyPotential { inner: make_canonical_honeycomb(v0) }
    }

    /// From rows `(m, n, re, im)`.
    #[staticmethod]
    fn from_coefficients(rows: Vec<(i32, i32, f64, f64)>) -> Self {
        PyPotential { inner: FourierPotential::from_coefficients(rows.into_iter().map(|(m, n, re, im)| ((m, n), Complex64::new(re, im)))) }
    }

    fn coeff(&self, m: i32, n: i32) -> Complex64 {
        self.inner.coeff((m, n))
    }

    fn is_honeycomb(&self) -> bool {
        self.inner.symmetry.is_honeycomb()
    }

    fn evaluate(&self, x: f64, y: f64) -> PyResult<f64> {
        self.inner.evaluate(&make_honeycomb_lattice(), [x, y]).map_err(to_py)
    }
}

/// Vector potential `A(T)` over one period.
#[pyclass(name = "Forcing", module = "floquet_dirac_py", from_py_object)]
#[derive(Clone)]
struct PyForcing {
    inner: dirac::ForcingProfile,
}

#[pymethods]
impl PyForcing {
    #[staticmethod]
    fn circular(r: f64, omega: f64) -> PyResult<Self> {
        Ok(PyForcing { inner: dirac::ForcingProfile::circular(r, omega).map_err(to_py)? })
    }

    #[staticmethod]
    fn zero(t_per: f64) -> PyResult<Self> {
        Ok(PyForcing { inner: dirac::ForcingProfile::zero(t_per).map_err(to_py)? })
    }

    #[staticmethod]
    fn tabulated(t_per: f64, samples: Vec<[f64; 2]>) -> PyResult<Self> {
        Ok(PyForcing { inner: dirac::ForcingProfile::tabulated(t_per, samples).map_err(to_py)? })
    }

    #[getter]
    fn t_per(&self) -> f64 {
        self.inner.t_per
    }

    fn a(&self, t: f64) -> [f64; 2] {
        self.inner.a(t)
    }

    fn negated(&self) -> Self {
        PyForcing { inner: self.inner.negated() }
    }

    /// Forcing seen by the envelope for this lab-frame drive.
    fn envelope(&self) -> Self {
        PyForcing { inner: flow::envelope_forcing(&self.inner) }
    }
}

/// Dirac point of a honeycomb potential at `K`.
#[pyclass(name = "DiracPoint", module = "floquet_dirac_py", from_py_object)]
#[derive(Clone)]
struct PyDiracPoint {
    inner: DiracPointData,
}

#[pymethods]
impl PyDiracPoint {
    #[getter]
    fn k_d(&self) -> [f64; 2] {
        self.inner.k_d
    }

    #[getter]
    fn e_d(&self) -> f64 {
        self.inner.e_d
    }

    #[getter]
    fn v_d(&self) -> f64 {
        self.inner.v_d
    }

    #[getter]
    fn band_pair(&self) -> (usize, usize) {
        self.inner.band_pair
    }

    #[getter]
    fn degeneracy_residual(&self) -> f64 {
        self.inner.degeneracy_residual
    }

    #[getter]
    fn phi1(&self) -> Vec<Complex64> {
        self.inner.phi1.clone()
    }

    #[getter]
    fn phi2(&self) -> Vec<Complex64> {
        self.inner.phi2.clone()
    }

    #[getter]
    fn basis(&self) -> Vec<(i32, i32)> {
        self.inner.basis.index_list.clone()
    }

    /// `(‖⟨Φ1,∇Φ1⟩‖, ‖⟨Φ1,−2i∇Φ2⟩ − v_D(1,i)‖)`.
    fn velocity_identities(&self) -> PyResult<(f64, f64)> {
        let f = bloch::fermi_velocity_inner_product(&self.inner, &make_honeycomb_lattice()).map_err(to_py)?;
        Ok((f.self_gradient_1, f.form_defect))
    }

    fn cone_fit(&self, potential: &PyPotential, radii: Vec<f64>, directions: usize) -> PyResult<f64> {
        let fit = bloch::fermi_velocity_cone_fit(&potential.inner, &make_honeycomb_lattice(), &self.inner, &radii, directions).map_err(to_py)?;
        Ok(fit.v_fit)
    }
}

#[pyfunction]
#[pyo3(signature = (potential, cutoff = 5))]
fn find_dirac_point(potential: &PyPotential, cutoff: u32) -> PyResult<PyDiracPoint> {
    let l = make_honeycomb_lattice();
    let k = l.high_symmetry_points().k;
    let b = PlaneWaveBasis::centered(&l, cutoff, k);
    let d = bloch::find_dirac_point(&potential.inner, &l, &b, k, &DiracOptions::default()).map_err(to_py)?;
    Ok(PyDiracPoint { inner: d })
}

/// Lowest `n_bands` energies at `k`.
#[pyfunction]
#[pyo3(signature = (potential, k, n_bands, cutoff = 5))]
fn bands_at(potential: &PyPotential, k: [f64; 2], n_bands: usize, cutoff: u32) -> PyResult<Vec<f64>> {
    let l = make_honeycomb_lattice();
    let b = PlaneWaveBasis::new(&l, cutoff);
    Ok(bloch::solve_bands(&potential.inner, &l, k, n_bands, &b).map_err(to_py)?.energies)
}

/// `(K, K′, k1, k2)` of the honeycomb lattice.
#[pyfunction]
fn lattice_points() -> ([f64; 2], [f64; 2], [f64; 2], [f64; 2]) {
    let l = make_honeycomb_lattice();
    let hs = l.high_symmetry_points();
    (hs.k, hs.k_prime, l.k1, l.k2)
}

/// Monodromy of the driven 2×2 Dirac system, as nested rows.
#[pyfunction]
fn dirac_monodromy(xi: [f64; 2], forcing: &PyForcing, v_d: f64) -> PyResult<Vec<Vec<Complex64>>> {
    let m = dirac::monodromy(xi, &forcing.inner, v_d, &StepControl::default()).map_err(to_py)?;
    Ok(m.matrix.iter().map(|r| r.to_vec()).collect())
}

/// `(μ, μ·T_per)` with `μ·T_per ∈ [0, π]`.
#[pyfunction]
fn floquet_exponent(xi: [f64; 2], forcing: &PyForcing, v_d: f64) -> PyResult<(f64, f64)> {
    let m = dirac::monodromy(xi, &forcing.inner, v_d, &StepControl::default()).map_err(to_py)?;
    let s = dirac::floquet_exponent(&m);
    Ok((s.mu, s.mu_t))
}

#[pyfunction]
fn exponent_at_zero_analytic(r: f64, omega: f64, v_d: f64) -> PyResult<f64> {
    dirac::exponent_at_zero_analytic(r, omega, v_d).map_err(to_py)
}

#[pyfunction]
fn branch_fold(theta: f64) -> f64 {
    dirac::branch_fold(theta)
}

/// `(g̃, argmin ξ)`.
#[pyfunction]
#[pyo3(signature = (forcing, v_d, d0, n_radial = 16, n_angular = 32))]
fn gap_over_disk(forcing: &PyForcing, v_d: f64, d0: f64, n_radial: usize, n_angular: usize) -> PyResult<(f64, [f64; 2])> {
    let r = dirac::gap_over_disk(&forcing.inner, v_d, d0, n_radial, n_angular, &StepControl::default()).map_err(to_py)?;
    Ok((r.g_tilde, r.argmin_xi))
}

/// Covered fraction for each `d0` of the ladder.
#[pyfunction]
#[pyo3(signature = (forcing, v_d, ladder, radial_step = 0.002, n_angular = 4, bins = 720))]
fn coverage_scan(forcing: &PyForcing, v_d: f64, ladder: Vec<f64>, radial_step: f64, n_angular: usize, bins: usize) -> PyResult<Vec<(f64, f64)>> {
    let grid = CoverageGrid { radial_step, n_angular, bins };
    let (reports, _) = dirac::coverage_scan(&forcing.inner, v_d, &ladder, &grid, 0.99, &StepControl::default()).map_err(to_py)?;
    Ok(reports.iter().map(|r| (r.d0, r.covered_fraction)).collect())
}

#[pyfunction]
fn wkb_residual(xi: f64, forcing: &PyForcing) -> PyResult<f64> {
    dirac::wkb_residual(xi, &forcing.inner, &StepControl::default()).map_err(to_py)
}

/// Full Schrödinger monodromy at `k` over `T_per/ε` in a plane-wave basis
/// centered at `K`; returns `(rows, steps)`.
#[pyfunction]
#[pyo3(signature = (potential, forcing, epsilon, k, cutoff = 3, tol = 1e-6))]
fn schrodinger_monodromy(
    potential: &PyPotential,
    forcing: &PyForcing,
    epsilon: f64,
    k: [f64; 2],
    cutoff: u32,
    tol: f64,
) -> PyResult<(Vec<Vec<Complex64>>, usize)> {
    let l = make_honeycomb_lattice();
    let b = PlaneWaveBasis::centered(&l, cutoff, l.high_symmetry_points().k);
    let ctl = MatrixStepControl { tol, ..MatrixStepControl::default() };
    let m = flow::schrodinger_monodromy_bloch(&potential.inner, &l, &forcing.inner, epsilon, k, &b, &ctl).map_err(to_py)?;
    let n = m.matrix.nrows();
    Ok(((0..n).map(|i| (0..n).map(|j| m.matrix[(i, j)]).collect()).collect(), m.steps))
}

/// `(lhs, rhs, residual)` of the averaging identity for envelope modes
/// `(a, b, re, im)` on the torus of side `length`.
#[pyfunction]
fn poisson_average(p: &PyPotential, modes: Vec<(i32, i32, f64, f64)>, length: f64, epsilon: f64) -> PyResult<(Complex64, Complex64, f64)> {
    let q = ScalarEnvelope { length, modes: modes.into_iter().map(|(a, b, re, im)| ((a, b), Complex64::new(re, im))).collect() };
    let r = projection::poisson_average(&p.inner, &q, epsilon, &make_honeycomb_lattice()).map_err(to_py)?;
    Ok((r.lhs, r.rhs, r.residual))
}

/// Effective-gap scan at `k_D + εξ` over a ring set; returns the summary.
#[pyfunction]
#[pyo3(signature = (potential, dirac_point, forcing, epsilon, d0, g, rings = 1, per_ring = 6, tol = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn effective_gap_scan<'py>(
    py: Python<'py>,
    potential: &PyPotential,
    dirac_point: &PyDiracPoint,
    forcing: &PyForcing,
    epsilon: f64,
    d0: f64,
    g: f64,
    rings: usize,
    per_ring: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let l = make_honeycomb_lattice();
    let d = &dirac_point.inner;
    let window = QuasiEnergyWindow::around_dirac(d.e_d, epsilon, forcing.inner.t_per, g);
    let ctl = MatrixStepControl { tol, ..MatrixStepControl::default() };
    let xis = projection::ring_set(d0, rings, per_ring);
    let r = py
        .detach(|| projection::effective_gap_scan(&potential.inner, &l, d, &forcing.inner, epsilon, d0, window, &xis, &ctl))
        .map_err(to_py)?;
    let s = &r.summary;
    let out = PyDict::new(py);
    out.set_item("in_window_count", s.in_window_count)?;
    out.set_item("in_window_min_residual", s.in_window_min_residual)?;
    out.set_item("control_count", s.control_count)?;
    out.set_item("control_max_residual", s.control_max_residual)?;
    out.set_item("control_min_bl_fraction", s.control_min_bl_fraction)?;
    out.set_item("ordering_holds", s.ordering_holds(5.0, 0.9))?;
    Ok(out)
}

/// Runs a CLI verb; returns `(exit_code, summary_json)`.
#[pyfunction]
#[pyo3(signature = (verb, config_path = None, overrides = Vec::new(), dry_run = false, workers = None))]
fn run(py: Python<'_>, verb: &str, config_path: Option<String>, overrides: Vec<String>, dry_run: bool, workers: Option<usize>) -> (i32, String) {
    let out = py.detach(|| floquet_dirac::cli::run(verb, config_path.as_deref().map(std::path::Path::new), &overrides, dry_run, workers));
    (out.code, out.summary.to_string())
}

/// Distance of `k` to the nearest lattice translate of `p`.
#[pyfunction]
fn lattice_distance(k: [f64; 2], p: [f64; 2]) -> f64 {
    bloch::lattice_distance(&make_honeycomb_lattice(), k, p)
}

#[pyfunction]
fn norm(v: [f64; 2]) -> f64 {
    lattice::norm(v)
}

#[pymodule]
fn floquet_dirac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_class::<PyForcing>()?;
    m.add_class::<PyDiracPoint>()?;
    m.add_function(wrap_pyfunction!(find_dirac_point, m)?)?;
    m.add_function(wrap_pyfunction!(bands_at, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_points, m)?)?;
    m.add_function(wrap_pyfunction!(dirac_monodromy, m)?)?;
    m.add_function(wrap_pyfunction!(floquet_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(exponent_at_zero_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(branch_fold, m)?)?;
    m.add_function(wrap_pyfunction!(gap_over_disk, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_scan, m)?)?;
    m.add_function(wrap_pyfunction!(wkb_residual, m)?)?;
    m.add_function(wrap_pyfunction!(schrodinger_monodromy, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_average, m)?)?;
    m.add_function(wrap_pyfunction!(effective_gap_scan, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_distance, m)?)?;
    m.add_function(wrap_pyfunction!(norm, m)?)?;
    Ok(())
}
