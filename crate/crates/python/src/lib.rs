//! Python bindings. Matrices cross the boundary as lists of rows; reports
//! come back as plain dicts.

use dilequiv::coverings::{self, CoveringKind, ScaleLadder};
use dilequiv::equivalence::{self, ClassifyConfig, NormalForm, ProbeSide, Verdict};
use dilequiv::linalg::{self, from_rows, to_rows, Mat};
use dilequiv::quasinorm::{self, StepQuasiNorm};
use dilequiv::{spectral, Error, Tolerances};
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

type Rows = Vec<Vec<f64>>;

create_exception!(dilequiv, NumericalError, PyArithmeticError);

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn mat(rows: &Rows) -> PyResult<Mat> {
    from_rows(rows).map_err(py_err)
}

fn vector(x: Vec<f64>, d: usize) -> PyResult<nalgebra::DVector<f64>> {
    if x.len() != d {
        return Err(PyValueError::new_err(format!(
            "expected a vector of length {d}, got {}",
            x.len()
        )));
    }
    Ok(nalgebra::DVector::from_vec(x))
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyDict>> {
    let json = dilequiv::report::to_json(value);
    Ok(py
        .import("json")?
        .call_method1("loads", (json,))?
        .cast_into::<PyDict>()?)
}

fn side(name: &str) -> PyResult<ProbeSide> {
    match name {
        "two_sided" => Ok(ProbeSide::TwoSided),
        "positive" | "positive_only" => Ok(ProbeSide::PositiveOnly),
        other => Err(PyValueError::new_err(format!("unknown side {other:?}"))),
    }
}

fn kind(name: &str) -> PyResult<CoveringKind> {
    match name {
        "homogeneous" => Ok(CoveringKind::Homogeneous),
        "inhomogeneous" => Ok(CoveringKind::Inhomogeneous),
        other => Err(PyValueError::new_err(format!(
            "unknown covering kind {other:?}"
        ))),
    }
}

fn tolerances(tol_eig: f64, tol_jordan: f64, tol_verdict: f64) -> PyResult<Tolerances> {
    let t = Tolerances {
        eig: tol_eig,
        jordan: tol_jordan,
        verdict: tol_verdict,
        ..Tolerances::default()
    };
    t.validate().map_err(py_err)?;
    Ok(t)
}

/// Expansive normal form: positive spectrum, determinant 2.
#[pyclass(name = "NormalForm", frozen, module = "dilequiv")]
struct PyNormalForm {
    inner: NormalForm,
}

#[pymethods]
impl PyNormalForm {
    #[getter]
    fn matrix(&self) -> Rows {
        to_rows(&self.inner.matrix)
    }

    #[getter]
    fn basis(&self) -> Rows {
        to_rows(&self.inner.basis)
    }

    #[getter]
    fn jordan_coords(&self) -> Rows {
        to_rows(&self.inner.jordan_coords)
    }

    /// Repeated by multiplicity, decreasing.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues()
    }

    #[getter]
    fn t_scale(&self) -> f64 {
        self.inner.t_scale
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }

    fn distance(&self, other: &PyNormalForm) -> f64 {
        equivalence::normal_form_distance(&self.inner, &other.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        to_dict(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("NormalForm(eigenvalues={:?})", self.inner.eigenvalues())
    }
}

/// Verdicts on the Besov and Hardy scales of a pair.
#[pyclass(name = "Verdict", frozen, module = "dilequiv")]
struct PyVerdict {
    inner: Verdict,
}

#[pymethods]
impl PyVerdict {
    #[getter]
    fn hom_besov_equal(&self) -> bool {
        self.inner.hom_besov_equal
    }

    #[getter]
    fn inhom_besov_equal(&self) -> bool {
        self.inner.inhom_besov_equal
    }

    #[getter]
    fn hardy_equal(&self) -> bool {
        self.inner.hardy_equal
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        to_dict(py, &self.inner)
    }

    fn to_json(&self) -> String {
        dilequiv::report::to_json(&self.inner)
    }

    fn __repr__(&self) -> String {
        let b = |v: bool| if v { "True" } else { "False" };
        format!(
            "Verdict(hom_besov_equal={}, inhom_besov_equal={}, hardy_equal={})",
            b(self.inner.hom_besov_equal),
            b(self.inner.inhom_besov_equal),
            b(self.inner.hardy_equal)
        )
    }
}

/// Step quasi-norm `rho_A(x) = |det A|^j` on the shell `A^j (Delta \ A^{-1} Delta)`
/// of an ellipsoid `Delta`.
#[pyclass(name = "QuasiNorm", frozen, module = "dilequiv")]
struct PyQuasiNorm {
    inner: StepQuasiNorm,
}

#[pymethods]
impl PyQuasiNorm {
    #[new]
    #[pyo3(signature = (a, delta=None, seed=0))]
    fn new(a: Rows, delta: Option<f64>, seed: u64) -> PyResult<Self> {
        let inner = quasinorm::build_ellipsoid_seeded(&mat(&a)?, delta, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(quasinorm::qn_eval(
            &self.inner,
            &vector(x, self.inner.dim())?,
        ))
    }

    /// Shell index `j`, `None` at the origin.
    fn shell(&self, x: Vec<f64>) -> PyResult<Option<i64>> {
        Ok(self.inner.shell_index(&vector(x, self.inner.dim())?))
    }

    #[getter]
    fn det(&self) -> f64 {
        self.inner.det_abs
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    /// `(P, s)` with `Delta = {x : x^T P x < s}`.
    #[getter]
    fn ellipsoid(&self) -> (Rows, f64) {
        (to_rows(&self.inner.p), self.inner.s)
    }

    #[pyo3(signature = (n_pairs=2000, seed=0))]
    fn triangle_constant(&self, n_pairs: usize, seed: u64) -> f64 {
        quasinorm::quasi_triangle_constant(&self.inner, n_pairs, seed)
    }

    /// Ratio statistics of `other / self` over random directions and
    /// log-spaced radii.
    #[pyo3(signature = (other, n_samples=200, decades=3, seed=0))]
    fn compare<'py>(
        &self,
        py: Python<'py>,
        other: &PyQuasiNorm,
        n_samples: usize,
        decades: u32,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let c = quasinorm::qn_compare_seeded(&self.inner, &other.inner, n_samples, decades, seed)
            .map_err(py_err)?;
        let d = to_dict(py, &c)?;
        d.set_item("spread", c.spread())?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, k_max=100, tol_eig=1e-6, tol_jordan=1e-8, tol_verdict=1e-7))]
fn classify(
    a: Rows,
    b: Rows,
    k_max: usize,
    tol_eig: f64,
    tol_jordan: f64,
    tol_verdict: f64,
) -> PyResult<PyVerdict> {
    let config = ClassifyConfig {
        tolerances: tolerances(tol_eig, tol_jordan, tol_verdict)?,
        k_max,
    };
    let inner = equivalence::classify_pair(&mat(&a)?, &mat(&b)?, &config).map_err(py_err)?;
    Ok(PyVerdict { inner })
}

#[pyfunction]
#[pyo3(signature = (a, tol_eig=1e-6, tol_jordan=1e-8))]
fn normal_form(a: Rows, tol_eig: f64, tol_jordan: f64) -> PyResult<PyNormalForm> {
    let tol = tolerances(tol_eig, tol_jordan, Tolerances::default().verdict)?;
    let inner = equivalence::expansive_normal_form_with(&mat(&a)?, &tol).map_err(py_err)?;
    Ok(PyNormalForm { inner })
}

#[pyfunction]
#[pyo3(signature = (a, b, tol=1e-7))]
fn decide_equivalent(a: Rows, b: Rows, tol: f64) -> PyResult<bool> {
    equivalence::decide_equivalent(&mat(&a)?, &mat(&b)?, tol).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, tol=1e-7))]
fn decide_coarsely_equivalent(a: Rows, b: Rows, tol: f64) -> PyResult<bool> {
    equivalence::decide_coarsely_equivalent(&mat(&a)?, &mat(&b)?, tol).map_err(py_err)
}

/// `ln|det A| / ln|det B|`.
#[pyfunction]
fn epsilon(a: Rows, b: Rows) -> PyResult<f64> {
    equivalence::epsilon(&mat(&a)?, &mat(&b)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, tol=1e-6))]
fn is_expansive(a: Rows, tol: f64) -> PyResult<bool> {
    linalg::is_expansive(&mat(&a)?, tol).map_err(py_err)
}

/// `log‖A^{-k} B^{floor(eps k)}‖` with its growth classification.
#[pyfunction]
#[pyo3(signature = (a, b, k_max=100, side="two_sided"))]
fn probe<'py>(
    py: Python<'py>,
    a: Rows,
    b: Rows,
    k_max: usize,
    side: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let s = equivalence::boundedness_probe(&mat(&a)?, &mat(&b)?, k_max, self::side(side)?)
        .map_err(py_err)?;
    let d = to_dict(py, &s)?;
    d.set_item("label", s.classification.to_string())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (a, tol_eig=1e-6, tol_jordan=1e-8))]
fn real_jordan_form<'py>(
    py: Python<'py>,
    a: Rows,
    tol_eig: f64,
    tol_jordan: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let tol = tolerances(tol_eig, tol_jordan, Tolerances::default().verdict)?;
    to_dict(
        py,
        &linalg::real_jordan_form(&mat(&a)?, &tol).map_err(py_err)?,
    )
}

#[pyfunction]
fn matrix_log(a: Rows) -> PyResult<Rows> {
    Ok(to_rows(
        &equivalence::matrix_log_expansive(&mat(&a)?).map_err(py_err)?,
    ))
}

#[pyfunction]
fn matrix_exp(x: Rows) -> PyResult<Rows> {
    Ok(to_rows(&linalg::structured_exp(&mat(&x)?, None)))
}

/// Basis of the filtration space `E(A, r, m)`.
#[pyfunction]
#[pyo3(signature = (a, r, m, tol=1e-6))]
fn generalized_eigenspace(a: Rows, r: f64, m: usize, tol: f64) -> PyResult<Rows> {
    let e = spectral::generalized_eigenspace(&mat(&a)?, r, m, tol).map_err(py_err)?;
    Ok(to_rows(&e.basis))
}

/// Fitted `(r, m)` in `|A^k z| ~ c k^m r^k`.
#[pyfunction]
#[pyo3(signature = (a, z, k_min=10, k_max=80))]
fn growth_exponents<'py>(
    py: Python<'py>,
    a: Rows,
    z: Vec<f64>,
    k_min: usize,
    k_max: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let a = mat(&a)?;
    let z = vector(z, a.nrows())?;
    to_dict(
        py,
        &spectral::growth_exponents(&a, &z, k_min, k_max).map_err(py_err)?,
    )
}

/// Weak-equivalence counts between the coverings induced by `A` and `B`.
#[pyfunction]
#[pyo3(signature = (a, b, r=10.0, range=50, side="two_sided"))]
fn weak_counts<'py>(
    py: Python<'py>,
    a: Rows,
    b: Rows,
    r: f64,
    range: usize,
    side: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let c = coverings::weak_equivalence_counts(&mat(&a)?, &mat(&b)?, r, range, self::side(side)?)
        .map_err(py_err)?;
    let d = to_dict(py, &c)?;
    d.set_item("max_count", c.max_count())?;
    Ok(d)
}

/// Finite-scale covering indicators: weak counts, subordination index and
/// quasi-norm orbit spread, each at a base scale and an enlarged one.
#[pyfunction]
#[pyo3(signature = (a, b, r=10.0, range=50, kind="homogeneous", directions=1000, seed=0))]
fn covering_checks<'py>(
    py: Python<'py>,
    a: Rows,
    b: Rows,
    r: f64,
    range: usize,
    kind: &str,
    directions: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (a, b) = (mat(&a)?, mat(&b)?);
    let ladder = ScaleLadder {
        range,
        ..ScaleLadder::default()
    };
    let sub_ladder = ScaleLadder {
        range: 16,
        ..ladder
    };
    let d = PyDict::new(py);
    let counts =
        coverings::weak_counts_check(&a, &b, r, &ladder, ProbeSide::TwoSided).map_err(py_err)?;
    d.set_item("weak_counts", to_dict(py, &counts)?)?;
    let sub =
        coverings::subordination_check(&a, &b, self::kind(kind)?, &sub_ladder, directions, seed)
            .map_err(py_err)?;
    d.set_item("subordination", to_dict(py, &sub)?)?;
    let qn = coverings::qn_orbit_check(&a, &b, 25, 2, 100, seed).map_err(py_err)?;
    d.set_item("quasi_norm_orbits", to_dict(py, &qn)?)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "dilequiv")]
fn dilequiv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyNormalForm>()?;
    m.add_class::<PyVerdict>()?;
    m.add_class::<PyQuasiNorm>()?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(normal_form, m)?)?;
    m.add_function(wrap_pyfunction!(decide_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(decide_coarsely_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(is_expansive, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(real_jordan_form, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_log, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_exp, m)?)?;
    m.add_function(wrap_pyfunction!(generalized_eigenspace, m)?)?;
    m.add_function(wrap_pyfunction!(growth_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(weak_counts, m)?)?;
    m.add_function(wrap_pyfunction!(covering_checks, m)?)?;
    Ok(())
}
