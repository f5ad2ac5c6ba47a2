//! Python bindings: models, kernels, expansion fits and the flat model kernels.
//!
//! Points are passed as Python `complex` numbers with an optional chart name
//! (`"z"` for the affine chart, `"w"` for the chart at infinity).

use bergman_core::asymptotics::{check_b1_points, fit_expansion as core_fit, DEFAULT_FIT_DEGREE};
use bergman_core::bergman::{trace, KernelData};
use bergman_core::geometry::{Chart, ChartPoint, KaehlerModel};
use bergman_core::model::{self, CurvatureScalars, ModelSpectrum};
use bergman_core::sections::basis_for;
use bergman_core::BergmanError;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: BergmanError) -> PyErr {
    match e {
        BergmanError::IndefiniteGram { .. }
        | BergmanError::GridTooCoarse(_)
        | BergmanError::QuadratureDiverged(_)
        | BergmanError::BelowFloor { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn point(z: Complex64, chart: &str) -> PyResult<ChartPoint> {
    match chart {
        "z" => Ok(ChartPoint::affine(z)),
        "w" => Ok(ChartPoint {
            chart: Chart::Inverted,
            coord: z,
        }),
        other => Err(PyValueError::new_err(format!("unknown chart `{other}`; use \"z\" or \"w\""))),
    }
}

/// A compact Kähler curve or orbifold together with its polarization.
#[pyclass(name = "Model", module = "bergman_lab", frozen)]
struct PyModel {
    inner: KaehlerModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (twist=0))]
    fn fubini_study(twist: u32) -> Self {
        Self {
            inner: KaehlerModel::fubini_study(twist),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (amplitude, twist=0))]
    fn perturbed(amplitude: f64, twist: u32) -> PyResult<Self> {
        Ok(Self {
            inner: KaehlerModel::perturbed(amplitude, twist).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn flat_torus(tau: Complex64) -> PyResult<Self> {
        Ok(Self {
            inner: KaehlerModel::flat_torus(tau).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (order, twist=0))]
    fn cyclic_quotient(order: u32, twist: u32) -> PyResult<Self> {
        Ok(Self {
            inner: KaehlerModel::cyclic_quotient(order, twist).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    /// `(r^E + r^X/2) / 4 pi` at a point.
    #[pyo3(signature = (z, chart="z"))]
    fn b1_target(&self, z: Complex64, chart: &str) -> PyResult<f64> {
        let c = bergman_core::asymptotics::curvature_at(&self.inner, point(z, chart)?).map_err(to_py)?;
        Ok(model::b1(&c))
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner)
    }
}

/// Orthonormalized sections of the `p`-th power on a model.
#[pyclass(name = "Kernel", module = "bergman_lab", frozen)]
struct PyKernel {
    inner: KernelData,
}

#[pymethods]
impl PyKernel {
    #[new]
    fn new(py: Python<'_>, model: &PyModel, p: u32) -> PyResult<Self> {
        let m = model.inner;
        let inner = py
            .detach(move || KernelData::new(basis_for(&m, p)?))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> u32 {
        self.inner.basis.p()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.basis.dim()
    }

    /// `B_p` at a point.
    #[pyo3(signature = (z, chart="z"))]
    fn diagonal(&self, z: Complex64, chart: &str) -> PyResult<f64> {
        self.inner.diagonal(point(z, chart)?).map_err(to_py)
    }

    /// `P_p(x, y)` in the unit-frame gauge of each point's chart.
    #[pyo3(signature = (x, y, x_chart="z", y_chart="z"))]
    fn offdiag(&self, x: Complex64, y: Complex64, x_chart: &str, y_chart: &str) -> PyResult<Complex64> {
        self.inner
            .offdiag(point(x, x_chart)?, point(y, y_chart)?)
            .map_err(to_py)
    }

    /// Quadrature of `B_p`; equals `dim`.
    fn trace(&self) -> PyResult<f64> {
        trace(&self.inner.basis, &self.inner.fact, &self.inner.grid).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Kernel({}, p={})", self.inner.basis.model(), self.inner.basis.p())
    }
}

/// Least-squares fit of `B_p / p^n` in powers of `1/p`.
#[pyfunction]
#[pyo3(signature = (samples, n=1, degree=DEFAULT_FIT_DEGREE))]
fn fit_expansion<'py>(py: Python<'py>, samples: Vec<(u32, f64)>, n: u32, degree: usize) -> PyResult<Bound<'py, PyDict>> {
    let fit = core_fit(&samples, n, degree).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("coefficients", fit.coefficients.clone())?;
    d.set_item("residual", fit.residual)?;
    d.set_item("condition", fit.condition)?;
    d.set_item("ill_conditioned", fit.ill_conditioned)?;
    if let Some(probe) = &fit.parity {
        d.set_item("half_power", probe.coefficient)?;
        d.set_item("noise_floor", probe.noise_floor)?;
        d.set_item("parity_passes", probe.passes)?;
    }
    Ok(d)
}

/// Fitted and predicted `b_1` at affine-chart points: list of `(measured, target)`.
#[pyfunction]
#[pyo3(signature = (model, points, ps, degree=DEFAULT_FIT_DEGREE))]
fn check_b1(py: Python<'_>, model: &PyModel, points: Vec<Complex64>, ps: Vec<u32>, degree: usize) -> PyResult<Vec<(f64, f64)>> {
    let m = model.inner;
    let pts: Vec<ChartPoint> = points.into_iter().map(ChartPoint::affine).collect();
    let reports = py
        .detach(move || check_b1_points(&m, &pts, &ps, degree))
        .map_err(to_py)?;
    Ok(reports.iter().map(|r| (r.measured, r.target)).collect())
}

#[pyfunction]
fn b1(rx: f64, re: f64) -> f64 {
    model::b1(&CurvatureScalars::new(rx, re))
}

#[pyfunction]
fn j2u_closed(u: f64, rx: f64, re: f64) -> PyResult<f64> {
    model::j2u_closed(u, &CurvatureScalars::new(rx, re)).map_err(to_py)
}

#[pyfunction]
fn j2u_volterra(py: Python<'_>, u: f64, rx: f64, re: f64) -> PyResult<f64> {
    py.detach(move || model::j2u_volterra(u, &CurvatureScalars::new(rx, re)))
        .map_err(to_py)
}

/// Model projector on the plane with the Kähler spectrum.
#[pyfunction]
fn model_bergman(z: Complex64, zp: Complex64) -> PyResult<Complex64> {
    let spec = ModelSpectrum::kaehler(1);
    model::model_bergman(&[z.re, z.im], &[zp.re, zp.im], &spec).map_err(to_py)
}

/// Mehler heat kernel on the plane with the Kähler spectrum.
#[pyfunction]
fn model_heat_kernel(z: Complex64, zp: Complex64, u: f64) -> PyResult<Complex64> {
    let spec = ModelSpectrum::kaehler(1);
    model::model_heat_kernel(&[z.re, z.im], &[zp.re, zp.im], u, &spec).map_err(to_py)
}

#[pymodule]
fn bergman_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(fit_expansion, m)?)?;
    m.add_function(wrap_pyfunction!(check_b1, m)?)?;
    m.add_function(wrap_pyfunction!(b1, m)?)?;
    m.add_function(wrap_pyfunction!(j2u_closed, m)?)?;
    m.add_function(wrap_pyfunction!(j2u_volterra, m)?)?;
    m.add_function(wrap_pyfunction!(model_bergman, m)?)?;
    m.add_function(wrap_pyfunction!(model_heat_kernel, m)?)?;
    Ok(())
}
