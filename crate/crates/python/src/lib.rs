//! Python bindings. Structured results (reports, estimates) are returned as
//! plain dicts decoded from the same JSON the CLI writes.

use koopbound::bounds::{self, combined_minimum, compute_variant, BoundVariant};
use koopbound::kernels::{self, MultiTaskKernelConfig};
use koopbound::matana::{self, class_membership, project_to_class, Matrix, WeightClassKind, WeightClassSpec};
use koopbound::network::{self, generate_network, GeneratorConfig, NetworkSpec};
use koopbound::rademacher::{self, RademacherConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(value_err)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

fn parse_variant(name: &str) -> PyResult<BoundVariant> {
    BoundVariant::ALL
        .into_iter()
        .find(|v| v.as_str() == name)
        .ok_or_else(|| value_err(format!("unknown variant {name:?}")))
}

fn parse_kind(kind: &str) -> PyResult<WeightClassKind> {
    match kind {
        "invertible" => Ok(WeightClassKind::Invertible),
        "injective" => Ok(WeightClassKind::Injective),
        "orthogonal" => Ok(WeightClassKind::Orthogonal),
        other => Err(value_err(format!("unknown class kind {other:?}"))),
    }
}

/// Feedforward network with Sobolev orders and final map.
#[pyclass(module = "koopbound_py", skip_from_py_object)]
struct Network {
    inner: NetworkSpec,
}

#[pymethods]
impl Network {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: NetworkSpec = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Synthetic network from a generator config (JSON, same schema as the CLI).
    #[staticmethod]
    fn generate(config_json: &str) -> PyResult<Self> {
        let cfg: GeneratorConfig = serde_json::from_str(config_json).map_err(value_err)?;
        Ok(Self { inner: generate_network(&cfg).map_err(value_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn tasks(&self) -> usize {
        self.inner.tasks
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn sobolev_orders(&self) -> Vec<f64> {
        self.inner.sobolev_orders.clone()
    }

    fn weights(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.layers.iter().map(|l| rows_of(&l.weight)).collect()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        network::forward(&self.inner, &x).map_err(value_err)
    }

    /// Matérn kernel config matching the input dimension and `s_0`, as JSON.
    fn default_kernel_json(&self) -> PyResult<String> {
        let k = self.inner.default_kernel().map_err(value_err)?;
        serde_json::to_string(&k).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Network(widths={:?}, T={}, m={})", self.inner.widths(), self.inner.tasks, self.inner.m)
    }
}

/// Weight class `{W : ‖W‖ ≤ C, det ≥ D}` of the given kind.
#[pyclass(module = "koopbound_py", skip_from_py_object)]
struct WeightClass {
    inner: WeightClassSpec,
}

#[pymethods]
impl WeightClass {
    #[new]
    #[pyo3(signature = (kind, c, d))]
    fn new(kind: &str, c: f64, d: f64) -> PyResult<Self> {
        let inner = WeightClassSpec::new(parse_kind(kind)?, c, d).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn d(&self) -> f64 {
        self.inner.d
    }

    fn contains(&self, weight: Vec<Vec<f64>>) -> PyResult<bool> {
        Ok(class_membership(&matrix(weight)?, &self.inner).map_err(value_err)?.member)
    }

    fn project(&self, weight: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&project_to_class(&matrix(weight)?, &self.inner).map_err(value_err)?))
    }

    fn __repr__(&self) -> String {
        format!("WeightClass(kind={:?}, C={}, D={})", self.inner.kind, self.inner.c, self.inner.d)
    }
}

fn kernel_or_default(net: &NetworkSpec, kernel_json: Option<&str>) -> PyResult<MultiTaskKernelConfig> {
    match kernel_json {
        Some(text) => serde_json::from_str(text).map_err(value_err),
        None => net.default_kernel().map_err(value_err),
    }
}

/// Bound reports for the requested variants (default: all applicable).
///
/// Returns `{"bounds": [...], "skipped": [...], "combined": {...} | None}`.
#[pyfunction]
#[pyo3(signature = (network, class_, n, kernel_json=None, variants=None, g=None))]
fn compute_bounds(
    py: Python<'_>,
    network: &Network,
    class_: &WeightClass,
    n: usize,
    kernel_json: Option<&str>,
    variants: Option<Vec<String>>,
    g: Option<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let kernel = kernel_or_default(&network.inner, kernel_json)?;
    let explicit = variants.is_some();
    let selected = match variants {
        Some(names) => names.iter().map(|s| parse_variant(s)).collect::<PyResult<Vec<_>>>()?,
        None => BoundVariant::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for v in selected {
        match compute_variant(v, &network.inner, &class_.inner, &kernel, n, g.as_deref()) {
            Ok(r) => reports.push(r),
            Err(e) if !explicit => skipped.push(serde_json::json!({"variant": v, "reason": e.to_string()})),
            Err(e) => return Err(value_err(format!("{v}: {e}"))),
        }
    }
    let combined = combined_minimum(&reports).map(|(variant, total)| serde_json::json!({"variant": variant, "total": total}));
    to_py(py, &serde_json::json!({"bounds": reports, "skipped": skipped, "combined": combined}))
}

/// Monte-Carlo lower bound on the Rademacher complexity of the class.
#[pyfunction]
#[pyo3(signature = (network, class_, data, config_json=None))]
fn estimate(
    py: Python<'_>,
    network: &Network,
    class_: &WeightClass,
    data: Vec<Vec<f64>>,
    config_json: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let cfg: RademacherConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => RademacherConfig::default(),
    };
    let est = py
        .detach(|| rademacher::estimate_sup(&network.inner, &class_.inner, &data, &cfg))
        .map_err(value_err)?;
    to_py(py, &est)
}

/// Exact grid-class Rademacher complexity by enumerating all sign patterns.
#[pyfunction]
fn brute_force_oracle(py: Python<'_>, networks: Vec<PyRef<'_, Network>>, data: Vec<Vec<f64>>, m: usize) -> PyResult<Py<PyAny>> {
    let grid: Vec<NetworkSpec> = networks.iter().map(|n| n.inner.clone()).collect();
    let result = rademacher::brute_force_oracle(&grid, &data, m).map_err(value_err)?;
    to_py(py, &result)
}

#[pyfunction]
fn fixed_function_rademacher(values: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> PyResult<f64> {
    rademacher::fixed_function_rademacher(&matrix(values)?, &matrix(sigma)?).map_err(value_err)
}

#[pyfunction]
fn ratio_sup(weight: Vec<Vec<f64>>, s_in: f64, s_out: f64) -> PyResult<f64> {
    bounds::ratio_sup(&matrix(weight)?, s_in, s_out).map_err(value_err)
}

#[pyfunction]
fn singular_values(weight: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(matana::svd(&matrix(weight)?).map_err(value_err)?.singular_values)
}

/// Matrix `A` with `A vec(x) = vec(filter * x)` (full convolution, row-major).
#[pyfunction]
fn conv_filter_to_matrix(filter: Vec<Vec<f64>>, input_shape: (usize, usize)) -> PyResult<Vec<Vec<f64>>> {
    let conv = matana::conv_filter_to_matrix(&matrix(filter)?, input_shape).map_err(value_err)?;
    Ok(rows_of(&conv.matrix))
}

#[pyfunction]
fn gaussian_bump_sobolev_norm_sq(r: f64, s: f64, d: usize) -> PyResult<f64> {
    kernels::gaussian_bump_sobolev_norm_sq(r, s, d).map_err(value_err)
}

#[pymodule]
fn koopbound_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<WeightClass>()?;
    m.add_function(wrap_pyfunction!(compute_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_function_rademacher, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_sup, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(conv_filter_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_bump_sobolev_norm_sq, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
