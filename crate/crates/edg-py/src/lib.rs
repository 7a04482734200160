//! Python bindings for the distance-geometry toolkit. Exposes the point
//! cloud and sample-set types, the synthetic generators, the IRLS solver,
//! and the Procrustes metric. Coordinates cross the boundary as plain
//! nested lists with one point per row.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use edg_core::basis::{IndexPair, SampleSet};
use edg_core::dataio;
use edg_core::geometry::{self, PointCloud};
use edg_core::irls::{matrix_irls, IrlsConfig, WlsMode};
use edg_core::linalg::SymMatrix;
use edg_core::EdgError;

fn err(e: EdgError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().copied().collect())
        .collect()
}

/// A centered configuration of `n` points in `r` dimensions.
#[pyclass(name = "PointCloud", skip_from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: PointCloud,
}

#[pymethods]
impl PyPointCloud {
    /// Build from a list of points, one `[x_1, …, x_r]` row per point.
    #[new]
    fn new(points: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = points.len();
        let r = points.first().map_or(0, |row| row.len());
        if points.iter().any(|row| row.len() != r) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        let coords = DMatrix::from_fn(r, n, |d, i| points[i][d]);
        Ok(Self {
            inner: PointCloud::new(coords).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.r()
    }

    /// Coordinates as a list of points, one row per point.
    fn points(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.coords())
    }

    /// Squared-distance matrix as nested lists.
    fn edm(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.edm().as_matrix())
    }

    /// Gram matrix of the centered configuration as nested lists.
    fn gram(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.gram().as_matrix())
    }

    /// Translate the centroid to the origin.
    fn center(&self) -> Self {
        Self {
            inner: self.inner.center(),
        }
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PointCloud::from_csv_str(text).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("PointCloud(n={}, r={})", self.inner.n(), self.inner.r())
    }
}

/// Observed squared distances over a multiset of index pairs.
#[pyclass(name = "SampleSet", skip_from_py_object)]
#[derive(Clone)]
struct PySampleSet {
    inner: SampleSet,
}

#[pymethods]
impl PySampleSet {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// Observed index pairs as 1-based `(i, j)` tuples, matching the
    /// on-disk sample format.
    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner
            .pairs()
            .iter()
            .map(|p| match *p {
                IndexPair::Off { i, j } => (i, j),
                IndexPair::Diag { i } => (i, i),
            })
            .collect()
    }

    /// Observed squared distances, aligned with `pairs()`.
    fn d2(&self) -> Vec<f64> {
        self.inner.d2().to_vec()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SampleSet::from_text(text).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("SampleSet(n={}, m={})", self.inner.n(), self.inner.m())
    }

    fn __len__(&self) -> usize {
        self.inner.m()
    }
}

/// Outcome of a reconstruction run.
#[pyclass(name = "SolveResult")]
struct PySolveResult {
    #[pyo3(get)]
    points: PyPointCloud,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    relative_error: Option<f64>,
    #[pyo3(get)]
    eps: f64,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(converged={}, iterations={}, relative_error={:?})",
            self.converged, self.iterations, self.relative_error
        )
    }
}

/// Standard Gaussian configuration with a fixed seed.
#[pyfunction]
fn gen_gaussian(n: usize, r: usize, seed: u64) -> PyResult<PyPointCloud> {
    Ok(PyPointCloud {
        inner: dataio::gen_gaussian(n, r, seed).map_err(err)?,
    })
}

/// Configuration whose Gram spectrum spans the given condition number.
#[pyfunction]
fn gen_ill_conditioned(n: usize, r: usize, kappa: f64, seed: u64) -> PyResult<PyPointCloud> {
    Ok(PyPointCloud {
        inner: dataio::gen_ill_conditioned(n, r, kappa, seed).map_err(err)?,
    })
}

/// Number of samples corresponding to an oversampling factor ρ.
#[pyfunction]
fn oversampling_to_m(rho: f64, n: usize, r: usize) -> usize {
    dataio::oversampling_to_m(rho, n, r)
}

/// Draw `m` pairs and observe their squared distances.
#[pyfunction]
#[pyo3(signature = (cloud, m, seed, with_replacement = false))]
fn sample_and_observe(
    cloud: &PyPointCloud,
    m: usize,
    seed: u64,
    with_replacement: bool,
) -> PyResult<PySampleSet> {
    Ok(PySampleSet {
        inner: dataio::sample_and_observe(&cloud.inner, m, seed, with_replacement).map_err(err)?,
    })
}

/// Reconstruct an `r`-dimensional configuration from partial distances.
///
/// `mode` selects the weighted least-squares route ("tangent" or "range");
/// passing `truth` adds a per-iteration Procrustes error to the run and a
/// final relative error to the result.
#[pyfunction]
#[pyo3(signature = (samples, rank, mode = "tangent", max_outer = None, truth = None))]
fn solve(
    samples: &PySampleSet,
    rank: usize,
    mode: &str,
    max_outer: Option<usize>,
    truth: Option<&PyPointCloud>,
) -> PyResult<PySolveResult> {
    let mut cfg = IrlsConfig::new(rank);
    cfg.mode = mode.parse::<WlsMode>().map_err(err)?;
    if let Some(mo) = max_outer {
        cfg.max_outer = mo;
    }
    let out = matrix_irls(&samples.inner, &cfg, truth.map(|t| &t.inner)).map_err(err)?;
    let points = PyPointCloud {
        inner: out.recovered_points(rank).map_err(err)?,
    };
    let relative_error = match truth {
        Some(t) => Some(geometry::procrustes_distance(&points.inner, &t.inner).map_err(err)?),
        None => None,
    };
    Ok(PySolveResult {
        points,
        converged: out.converged,
        iterations: out.outer_iters,
        relative_error,
        eps: out.eps,
    })
}

/// Smallest relative misfit between two configurations over rigid motions
/// (rotations, reflections, translations).
#[pyfunction]
fn procrustes_distance(a: &PyPointCloud, b: &PyPointCloud) -> PyResult<f64> {
    geometry::procrustes_distance(&a.inner, &b.inner).map_err(err)
}

/// Embed a squared-distance matrix into `r` dimensions by classical
/// multidimensional scaling.
#[pyfunction]
fn classical_mds(edm: Vec<Vec<f64>>, r: usize) -> PyResult<PyPointCloud> {
    let n = edm.len();
    if edm.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err("distance matrix must be square"));
    }
    let d = SymMatrix::from_dense(&DMatrix::from_fn(n, n, |i, j| edm[i][j])).map_err(err)?;
    Ok(PyPointCloud {
        inner: geometry::classical_mds(&d, r).map_err(err)?,
    })
}

#[pymodule]
fn edg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PySampleSet>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(gen_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(gen_ill_conditioned, m)?)?;
    m.add_function(wrap_pyfunction!(oversampling_to_m, m)?)?;
    m.add_function(wrap_pyfunction!(sample_and_observe, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes_distance, m)?)?;
    m.add_function(wrap_pyfunction!(classical_mds, m)?)?;
    Ok(())
}
