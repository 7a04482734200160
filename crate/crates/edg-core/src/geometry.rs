//! Point clouds and the conversions among points, Gram matrices, and
//! squared-distance matrices, plus the two evaluation tools built on them:
//! classical multidimensional scaling (the full-information oracle) and the
//! relative Procrustes distance.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{EdgError, Result};
use crate::linalg::{truncated_eig, LinOpHandle, SymMatrix};

/// Below this size eigendecompositions go through the dense path; above it
/// the matrix-free Krylov solver (the large real datasets sit in the
/// thousands, where dense O(n³) is the bottleneck).
const DENSE_EIG_CUTOFF: usize = 384;

/// An r×n configuration of n points in ℝʳ, stored column-per-point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: DMatrix<f64>,
}

impl PointCloud {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.ncols() == 0 {
            return Err(EdgError::EmptyCloud("no points".into()));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(EdgError::NonFiniteIterate("point coordinates".into()));
        }
        Ok(PointCloud { coords })
    }

    /// Ambient dimension r.
    pub fn r(&self) -> usize {
        self.coords.nrows()
    }

    /// Point count n.
    pub fn n(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.coords.column(i).into_owned()
    }

    /// Translate so the centroid is the origin; the Gram matrix of the
    /// result annihilates the all-ones vector.
    pub fn center(&self) -> PointCloud {
        let n = self.n();
        let mut coords = self.coords.clone();
        for d in 0..self.r() {
            let mean = coords.row(d).sum() / n as f64;
            for i in 0..n {
                coords[(d, i)] -= mean;
            }
        }
        PointCloud { coords }
    }

    /// Gram matrix PᵀP (no implicit centering).
    pub fn gram(&self) -> SymMatrix {
        let n = self.n();
        SymMatrix::from_fn(n, |i, j| self.coords.column(i).dot(&self.coords.column(j)))
    }

    /// Squared-distance matrix D_ij = ‖p_i − p_j‖².
    pub fn edm(&self) -> SymMatrix {
        let n = self.n();
        let sq: Vec<f64> = (0..n).map(|i| self.coords.column(i).norm_squared()).collect();
        SymMatrix::from_fn(n, |i, j| {
            if i == j {
                0.0
            } else {
                sq[i] + sq[j] - 2.0 * self.coords.column(i).dot(&self.coords.column(j))
            }
        })
    }

    /// CSV with header `x1,…,xr`, one row per point, 17 significant digits
    /// (enough to round-trip every f64 bit-exactly).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.r()).map(|d| format!("x{d}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n() {
            for d in 0..self.r() {
                if d > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:.16e}", self.coords[(d, i)]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| EdgError::EmptyCloud("empty point file".into()))?;
        let r = header.split(',').count();
        if r == 0 || !header.trim_start().starts_with('x') {
            return Err(EdgError::ParseError {
                line: 1,
                msg: format!("expected header x1..x{r}"),
            });
        }
        let mut cols: Vec<f64> = Vec::new();
        let mut n = 0;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != r {
                return Err(EdgError::ParseError {
                    line: idx + 1,
                    msg: format!("expected {r} fields, got {}", fields.len()),
                });
            }
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|e| EdgError::ParseError {
                    line: idx + 1,
                    msg: format!("bad coordinate {f:?}: {e}"),
                })?;
                cols.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(EdgError::EmptyCloud("point file has no rows".into()));
        }
        // cols is row-major over points; transpose into r×n.
        let coords = DMatrix::from_fn(r, n, |d, i| cols[i * r + d]);
        PointCloud::new(coords)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

/// Leading eigenpairs of a symmetric matrix sorted by signed value
/// (descending), together with the spectral norm. Dense for small n,
/// Krylov above the cutoff.
fn top_eigenpairs_by_value(x: &SymMatrix, k: usize) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let n = x.n();
    let k = k.min(n);
    if n <= DENSE_EIG_CUTOFF {
        let eig = x.as_matrix().clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let sigma1 = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let values: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(n, k);
        for (c, &i) in order[..k].iter().enumerate() {
            vectors.set_column(c, &eig.eigenvectors.column(i));
        }
        Ok((values, vectors, sigma1))
    } else {
        // Grab extra magnitude-sorted pairs so the k algebraically largest
        // are present even with some large-magnitude negative eigenvalues.
        let kk = (k + 6).min(n);
        let op = LinOpHandle::from_sym(x);
        let pairs = truncated_eig(&op, kk, 1e-12, 0x9e0_17a5)?;
        let sigma1 = pairs.lambda.map(f64::abs).max();
        let mut order: Vec<usize> = (0..kk).collect();
        order.sort_by(|&a, &b| pairs.lambda[b].partial_cmp(&pairs.lambda[a]).unwrap());
        let values: Vec<f64> = order[..k].iter().map(|&i| pairs.lambda[i]).collect();
        let mut vectors = DMatrix::zeros(n, k);
        for (c, &i) in order[..k].iter().enumerate() {
            vectors.set_column(c, &pairs.u.column(i));
        }
        Ok((values, vectors, sigma1))
    }
}

/// Extract an r-dimensional configuration from a Gram matrix via the
/// r-truncated eigendecomposition: P = diag(√λ)·U_rᵀ.
///
/// Eigenvalues in [−1e-8·σ₁, 0) are treated as numerical noise and clamped
/// to zero (zero coordinate rows); anything lower means the matrix is not a
/// Gram matrix of any point set and errors with `NotPsd`. Requests with
/// r > rank simply produce trailing zero rows.
pub fn points_from_gram(x: &SymMatrix, r: usize) -> Result<PointCloud> {
    let n = x.n();
    if n == 0 {
        return Err(EdgError::EmptyCloud("empty Gram matrix".into()));
    }
    let k = r.min(n);
    let (values, vectors, sigma1) = top_eigenpairs_by_value(x, k)?;
    let floor = -1e-8 * sigma1;
    let mut coords = DMatrix::zeros(r, n);
    for (c, &lam) in values.iter().enumerate() {
        if lam < floor {
            return Err(EdgError::NotPsd(format!(
                "eigenvalue {lam:.6e} below tolerance floor {floor:.6e}"
            )));
        }
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            coords[(c, i)] = s * vectors[(i, c)];
        }
    }
    PointCloud::new(coords)
}

/// Classical multidimensional scaling: double-center the full
/// squared-distance matrix, −½·J·D·J with J = I − 11ᵀ/n, then extract
/// points. The full-information oracle for every partial-information run.
pub fn classical_mds(d: &SymMatrix, r: usize) -> Result<PointCloud> {
    let n = d.n();
    if n == 0 {
        return Err(EdgError::EmptyCloud("empty distance matrix".into()));
    }
    let nf = n as f64;
    let mu: Vec<f64> = (0..n).map(|i| (0..n).map(|j| d.get(i, j)).sum::<f64>() / nf).collect();
    let mu_bar = mu.iter().sum::<f64>() / nf;
    let g = SymMatrix::from_fn(n, |i, j| -0.5 * (d.get(i, j) - mu[i] - mu[j] + mu_bar));
    points_from_gram(&g, r)
}

/// Relative Procrustes distance: align `p0` onto `p_rec` with the optimal
/// translation and orthogonal map (reflections allowed — distances cannot
/// tell chiralities apart) and report the residual divided by the centered
/// norm of `p0`. No scaling is fitted.
pub fn procrustes_distance(p_rec: &PointCloud, p0: &PointCloud) -> Result<f64> {
    if p_rec.r() != p0.r() || p_rec.n() != p0.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            p_rec.r(),
            p_rec.n(),
            p0.r(),
            p0.n()
        )));
    }
    let xc = p0.center();
    let yc = p_rec.center();
    let x_norm2 = xc.coords.norm_squared();
    if x_norm2 == 0.0 {
        return Err(EdgError::DegenerateCloud(
            "reference cloud has zero centered norm".into(),
        ));
    }
    if xc.coords == yc.coords {
        return Ok(0.0);
    }
    // Cross-covariance K = Yc·Xcᵀ; the maximizer of ⟨Q, K⟩ over orthogonal
    // Q is A·Bᵀ from K = AΣBᵀ. Measuring ‖Q·Xc − Yc‖ directly (rather than
    // through ‖X‖²+‖Y‖²−2‖K‖_*) avoids catastrophic cancellation near a
    // perfect alignment.
    let k = &yc.coords * xc.coords.transpose();
    let svd = k.svd(true, true);
    let a = svd.u.as_ref().expect("svd with vectors");
    let bt = svd.v_t.as_ref().expect("svd with vectors");
    let q = a * bt;
    let residual = (q * &xc.coords - &yc.coords).norm();
    Ok(residual / x_norm2.sqrt())
}

/// Recovery test at relative tolerance `tol` (boundary counts as success).
pub fn success(p_rec: &PointCloud, p0: &PointCloud, tol: f64) -> Result<bool> {
    Ok(procrustes_distance(p_rec, p0)? <= tol)
}
