//! Tangent space of the rank-r manifold at the current iterate, in
//! coefficient form: a matrix UΓ₁Uᵀ + UΓ₂ᵀ + Γ₂Uᵀ is carried as the pair
//! (Γ₁, Γ₂) with UᵀΓ₂ = 0, and the composed measurement operators act on
//! coefficients directly in O(mr + nr²) without ever forming an n×n
//! matrix.

use nalgebra::{DMatrix, DVector};

use crate::basis::{apply_a_star, MeasurementVector, SampleSet};
use crate::error::{EdgError, Result};
use crate::linalg::SymMatrix;

/// Coefficients (Γ₁, Γ₂) of a tangent-space element at some orthonormal
/// U: Γ₁ is r×r symmetric, Γ₂ is n×r with UᵀΓ₂ = 0.
///
/// The inner product is ⟨c, c'⟩ = ⟨Γ₁, Γ₁'⟩ + 2⟨Γ₂, Γ₂'⟩, which equals
/// the Frobenius inner product of the embedded matrices — the reduced
/// system is self-adjoint in exactly this metric, so CG must use it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentCoeffs {
    gamma1: DMatrix<f64>,
    gamma2: DMatrix<f64>,
}

impl TangentCoeffs {
    /// Wrap raw blocks; Γ₁ is symmetrized exactly on entry.
    pub fn new(gamma1: DMatrix<f64>, gamma2: DMatrix<f64>) -> Result<Self> {
        if gamma1.nrows() != gamma1.ncols() {
            return Err(EdgError::DimensionMismatch(format!(
                "gamma1 must be square, got {}x{}",
                gamma1.nrows(),
                gamma1.ncols()
            )));
        }
        if gamma2.ncols() != gamma1.nrows() {
            return Err(EdgError::DimensionMismatch(format!(
                "gamma2 has {} columns but gamma1 is {r}x{r}",
                gamma2.ncols(),
                r = gamma1.nrows(),
            )));
        }
        let r = gamma1.nrows();
        let mut g1 = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                g1[(i, j)] = 0.5 * (gamma1[(i, j)] + gamma1[(j, i)]);
            }
        }
        Ok(TangentCoeffs {
            gamma1: g1,
            gamma2,
        })
    }

    pub fn zeros(n: usize, r: usize) -> Self {
        TangentCoeffs {
            gamma1: DMatrix::zeros(r, r),
            gamma2: DMatrix::zeros(n, r),
        }
    }

    pub fn r(&self) -> usize {
        self.gamma1.nrows()
    }

    pub fn n(&self) -> usize {
        self.gamma2.nrows()
    }

    pub fn gamma1(&self) -> &DMatrix<f64> {
        &self.gamma1
    }

    pub fn gamma2(&self) -> &DMatrix<f64> {
        &self.gamma2
    }

    /// Coefficient inner product (= Frobenius inner product of the
    /// embedded matrices).
    pub fn dot(&self, other: &Self) -> f64 {
        self.gamma1.dot(&other.gamma1) + 2.0 * self.gamma2.dot(&other.gamma2)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }

    /// `self += a·other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.gamma1.zip_apply(&other.gamma1, |x, y| *x += a * y);
        self.gamma2.zip_apply(&other.gamma2, |x, y| *x += a * y);
    }

    pub fn scale(&mut self, a: f64) {
        self.gamma1 *= a;
        self.gamma2 *= a;
    }

    /// Re-impose UᵀΓ₂ = 0 (roundoff drifts across many CG steps).
    pub fn reproject(&mut self, u: &DMatrix<f64>) {
        let c = u.transpose() * &self.gamma2;
        self.gamma2 -= u * c;
    }

    /// Apply a diagonal (in this coordinate system) operator: Γ₁ entry
    /// (i,j) scales by `f1[(i,j)]`, Γ₂ column t scales by `f2[t]`.
    pub fn scale_entrywise(&mut self, f1: &DMatrix<f64>, f2: &DVector<f64>) -> Result<()> {
        let r = self.r();
        if f1.nrows() != r || f1.ncols() != r || f2.len() != r {
            return Err(EdgError::DimensionMismatch(format!(
                "scaling factors {}x{} / {} for rank-{r} coefficients",
                f1.nrows(),
                f1.ncols(),
                f2.len()
            )));
        }
        self.gamma1.zip_apply(f1, |x, f| *x *= f);
        for t in 0..r {
            let mut col = self.gamma2.column_mut(t);
            col *= f2[t];
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.gamma1.iter().all(|x| x.is_finite()) && self.gamma2.iter().all(|x| x.is_finite())
    }
}

fn check_u(u: &DMatrix<f64>, n: usize) -> Result<()> {
    if u.nrows() != n {
        return Err(EdgError::DimensionMismatch(format!(
            "eigenbasis has {} rows, expected {n}",
            u.nrows()
        )));
    }
    Ok(())
}

fn check_coeffs(u: &DMatrix<f64>, c: &TangentCoeffs) -> Result<()> {
    if c.r() != u.ncols() || c.n() != u.nrows() {
        return Err(EdgError::DimensionMismatch(format!(
            "coefficients are ({}, {}x{}) but U is {}x{}",
            c.r(),
            c.n(),
            c.r(),
            u.nrows(),
            u.ncols()
        )));
    }
    Ok(())
}

/// P_T*(Z): the coefficients of the tangent projection of Z,
/// Γ₁ = UᵀZU and Γ₂ = ZU − U·Γ₁.
pub fn project_t_star(u: &DMatrix<f64>, z: &SymMatrix) -> Result<TangentCoeffs> {
    check_u(u, z.n())?;
    let zu = z.as_matrix() * u;
    let gamma1 = u.transpose() * &zu;
    let gamma2 = &zu - u * &gamma1;
    TangentCoeffs::new(gamma1, gamma2)
}

/// Embed coefficients back to a dense symmetric matrix
/// UΓ₁Uᵀ + UΓ₂ᵀ + Γ₂Uᵀ.
pub fn embed_t(u: &DMatrix<f64>, c: &TangentCoeffs) -> Result<SymMatrix> {
    check_coeffs(u, c)?;
    let ug1 = u * c.gamma1();
    let dense = &ug1 * u.transpose() + u * c.gamma2().transpose() + c.gamma2() * u.transpose();
    SymMatrix::from_dense(&dense)
}

/// A·P_T in coefficient form: the measurement vector of the embedded
/// matrix, computed per sample in O(mr + nr²).
///
/// Per pair (i,j): with M = Γ₁Uᵀ and row vectors uᵢ of U, γᵢ of Γ₂,
/// the squared-distance functional splits into the Γ₁ part
/// z = uᵢᵀΓ₁uᵢ + uⱼᵀΓ₁uⱼ − 2uᵢᵀΓ₁uⱼ and the Γ₂ part
/// 2(uᵢᵀγᵢ + uⱼᵀγⱼ − uᵢᵀγⱼ − uⱼᵀγᵢ). The row-sum block is
/// UΓ₁c₁ + Uc₂ + Γ₂c₁ with c₁ = Uᵀ1, c₂ = Γ₂ᵀ1.
pub fn apply_a_pt(s: &SampleSet, u: &DMatrix<f64>, c: &TangentCoeffs) -> Result<MeasurementVector> {
    check_u(u, s.n())?;
    check_coeffs(u, c)?;
    let n = s.n();
    let m = s.m();
    let r = c.r();
    // M = Γ₁Uᵀ once: O(nr²); each sample then costs O(r).
    let mt = c.gamma1() * u.transpose();
    let mut values = DVector::zeros(m + n);
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        let ui = u.row(i);
        let uj = u.row(j);
        let gi = c.gamma2().row(i);
        let gj = c.gamma2().row(j);
        let mut z = 0.0;
        let mut alpha = 0.0;
        for t in 0..r {
            let mi = mt[(t, i)];
            let mj = mt[(t, j)];
            z += ui[t] * (mi - mj) - uj[t] * (mi - mj);
            alpha += (ui[t] - uj[t]) * (gi[t] - gj[t]);
        }
        values[k] = z + 2.0 * alpha;
    }
    let ones = DVector::from_element(n, 1.0);
    let c1 = u.transpose() * &ones;
    let c2 = c.gamma2().transpose() * &ones;
    let rows = u * (c.gamma1() * &c1) + u * c2 + c.gamma2() * c1;
    for i in 0..n {
        values[m + i] = rows[i];
    }
    MeasurementVector::new(m, values)
}

/// P_T*·A* in coefficient form: the tangent coefficients of A*(y),
/// computed in O(mr + nr²) from the sparse pair accumulation and the
/// rank-structured diagonal part, without densifying A*(y).
pub fn apply_ptstar_astar(
    s: &SampleSet,
    u: &DMatrix<f64>,
    y: &MeasurementVector,
) -> Result<TangentCoeffs> {
    check_u(u, s.n())?;
    if y.m() != s.m() || y.n() != s.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "measurement vector is ({}+{}) but sample set is ({}+{})",
            y.m(),
            y.n(),
            s.m(),
            s.n()
        )));
    }
    let n = s.n();
    let m = s.m();
    let r = u.ncols();
    let yv = y.values();

    // SU where S = Σ y_ℓ(e_i−e_j)(e_i−e_j)ᵀ: row i gains y_ℓ(uᵢ−uⱼ),
    // row j the negative.
    let mut su = DMatrix::zeros(n, r);
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        let c = yv[k];
        for t in 0..r {
            let d = c * (u[(i, t)] - u[(j, t)]);
            su[(i, t)] += d;
            su[(j, t)] -= d;
        }
    }
    // Diagonal branch A*(q) = ½(q1ᵀ + 1qᵀ):
    // (A*q)·U = ½·q·(1ᵀU) + ½·1·(qᵀU).
    let q = DVector::from_fn(n, |i, _| yv[m + i]);
    let ones = DVector::from_element(n, 1.0);
    let c1 = u.transpose() * &ones; // r-vector 1ᵀU
    let qu = u.transpose() * &q; // r-vector qᵀU
    let au = &su + 0.5 * (&q * c1.transpose()) + 0.5 * (&ones * qu.transpose());

    let gamma1 = u.transpose() * &au;
    let gamma2 = &au - u * &gamma1;
    let mut out = TangentCoeffs::new(gamma1, gamma2)?;
    out.reproject(u);
    Ok(out)
}

/// Re-express coefficients at a new eigenbasis:
/// P_{T_new}*(embedded at U_prev), via the r×r cross blocks only.
pub fn transfer_coeffs(
    u_prev: &DMatrix<f64>,
    c_prev: &TangentCoeffs,
    u_new: &DMatrix<f64>,
) -> Result<TangentCoeffs> {
    check_coeffs(u_prev, c_prev)?;
    if u_new.nrows() != u_prev.nrows() {
        return Err(EdgError::DimensionMismatch(format!(
            "bases have {} and {} rows",
            u_prev.nrows(),
            u_new.nrows()
        )));
    }
    let b = u_new.transpose() * u_prev; // r_new × r_prev
    let c2 = u_new.transpose() * c_prev.gamma2(); // r_new × r_prev
    let g1b = c_prev.gamma1() * b.transpose(); // r_prev × r_new
    let gamma1 = &b * &g1b + &b * c2.transpose() + &c2 * b.transpose();
    // embedded·U_new = U_prevΓ₁Bᵀ + U_prevC₂ᵀ + Γ₂Bᵀ.
    let xu = u_prev * &g1b + u_prev * c2.transpose() + c_prev.gamma2() * b.transpose();
    let gamma2 = &xu - u_new * &gamma1;
    let mut out = TangentCoeffs::new(gamma1, gamma2)?;
    out.reproject(u_new);
    Ok(out)
}

/// Equivalent to `apply_ptstar_astar` but going through a dense A*(y);
/// kept as the O(n²r) reference path for oracle checks.
pub fn project_astar_dense(
    s: &SampleSet,
    u: &DMatrix<f64>,
    y: &MeasurementVector,
) -> Result<TangentCoeffs> {
    let az = apply_a_star(s, y)?;
    project_t_star(u, &az)
}
