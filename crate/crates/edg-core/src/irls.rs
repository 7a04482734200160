//! Iteratively reweighted least squares on the measurement constraints,
//! with the quadratic weight tied to the smoothed log-det objective.
//!
//! Every per-iteration object stays O(m + nr): the iterate is carried as
//! A*(r) + UΓ₁Uᵀ + UΓ₂ᵀ + Γ₂Uᵀ and never densified, the weighted solve
//! is reduced to tangent coefficients through the Woodbury identity, and
//! the spectral update runs on the implicit matrix-vector product.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{apply_a_star, apply_aa_star, solve_aa_star, MeasurementVector, SampleSet};
use crate::dataio::dof;
use crate::error::{EdgError, Result};
use crate::geometry::{procrustes_distance, PointCloud};
use crate::linalg::{cg, truncated_eig_relaxed, CgSpace, LinOpHandle, SpectralState, SymMatrix};
use crate::tangent::{apply_a_pt, apply_ptstar_astar, embed_t, transfer_coeffs, TangentCoeffs};

/// Stop once ε ≤ 1e-14·σ₁: the smoothing has hit the noise floor of
/// double precision and further sharpening is meaningless.
pub const EPS_FLOOR_REL: f64 = 1e-14;
/// Residual target for the per-iteration spectral decomposition.
pub const EIG_TOL: f64 = 1e-11;
/// Feasibility slack: every iterate keeps ‖A(X) − y‖ ≤ 10·tol_inner·‖y‖.
pub const FEASIBILITY_FACTOR: f64 = 10.0;

const EIG_SEED_BASE: u64 = 0x51ee_d000;

/// Iteration cap for the nested normal-equation solves; CG on AA* is
/// exact after m + n steps, so this is pure safety margin.
fn aa_cap(s: &SampleSet) -> usize {
    2 * (s.m() + s.n()) + 200
}

/// Which linear system the weighted step solves: the reduced system over
/// tangent coefficients, or the full system over measurement space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WlsMode {
    Tangent,
    Range,
}

impl fmt::Display for WlsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WlsMode::Tangent => write!(f, "tangent"),
            WlsMode::Range => write!(f, "range"),
        }
    }
}

impl FromStr for WlsMode {
    type Err = EdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangent" => Ok(WlsMode::Tangent),
            "range" => Ok(WlsMode::Range),
            other => Err(EdgError::InvalidInput(format!(
                "unknown solve mode {other:?} (expected \"tangent\" or \"range\")"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsConfig {
    /// Target rank r̃ of the sought Gram matrix.
    pub rank: usize,
    pub mode: WlsMode,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative CG tolerance of the weighted least-squares solve.
    pub tol_inner: f64,
    /// Stop when the relative Frobenius change between consecutive
    /// iterates drops below this.
    pub outer_tol: f64,
    /// Residual contract of the per-iterate truncated eigendecomposition,
    /// relative to σ₁.
    pub eig_tol: f64,
}

impl IrlsConfig {
    pub fn new(rank: usize) -> Self {
        IrlsConfig {
            rank,
            mode: WlsMode::Tangent,
            max_outer: 400,
            max_inner: 2000,
            tol_inner: 1e-10,
            outer_tol: 1e-12,
            eig_tol: EIG_TOL,
        }
    }
}

fn check_state(s: &SampleSet, state: &SpectralState) -> Result<()> {
    if state.n() != s.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "spectral state over {} points, sample set over {}",
            state.n(),
            s.n()
        )));
    }
    Ok(())
}

fn check_y(s: &SampleSet, y: &MeasurementVector) -> Result<()> {
    if y.m() != s.m() || y.n() != s.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "measurement vector is ({}+{}) but sample set is ({}+{})",
            y.m(),
            y.n(),
            s.m(),
            s.n()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Weight operator
// ---------------------------------------------------------------------

fn weight_scaled(state: &SpectralState, z: &SymMatrix, inverse: bool) -> Result<SymMatrix> {
    if z.n() != state.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "matrix is {}x{0} but state has {} points",
            z.n(),
            state.n()
        )));
    }
    let Some(eps) = state.eps() else {
        // ε₀ = ∞ initialisation: the weight is the identity by convention.
        if state.rank() == 0 {
            return Ok(z.clone());
        }
        return Err(EdgError::InvalidInput(
            "smoothing parameter unset on a state with kept eigenpairs".into(),
        ));
    };
    let r = state.rank();
    let out_scale = if inverse { eps * eps } else { 1.0 / (eps * eps) };
    if r == 0 {
        let mut out = z.clone();
        out.scale(out_scale);
        return Ok(out);
    }
    let u = state.u();
    let sig = state.sigma();
    let zd = z.as_matrix();
    let zu = zd * u;
    let y1 = u.transpose() * &zu;
    let y2 = &zu - u * &y1;
    let g1 = DMatrix::from_fn(r, r, |i, j| {
        let p = sig[i] * sig[j];
        y1[(i, j)] * if inverse { p } else { 1.0 / p }
    });
    let mut g2 = y2.clone();
    for t in 0..r {
        let p = sig[t] * eps;
        let mut col = g2.column_mut(t);
        col *= if inverse { p } else { 1.0 / p };
    }
    let in_span = u * &y1 * u.transpose() + u * y2.transpose() + &y2 * u.transpose();
    let out = u * &g1 * u.transpose()
        + u * g2.transpose()
        + &g2 * u.transpose()
        + (zd - in_span) * out_scale;
    SymMatrix::from_dense(&out)
}

/// Apply the quadratic weight W of the smoothed log-det objective at the
/// given spectral state: eigen-direction pair (i,j) scales by
/// 1/(max(σᵢ,ε)·max(σⱼ,ε)).
pub fn weight_apply(state: &SpectralState, z: &SymMatrix) -> Result<SymMatrix> {
    weight_scaled(state, z, false)
}

/// Apply W⁻¹ (same structure with reciprocal scalings).
pub fn weight_inverse_apply(state: &SpectralState, z: &SymMatrix) -> Result<SymMatrix> {
    weight_scaled(state, z, true)
}

// ---------------------------------------------------------------------
// Coefficient-space scalings
// ---------------------------------------------------------------------

/// Factors of ε²·C⁻¹ where C = D⁻¹ − ε²·Id is the diagonal core of the
/// Woodbury split: Γ₁ entry (i,j) scales by ε²/(σᵢσⱼ − ε²) and Γ₂
/// column i by ε/(σᵢ − ε).
fn smw_core_factors(state: &SpectralState) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eps = state.eps().ok_or_else(|| {
        EdgError::InvalidInput("smoothing parameter unset for a weighted solve".into())
    })?;
    let r = state.rank();
    let sig = state.sigma();
    let mut f1 = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let den = sig[i] * sig[j] - eps * eps;
            let v = eps * eps / den;
            if !(den > 0.0) || !v.is_finite() {
                return Err(EdgError::SingularC(format!(
                    "sigma_{}*sigma_{} - eps^2 = {den:.3e} underflows",
                    i + 1,
                    j + 1
                )));
            }
            f1[(i, j)] = v;
        }
    }
    let mut f2 = DVector::zeros(r);
    for i in 0..r {
        let den = sig[i] - eps;
        let v = eps / den;
        if !(den > 0.0) || !v.is_finite() {
            return Err(EdgError::SingularC(format!(
                "sigma_{} - eps = {den:.3e} underflows",
                i + 1
            )));
        }
        f2[i] = v;
    }
    Ok((f1, f2))
}

/// Factors of C = D⁻¹ − ε²·Id itself: Γ₁ entry (i,j) scales by
/// σᵢσⱼ − ε², Γ₂ column i by ε(σᵢ − ε).
fn c_factors(state: &SpectralState) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eps = state.eps().ok_or_else(|| {
        EdgError::InvalidInput("smoothing parameter unset for a weighted solve".into())
    })?;
    let r = state.rank();
    let sig = state.sigma();
    let f1 = DMatrix::from_fn(r, r, |i, j| sig[i] * sig[j] - eps * eps);
    let f2 = DVector::from_fn(r, |i, _| eps * (sig[i] - eps));
    if f1.iter().any(|&v| !(v > 0.0)) || f2.iter().any(|&v| !(v > 0.0)) {
        return Err(EdgError::SingularC(
            "a kept eigenvalue coincides with the smoothing parameter".into(),
        ));
    }
    Ok((f1, f2))
}

/// One application of the reduced (Woodbury core) system
/// M = ε²C⁻¹ + P_T*·A*·(AA*)⁻¹·A·P_T over tangent coefficients.
///
/// M is self-adjoint and positive definite in the coefficient inner
/// product, which is what makes the inner CG legitimate.
pub fn reduced_system_apply(
    s: &SampleSet,
    state: &SpectralState,
    c: &TangentCoeffs,
) -> Result<TangentCoeffs> {
    check_state(s, state)?;
    let (f1, f2) = smw_core_factors(state)?;
    let mut out = c.clone();
    out.scale_entrywise(&f1, &f2)?;
    let t = apply_a_pt(s, state.u(), c)?;
    let aa = solve_aa_star(s, &t, aa_cap(s))?;
    let back = apply_ptstar_astar(s, state.u(), &aa.z)?;
    out.axpy(1.0, &back);
    out.reproject(state.u());
    Ok(out)
}

/// Tangent coefficients viewed as a CG vector; axpy re-projects Γ₂
/// against the basis so orthogonality cannot drift over long solves.
#[derive(Clone)]
struct CoeffVec<'a> {
    c: TangentCoeffs,
    u: &'a DMatrix<f64>,
}

impl CgSpace for CoeffVec<'_> {
    fn dot(&self, other: &Self) -> f64 {
        self.c.dot(&other.c)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.c.axpy(a, &x.c);
        self.c.reproject(self.u);
    }
    fn scale(&mut self, a: f64) {
        self.c.scale(a);
    }
    fn zero_like(&self) -> Self {
        CoeffVec {
            c: TangentCoeffs::zeros(self.c.n(), self.c.r()),
            u: self.u,
        }
    }
    fn all_finite(&self) -> bool {
        self.c.all_finite()
    }
}

/// Result of one weighted least-squares step, in compact form:
/// X = A*(resid) + U·Γ₁·Uᵀ + U·Γ₂ᵀ + Γ₂·Uᵀ.
#[derive(Debug, Clone)]
pub struct WlsStep {
    pub resid: MeasurementVector,
    pub gamma: TangentCoeffs,
    pub inner_iters: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

/// Weighted step through the reduced coefficient system, optionally warm
/// started from coefficients transferred off the previous iterate.
pub fn wls_step_tangent(
    s: &SampleSet,
    state: &SpectralState,
    y: &MeasurementVector,
    warm: Option<&TangentCoeffs>,
    tol_inner: f64,
    max_inner: usize,
) -> Result<WlsStep> {
    check_state(s, state)?;
    check_y(s, y)?;
    // Fail fast on a degenerate core rather than mid-CG.
    let _ = smw_core_factors(state)?;
    if let Some(w) = warm {
        if w.n() != s.n() || w.r() != state.rank() {
            return Err(EdgError::DimensionMismatch(format!(
                "warm start is ({}, {}) but state is ({}, {})",
                w.n(),
                w.r(),
                s.n(),
                state.rank()
            )));
        }
    }
    let aa0 = solve_aa_star(s, y, aa_cap(s))?;
    let h = apply_ptstar_astar(s, state.u(), &aa0.z)?;

    let stash: RefCell<Option<EdgError>> = RefCell::new(None);
    let apply = |v: &CoeffVec| -> CoeffVec {
        match reduced_system_apply(s, state, &v.c) {
            Ok(c) => CoeffVec { c, u: state.u() },
            Err(e) => {
                stash.replace(Some(e));
                let mut poison = TangentCoeffs::zeros(v.c.n(), v.c.r());
                poison.axpy(f64::NAN, &v.c);
                CoeffVec {
                    c: poison,
                    u: state.u(),
                }
            }
        }
    };
    let b = CoeffVec {
        c: h,
        u: state.u(),
    };
    let x0 = warm.map(|w| CoeffVec {
        c: w.clone(),
        u: state.u(),
    });
    let solve = cg(apply, &b, x0.as_ref(), tol_inner, max_inner);
    if let Some(e) = stash.into_inner() {
        return Err(e);
    }
    let solve = solve?;
    let gamma = solve.x.c;

    let fitted = apply_a_pt(s, state.u(), &gamma)?;
    let rhs = MeasurementVector::new(s.m(), y.values() - fitted.values())?;
    let aa1 = solve_aa_star(s, &rhs, aa_cap(s))?;
    Ok(WlsStep {
        resid: aa1.z,
        gamma,
        inner_iters: solve.iters,
        converged: solve.converged,
        rel_residual: solve.rel_residual,
    })
}

/// Weighted step through the full measurement-space system
/// (A·P_T·C·P_T*·A* + ε²·AA*)·z = y, then γ = C·P_T*A*z and r = ε²z.
pub fn wls_step_range(
    s: &SampleSet,
    state: &SpectralState,
    y: &MeasurementVector,
    tol_inner: f64,
    max_inner: usize,
) -> Result<WlsStep> {
    check_state(s, state)?;
    check_y(s, y)?;
    let (f1, f2) = c_factors(state)?;
    let eps2 = {
        let e = state.eps_required();
        e * e
    };
    let m = s.m();

    let stash: RefCell<Option<EdgError>> = RefCell::new(None);
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let inner = || -> Result<DVector<f64>> {
            let mv = MeasurementVector::new(m, v.clone())?;
            let mut pt = apply_ptstar_astar(s, state.u(), &mv)?;
            pt.scale_entrywise(&f1, &f2)?;
            let t = apply_a_pt(s, state.u(), &pt)?;
            let aa = apply_aa_star(s, &mv)?;
            Ok(t.into_values() + aa.into_values() * eps2)
        };
        match inner() {
            Ok(out) => out,
            Err(e) => {
                stash.replace(Some(e));
                DVector::from_element(v.len(), f64::NAN)
            }
        }
    };
    let solve = cg(apply, y.values(), None, tol_inner, max_inner);
    if let Some(e) = stash.into_inner() {
        return Err(e);
    }
    let solve = solve?;
    let z = MeasurementVector::new(m, solve.x)?;
    let mut gamma = apply_ptstar_astar(s, state.u(), &z)?;
    gamma.scale_entrywise(&f1, &f2)?;
    let resid = MeasurementVector::new(m, z.values() * eps2)?;
    Ok(WlsStep {
        resid,
        gamma,
        inner_iters: solve.iters,
        converged: solve.converged,
        rel_residual: solve.rel_residual,
    })
}

// ---------------------------------------------------------------------
// Compact iterate
// ---------------------------------------------------------------------

/// An iterate held as X = A*(resid) + U·Γ₁·Uᵀ + U·Γ₂ᵀ + Γ₂·Uᵀ; matrix-
/// vector products cost O(m + nr) and Frobenius geometry is computed
/// through the measurement operators, never through a dense X.
#[derive(Debug, Clone)]
pub struct CompactIterate {
    resid: MeasurementVector,
    u: DMatrix<f64>,
    gamma: TangentCoeffs,
}

impl CompactIterate {
    pub fn new(resid: MeasurementVector, u: DMatrix<f64>, gamma: TangentCoeffs) -> Result<Self> {
        if u.nrows() != resid.n() || gamma.n() != resid.n() || gamma.r() != u.ncols() {
            return Err(EdgError::DimensionMismatch(format!(
                "residual over {} points, basis {}x{}, coefficients ({}, {})",
                resid.n(),
                u.nrows(),
                u.ncols(),
                gamma.n(),
                gamma.r()
            )));
        }
        Ok(CompactIterate { resid, u, gamma })
    }

    /// Iterate with no tangent part (the initialisation X = A*(r)).
    pub fn from_residual(resid: MeasurementVector) -> Self {
        let n = resid.n();
        CompactIterate {
            resid,
            u: DMatrix::zeros(n, 0),
            gamma: TangentCoeffs::zeros(n, 0),
        }
    }

    pub fn n(&self) -> usize {
        self.resid.n()
    }

    pub fn rank_part(&self) -> usize {
        self.u.ncols()
    }

    pub fn resid(&self) -> &MeasurementVector {
        &self.resid
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn gamma(&self) -> &TangentCoeffs {
        &self.gamma
    }

    /// X·v in O(m + nr).
    pub fn matvec(&self, s: &SampleSet, v: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        if v.len() != n {
            return Err(EdgError::DimensionMismatch(format!(
                "vector has {} entries, iterate has {n} points",
                v.len()
            )));
        }
        check_y(s, &self.resid)?;
        let yv = self.resid.values();
        let mut out = DVector::zeros(n);
        for (k, &(i, j)) in s.idx0().iter().enumerate() {
            let c = yv[k];
            let d = v[i] - v[j];
            out[i] += c * d;
            out[j] -= c * d;
        }
        let vsum: f64 = v.sum();
        let mut qv = 0.0;
        for i in 0..n {
            qv += yv[s.m() + i] * v[i];
        }
        for i in 0..n {
            out[i] += 0.5 * (yv[s.m() + i] * vsum + qv);
        }
        let t1 = self.u.transpose() * v;
        out += &self.u * (self.gamma.gamma1() * &t1)
            + &self.u * (self.gamma.gamma2().transpose() * v)
            + self.gamma.gamma2() * t1;
        Ok(out)
    }

    /// Self-adjoint operator handle over ℝⁿ (clones the compact data).
    pub fn linop(&self, s: &SampleSet) -> LinOpHandle {
        let it = self.clone();
        let s = s.clone();
        let n = self.n();
        LinOpHandle::new_self_adjoint(n, move |v| {
            it.matvec(&s, v)
                .expect("dimensions fixed at construction")
        })
    }

    /// A(X) without densifying: AA*(resid) + A·P_T(γ).
    pub fn measure(&self, s: &SampleSet) -> Result<MeasurementVector> {
        let aa = apply_aa_star(s, &self.resid)?;
        let t = apply_a_pt(s, &self.u, &self.gamma)?;
        MeasurementVector::new(s.m(), aa.values() + t.values())
    }

    /// Dense form for tests and small-n export.
    pub fn to_dense(&self, s: &SampleSet) -> Result<SymMatrix> {
        let mut out = apply_a_star(s, &self.resid)?;
        if self.rank_part() > 0 {
            let tangent = embed_t(&self.u, &self.gamma)?;
            out.add_scaled(1.0, &tangent);
        }
        Ok(out)
    }

    /// ⟨X, X'⟩_F via the adjoint identities.
    pub fn frob_inner(&self, s: &SampleSet, other: &CompactIterate) -> Result<f64> {
        let aa = apply_aa_star(s, &other.resid)?;
        let mut acc = self.resid.dot(&aa);
        acc += apply_a_pt(s, &other.u, &other.gamma)?.dot(&self.resid);
        acc += apply_a_pt(s, &self.u, &self.gamma)?.dot(&other.resid);
        acc += self
            .gamma
            .dot(&transfer_coeffs(&other.u, &other.gamma, &self.u)?);
        Ok(acc)
    }

    pub fn frob_norm(&self, s: &SampleSet) -> Result<f64> {
        Ok(self.frob_inner(s, self)?.max(0.0).sqrt())
    }
}

/// ‖X_cur − X_prev‖_F / ‖X_cur‖_F, evaluated as a quadratic form of the
/// difference so that changes near machine precision stay measurable
/// (subtracting two big norms would lose everything below √u).
pub fn iterate_rel_change(
    s: &SampleSet,
    prev: &CompactIterate,
    cur: &CompactIterate,
) -> Result<f64> {
    let n = s.n();
    if prev.n() != n || cur.n() != n {
        return Err(EdgError::DimensionMismatch(
            "iterates and sample set disagree on the number of points".into(),
        ));
    }
    // Joint orthonormal basis holding both tangent parts exactly.
    let rp = prev.rank_part();
    let rc = cur.rank_part();
    let q = if rp + rc == 0 {
        DMatrix::zeros(n, 0)
    } else {
        let mut stacked = DMatrix::zeros(n, rp + rc);
        stacked.columns_mut(0, rp).copy_from(prev.u());
        stacked.columns_mut(rp, rc).copy_from(cur.u());
        stacked.qr().q()
    };
    let cp = transfer_coeffs(prev.u(), prev.gamma(), &q)?;
    let mut dc = transfer_coeffs(cur.u(), cur.gamma(), &q)?;
    dc.axpy(-1.0, &cp);
    dc.reproject(&q);
    let dr = MeasurementVector::new(s.m(), cur.resid().values() - prev.resid().values())?;

    let aadr = apply_aa_star(s, &dr)?;
    let cross = apply_a_pt(s, &q, &dc)?.dot(&dr);
    let num2 = dr.dot(&aadr) + 2.0 * cross + dc.dot(&dc);
    let den = cur.frob_norm(s)?;
    if den == 0.0 {
        return Ok(if num2 > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(num2.max(0.0).sqrt() / den)
}

// ---------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Relative Frobenius change between iterates fell below `outer_tol`.
    RelChange,
    /// Smoothing parameter reached the double-precision floor.
    EpsFloor,
    /// Iteration budget exhausted.
    MaxOuter,
}

/// One row of the per-iteration trace; `wall_ms` is cumulative from
/// solver start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub eps: f64,
    pub sigma_r1: f64,
    pub rel_change: f64,
    pub inner_iters: usize,
    pub procrustes_err: f64,
    pub wall_ms: f64,
    /// Largest eigen-residual of the spectral update, relative to σ₁.
    pub eig_residual: f64,
    /// ‖A(X) − y‖ / ‖y‖ for this iterate.
    pub feas_rel: f64,
    /// ‖X − X⁰‖₂ / ‖X⁰‖₂ against the reference cloud (NaN without one).
    pub spec_err: f64,
}

impl TraceRow {
    pub fn csv_header() -> &'static str {
        "k,eps,sigma_r1,rel_change,inner_iters,procrustes_err,wall_ms"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.3}",
            self.k,
            self.eps,
            self.sigma_r1,
            self.rel_change,
            self.inner_iters,
            self.procrustes_err,
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct IrlsResult {
    pub iterate: CompactIterate,
    /// Eigenvector block of the final iterate, |λ| descending.
    pub basis: DMatrix<f64>,
    /// Signed eigenvalues matching `basis`.
    pub lambda: DVector<f64>,
    /// Final smoothing parameter.
    pub eps: f64,
    pub trace: Vec<TraceRow>,
    pub outer_iters: usize,
    pub stop: StopReason,
    pub converged: bool,
    /// Fewer samples than the degrees of freedom of a rank-r̃ solution.
    pub underdetermined: bool,
}

impl IrlsResult {
    pub fn gram_dense(&self, s: &SampleSet) -> Result<SymMatrix> {
        self.iterate.to_dense(s)
    }

    /// Best rank-r point configuration from the final spectral data:
    /// rows √λᵢ·uᵢᵀ over the leading positive eigenvalues.
    pub fn recovered_points(&self, r: usize) -> Result<PointCloud> {
        points_from_pairs(&self.basis, &self.lambda, r, self.iterate.n())
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TraceRow::csv_header());
        out.push('\n');
        for row in &self.trace {
            out.push_str(&row.to_csv_row());
            out.push('\n');
        }
        out
    }
}

fn points_from_pairs(
    u: &DMatrix<f64>,
    lambda: &DVector<f64>,
    r: usize,
    n: usize,
) -> Result<PointCloud> {
    if r == 0 {
        return Err(EdgError::InvalidInput(
            "requested a zero-dimensional configuration".into(),
        ));
    }
    let mut coords = DMatrix::zeros(r, n);
    let mut row = 0;
    for idx in 0..u.ncols() {
        if row == r {
            break;
        }
        if lambda[idx] > 0.0 {
            let s = lambda[idx].sqrt();
            for p in 0..n {
                coords[(row, p)] = s * u[(p, idx)];
            }
            row += 1;
        }
    }
    PointCloud::new(coords)
}

/// Reconstruct a rank-r̃ Gram matrix consistent with the sampled squared
/// distances by smoothed log-det minimisation: alternate a weighted
/// least-squares step with a spectral re-weighting, tightening the
/// smoothing parameter from the (r̃+1)-th singular value.
///
/// `truth`, when given, only feeds the per-iteration Procrustes column
/// of the trace; it never influences the iteration.
/// ‖X − X⁰‖₂ / ‖X⁰‖₂ for a compact iterate against a reference cloud,
/// via seeded power iteration on the symmetric difference.
fn spectral_error(
    s: &SampleSet,
    it: &CompactIterate,
    p0: &PointCloud,
    x0_norm: f64,
    iters: usize,
) -> Result<f64> {
    let n = it.n();
    let p = p0.coords();
    let pt = p.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bec_0001);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let nv = v.norm();
    if nv == 0.0 {
        return Ok(0.0);
    }
    v /= nv;
    let mut est = 0.0;
    for _ in 0..iters {
        let mut w = it.matvec(s, &v)?;
        w -= &pt * (p * &v);
        est = w.norm();
        if est == 0.0 || !est.is_finite() {
            break;
        }
        v = w / est;
    }
    if x0_norm > 0.0 {
        Ok(est / x0_norm)
    } else if est == 0.0 {
        Ok(0.0)
    } else {
        Ok(f64::INFINITY)
    }
}

pub fn matrix_irls(
    s: &SampleSet,
    cfg: &IrlsConfig,
    truth: Option<&PointCloud>,
) -> Result<IrlsResult> {
    let n = s.n();
    let r_target = cfg.rank;
    if r_target == 0 || r_target >= n {
        return Err(EdgError::InvalidInput(format!(
            "target rank {r_target} must lie in 1..{n}"
        )));
    }
    if let Some(t) = truth {
        if t.n() != n {
            return Err(EdgError::DimensionMismatch(format!(
                "reference cloud has {} points, sample set has {n}",
                t.n()
            )));
        }
    }
    if cfg.max_outer == 0 {
        return Err(EdgError::InvalidInput("max_outer must be positive".into()));
    }
    let underdetermined = s.m() < dof(n, r_target);
    // Largest singular value of P gives ‖X⁰‖₂ = σ₁(P)².
    let truth_norm = truth.map(|t| {
        let s1 = t.coords().singular_values()[0];
        s1 * s1
    });
    let start = Instant::now();

    let y = s.measurement_y();
    let y_norm = y.norm();

    // First step: identity weight, so X = A*(AA*)⁻¹y.
    let first = solve_aa_star(s, &y, aa_cap(s))?;
    let mut iterate = CompactIterate::from_residual(first.z);
    let mut inner_last = first.iters;
    let mut prev_iterate: Option<CompactIterate> = None;
    let mut eps_opt: Option<f64> = None;

    let k_eig = (r_target + 6).min(n);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut stop = StopReason::MaxOuter;
    let mut final_u = DMatrix::zeros(n, 0);
    let mut final_lambda = DVector::zeros(0);

    for k in 1..=cfg.max_outer {
        let op = iterate.linop(s);
        let eig = truncated_eig_relaxed(&op, k_eig, cfg.eig_tol, EIG_SEED_BASE + k as u64)?;
        if eig.lambda.iter().any(|v| !v.is_finite()) {
            return Err(EdgError::NonFiniteIterate(format!(
                "spectral update at outer iteration {k}"
            )));
        }
        let sigmas: Vec<f64> = eig.lambda.iter().map(|v| v.abs()).collect();
        let sigma1 = sigmas.first().copied().unwrap_or(0.0);
        let sigma_r1 = sigmas.get(r_target).copied().unwrap_or(0.0);
        let new_eps = match eps_opt {
            None => sigma_r1,
            Some(e) => e.min(sigma_r1),
        };
        let eig_res = if sigma1 > 0.0 {
            eig.residuals.max() / sigma1
        } else {
            0.0
        };

        let rel_change = match &prev_iterate {
            Some(p) => iterate_rel_change(s, p, &iterate)?,
            None => f64::NAN,
        };
        let procrustes_err = match truth {
            Some(t) => points_from_pairs(&eig.u, &eig.lambda, t.r(), n)
                .and_then(|rec| procrustes_distance(&rec, t))
                .unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        let spec_err = match (truth, truth_norm) {
            (Some(t), Some(x0n)) => {
                spectral_error(s, &iterate, t, x0n, 150).unwrap_or(f64::NAN)
            }
            _ => f64::NAN,
        };
        let feas_rel = if y_norm > 0.0 {
            let meas = iterate.measure(s)?;
            (meas.values() - y.values()).norm() / y_norm
        } else {
            0.0
        };
        trace.push(TraceRow {
            k,
            eps: new_eps,
            sigma_r1,
            rel_change,
            inner_iters: inner_last,
            procrustes_err,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            eig_residual: eig_res,
            feas_rel,
            spec_err,
        });
        final_u = eig.u;
        final_lambda = eig.lambda;
        eps_opt = Some(new_eps);

        if rel_change < cfg.outer_tol {
            stop = StopReason::RelChange;
            break;
        }
        if new_eps <= sigma1 * EPS_FLOOR_REL {
            stop = StopReason::EpsFloor;
            break;
        }
        if k == cfg.max_outer {
            break;
        }

        // Next weighted step at the refreshed spectral state.
        let cap = (r_target + 5).min(k_eig);
        let r_k = sigmas
            .iter()
            .take(cap)
            .filter(|&&sv| sv > new_eps)
            .count();
        let state = SpectralState::new(
            final_u.columns(0, r_k).into_owned(),
            sigmas[..r_k].to_vec(),
            final_lambda.iter().take(r_k).map(|v| v.signum()).collect(),
            Some(new_eps),
        )?;
        let step = match cfg.mode {
            WlsMode::Tangent => {
                let warm = transfer_coeffs(iterate.u(), iterate.gamma(), state.u())?;
                wls_step_tangent(s, &state, &y, Some(&warm), cfg.tol_inner, cfg.max_inner)?
            }
            WlsMode::Range => wls_step_range(s, &state, &y, cfg.tol_inner, cfg.max_inner)?,
        };
        if !step.gamma.all_finite() || step.resid.values().iter().any(|v| !v.is_finite()) {
            return Err(EdgError::NonFiniteIterate(format!(
                "weighted step at outer iteration {k}"
            )));
        }
        let next = CompactIterate::new(step.resid, state.u().clone(), step.gamma)?;
        prev_iterate = Some(std::mem::replace(&mut iterate, next));
        inner_last = step.inner_iters;
    }

    let converged = !matches!(stop, StopReason::MaxOuter);
    Ok(IrlsResult {
        iterate,
        basis: final_u,
        lambda: final_lambda,
        eps: eps_opt.unwrap_or(f64::INFINITY),
        outer_iters: trace.len(),
        trace,
        stop,
        converged,
        underdetermined,
    })
}
