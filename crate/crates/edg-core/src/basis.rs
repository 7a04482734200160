//! The measurement basis {w_α}, its dual {v_α}, and the matrix-free
//! measurement machinery built from them: the operator A stacking sampled
//! squared distances on top of row sums, its adjoint, the Gram operator
//! AA* (whose diagonal block has a closed-form inverse), the sampling
//! operator Q_Ω, and the coherence functional.
//!
//! The basis is deliberately non-orthogonal; every downstream identity
//! (dual expansions, the AA* block structure, the L/m scaling of Q_Ω)
//! exists to compensate for that.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{EdgError, Result};
use crate::linalg::{cg, SymMatrix};

/// Relative CG tolerance for AA* solves. These solves nest inside the
/// reduced weighted system, so they run two orders tighter than the outer
/// 1e-10 tolerance.
pub const AA_STAR_REL_TOL: f64 = 1e-12;

/// Brute-force guard for the coherence enumeration (O(n⁴r) work).
pub const COHERENCE_MAX_N: usize = 64;

/// A measurement index: either an off-diagonal pair (i, j) with
/// 1 ≤ i < j ≤ n, or a diagonal index (i, i). Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexPair {
    Off { i: usize, j: usize },
    Diag { i: usize },
}

impl IndexPair {
    pub fn off(i: usize, j: usize) -> Result<Self> {
        if i == 0 || j == 0 || i >= j {
            return Err(EdgError::IndexOutOfRange(format!(
                "off-diagonal pair needs 1 <= i < j, got ({i},{j})"
            )));
        }
        Ok(IndexPair::Off { i, j })
    }

    pub fn diag(i: usize) -> Result<Self> {
        if i == 0 {
            return Err(EdgError::IndexOutOfRange("diagonal index must be >= 1".into()));
        }
        Ok(IndexPair::Diag { i })
    }

    pub fn validate(self, n: usize) -> Result<()> {
        let hi = match self {
            IndexPair::Off { i, j } => {
                if i == 0 || i >= j {
                    return Err(EdgError::IndexOutOfRange(format!(
                        "off-diagonal pair needs 1 <= i < j, got ({i},{j})"
                    )));
                }
                j
            }
            IndexPair::Diag { i } => {
                if i == 0 {
                    return Err(EdgError::IndexOutOfRange("diagonal index must be >= 1".into()));
                }
                i
            }
        };
        if hi > n {
            return Err(EdgError::IndexOutOfRange(format!(
                "index {hi} exceeds point count {n}"
            )));
        }
        Ok(())
    }
}

/// Number of off-diagonal pairs L = n(n−1)/2.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Basis element w_α. Off-diagonal α=(i,j): (e_i−e_j)(e_i−e_j)ᵀ, so that
/// ⟨w_α, X⟩ = X_ii + X_jj − 2X_ij is the squared distance functional.
/// Diagonal α=(i,i): ½(e_i1ᵀ + 1e_iᵀ), so that ⟨w_α, X⟩ = (X·1)_i.
pub fn primal_basis_element(alpha: IndexPair, n: usize) -> Result<SymMatrix> {
    alpha.validate(n)?;
    let mut w = SymMatrix::zeros(n);
    match alpha {
        IndexPair::Off { i, j } => {
            let (i, j) = (i - 1, j - 1);
            w.set_sym(i, i, 1.0);
            w.set_sym(j, j, 1.0);
            w.set_sym(i, j, -1.0);
        }
        IndexPair::Diag { i } => {
            let i = i - 1;
            for a in 0..n {
                w.set_sym(i, a, 0.5);
            }
            w.set_sym(i, i, 1.0);
        }
    }
    Ok(w)
}

/// Dual basis element v_α, bi-orthogonal to the w's on S_n: with
/// a_i = e_i − (1/n)·1, off-diagonal v = −½(a_ia_jᵀ + a_ja_iᵀ) and
/// diagonal v = e_ie_iᵀ − a_ia_iᵀ.
pub fn dual_basis_element(alpha: IndexPair, n: usize) -> Result<SymMatrix> {
    alpha.validate(n)?;
    let inv = 1.0 / n as f64;
    let a = |k: usize, x: usize| -> f64 { (if x == k { 1.0 } else { 0.0 }) - inv };
    let v = match alpha {
        IndexPair::Off { i, j } => {
            let (i, j) = (i - 1, j - 1);
            SymMatrix::from_fn(n, |x, y| -0.5 * (a(i, x) * a(j, y) + a(j, x) * a(i, y)))
        }
        IndexPair::Diag { i } => {
            let i = i - 1;
            SymMatrix::from_fn(n, |x, y| {
                let e = if x == i && y == i { 1.0 } else { 0.0 };
                e - a(i, x) * a(i, y)
            })
        }
    };
    Ok(v)
}

/// The sampled squared distances: which pairs were observed and what was
/// measured there. Derived duplicate-group bookkeeping makes the AA* apply
/// O(m + n) even for multisets.
#[derive(Debug, Clone)]
pub struct SampleSet {
    n: usize,
    pairs: Vec<IndexPair>,
    d2: Vec<f64>,
    with_replacement: bool,
    /// 0-based endpoints per sample.
    idx0: Vec<(usize, usize)>,
    /// Sample → duplicate-group id (groups are singletons without
    /// replacement).
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl SampleSet {
    pub fn new(
        n: usize,
        pairs: Vec<IndexPair>,
        d2: Vec<f64>,
        with_replacement: bool,
    ) -> Result<Self> {
        if n < 2 {
            return Err(EdgError::InvalidInput(format!("need n >= 2 points, got {n}")));
        }
        if pairs.len() != d2.len() {
            return Err(EdgError::DimensionMismatch(format!(
                "{} pairs but {} measurements",
                pairs.len(),
                d2.len()
            )));
        }
        let l = pair_count(n);
        if !with_replacement && pairs.len() > l {
            return Err(EdgError::TooMany(format!(
                "{} samples but only {l} distinct pairs exist",
                pairs.len()
            )));
        }
        let mut idx0 = Vec::with_capacity(pairs.len());
        for &p in &pairs {
            p.validate(n)?;
            match p {
                IndexPair::Off { i, j } => idx0.push((i - 1, j - 1)),
                IndexPair::Diag { .. } => {
                    return Err(EdgError::InvalidInput(
                        "sample sets hold off-diagonal pairs only".into(),
                    ))
                }
            }
        }
        for (k, &v) in d2.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(EdgError::InvalidInput(format!(
                    "squared distance {k} is {v}, must be finite and nonnegative"
                )));
            }
        }
        let mut group_of = vec![0usize; pairs.len()];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, &(i, j)) in idx0.iter().enumerate() {
            match seen.entry((i, j)) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    if !with_replacement {
                        return Err(EdgError::TooMany(format!(
                            "pair ({},{}) sampled twice without replacement",
                            i + 1,
                            j + 1
                        )));
                    }
                    group_of[k] = *e.get();
                    groups[*e.get()].push(k);
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(groups.len());
                    group_of[k] = groups.len();
                    groups.push(vec![k]);
                }
            }
        }
        Ok(SampleSet {
            n,
            pairs,
            d2,
            with_replacement,
            idx0,
            group_of,
            groups,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sample count m.
    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    /// Total off-diagonal pair count L = n(n−1)/2.
    pub fn l(&self) -> usize {
        pair_count(self.n)
    }

    pub fn pairs(&self) -> &[IndexPair] {
        &self.pairs
    }

    pub fn d2(&self) -> &[f64] {
        &self.d2
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    pub(crate) fn idx0(&self) -> &[(usize, usize)] {
        &self.idx0
    }

    /// The right-hand side y = [d²; 0ⁿ]: observed distances on top,
    /// zero row sums (centering constraints) below.
    pub fn measurement_y(&self) -> MeasurementVector {
        let m = self.m();
        let mut values = DVector::zeros(m + self.n);
        for (k, &v) in self.d2.iter().enumerate() {
            values[k] = v;
        }
        MeasurementVector { m, values }
    }

    /// Text round-trip format: header `edg-samples v1 n=<n> m=<m>`, then m
    /// lines `i j d2` with 1-based indices and 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "edg-samples v1 n={} m={}", self.n, self.m());
        for (k, &(i, j)) in self.idx0.iter().enumerate() {
            let _ = writeln!(out, "{} {} {:.16e}", i + 1, j + 1, self.d2[k]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| EdgError::ParseError {
            line: 1,
            msg: "empty sample file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "edg-samples" || fields[1] != "v1" {
            return Err(EdgError::ParseError {
                line: 1,
                msg: format!("expected `edg-samples v1 n=<n> m=<m>`, got {header:?}"),
            });
        }
        let parse_kv = |field: &str, key: &str| -> Result<usize> {
            field
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| EdgError::ParseError {
                    line: 1,
                    msg: format!("bad header field {field:?}"),
                })
        };
        let n = parse_kv(fields[2], "n=")?;
        let m = parse_kv(fields[3], "m=")?;
        let mut pairs = Vec::with_capacity(m);
        let mut d2 = Vec::with_capacity(m);
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(EdgError::ParseError {
                    line: lineno,
                    msg: format!("expected `i j d2`, got {line:?}"),
                });
            }
            let i: usize = f[0].parse().map_err(|e| EdgError::ParseError {
                line: lineno,
                msg: format!("bad index {:?}: {e}", f[0]),
            })?;
            let j: usize = f[1].parse().map_err(|e| EdgError::ParseError {
                line: lineno,
                msg: format!("bad index {:?}: {e}", f[1]),
            })?;
            let v: f64 = f[2].parse().map_err(|e| EdgError::ParseError {
                line: lineno,
                msg: format!("bad distance {:?}: {e}", f[2]),
            })?;
            pairs.push(IndexPair::off(i.min(j), i.max(j)).map_err(|e| {
                EdgError::ParseError {
                    line: lineno,
                    msg: e.to_string(),
                }
            })?);
            d2.push(v);
        }
        if pairs.len() != m {
            return Err(EdgError::ParseError {
                line: 1,
                msg: format!("header promises m={m} but {} records found", pairs.len()),
            });
        }
        // The v1 format carries no replacement flag; infer it from content.
        let mut seen = std::collections::HashSet::new();
        let dup = pairs.iter().any(|p| !seen.insert(*p));
        SampleSet::new(n, pairs, d2, dup)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// A vector in measurement space ℝ^{m+n}: m sampled-pair slots followed by
/// n row-sum slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    m: usize,
    values: DVector<f64>,
}

impl MeasurementVector {
    pub fn new(m: usize, values: DVector<f64>) -> Result<Self> {
        if values.len() < m {
            return Err(EdgError::DimensionMismatch(format!(
                "measurement vector of length {} cannot hold {m} pair slots",
                values.len()
            )));
        }
        Ok(MeasurementVector { m, values })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        MeasurementVector {
            m,
            values: DVector::zeros(m + n),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.values.len() - self.m
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// The m sampled-pair entries.
    pub fn omega_part(&self) -> DVector<f64> {
        self.values.rows(0, self.m).into_owned()
    }

    /// The n row-sum entries.
    pub fn diag_part(&self) -> DVector<f64> {
        self.values.rows(self.m, self.n()).into_owned()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.dot(&other.values)
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

fn check_dims(s: &SampleSet, x: &SymMatrix) -> Result<()> {
    if x.n() != s.n() {
        return Err(EdgError::DimensionMismatch(format!(
            "matrix is {}x{} but sample set has n={}",
            x.n(),
            x.n(),
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

/// A(X): sampled squared-distance functionals followed by row sums.
/// O(m + n²), the n² being the row sums of a dense X.
pub fn apply_a(s: &SampleSet, x: &SymMatrix) -> Result<MeasurementVector> {
    check_dims(s, x)?;
    let n = s.n();
    let m = s.m();
    let mut values = DVector::zeros(m + n);
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        values[k] = x.get(i, i) + x.get(j, j) - 2.0 * x.get(i, j);
    }
    for i in 0..n {
        values[m + i] = (0..n).map(|j| x.get(i, j)).sum();
    }
    Ok(MeasurementVector { m, values })
}

/// A*(y) = Σ_ℓ y_ℓ·w_{α_ℓ} + Σ_i y_{m+i}·w_{(i,i)} as a dense symmetric
/// matrix: a sparse triplet pass for the pair part plus the rank-two
/// structured diagonal part ½(q·1ᵀ + 1·qᵀ).
pub fn apply_a_star(s: &SampleSet, y: &MeasurementVector) -> Result<SymMatrix> {
    check_y(s, y)?;
    let n = s.n();
    let m = s.m();
    let yv = y.values();
    let mut out = SymMatrix::zeros(n);
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        let c = yv[k];
        out.add_sym(i, i, c);
        out.add_sym(j, j, c);
        out.add_sym(i, j, -c);
    }
    for a in 0..n {
        for b in a..n {
            let add = 0.5 * (yv[m + a] + yv[m + b]);
            out.add_sym(a, b, add);
        }
    }
    Ok(out)
}

/// The Gram operator AA* applied in O(m + n) flops.
///
/// The cross block between pair and row-sum slots vanishes identically
/// (⟨w_{(i,j)}, w_{(k,k)}⟩ = 0), so the operator is block diagonal:
/// the pair block is 4·(same-pair sum) + (shared-endpoint sums), and the
/// row-sum block is (n/2)·I + ½·11ᵀ.
pub fn apply_aa_star(s: &SampleSet, y: &MeasurementVector) -> Result<MeasurementVector> {
    check_y(s, y)?;
    let n = s.n();
    let m = s.m();
    let yv = y.values();
    let mut values = DVector::zeros(m + n);

    let mut endpoint = vec![0.0f64; n];
    let mut group_sum = vec![0.0f64; s.groups.len()];
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        endpoint[i] += yv[k];
        endpoint[j] += yv[k];
        group_sum[s.group_of[k]] += yv[k];
    }
    for (k, &(i, j)) in s.idx0().iter().enumerate() {
        values[k] = endpoint[i] + endpoint[j] + 2.0 * group_sum[s.group_of[k]];
    }

    let q_sum: f64 = (0..n).map(|i| yv[m + i]).sum();
    let half_n = n as f64 / 2.0;
    for i in 0..n {
        values[m + i] = half_n * yv[m + i] + 0.5 * q_sum;
    }
    Ok(MeasurementVector { m, values })
}

/// Outcome of an AA* solve: the solution plus the CG diagnostics of the
/// pair block (the row-sum block inverts in closed form).
#[derive(Debug, Clone)]
pub struct AaSolve {
    pub z: MeasurementVector,
    pub iters: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

/// Solve AA*·z = b to relative residual 1e-12.
///
/// Exploits the block structure: the row-sum block ((n/2)·I + ½·11ᵀ) has
/// the closed-form inverse (2/n)·I − (1/n²)·11ᵀ; only the pair block goes
/// through CG.
pub fn solve_aa_star(s: &SampleSet, b: &MeasurementVector, max_iter: usize) -> Result<AaSolve> {
    check_y(s, b)?;
    let n = s.n();
    let m = s.m();
    let nf = n as f64;

    let b_omega = b.omega_part();
    let apply_gm = |v: &DVector<f64>| -> DVector<f64> {
        let mut endpoint = vec![0.0f64; n];
        let mut group_sum = vec![0.0f64; s.groups.len()];
        for (k, &(i, j)) in s.idx0().iter().enumerate() {
            endpoint[i] += v[k];
            endpoint[j] += v[k];
            group_sum[s.group_of[k]] += v[k];
        }
        DVector::from_fn(m, |k, _| {
            let (i, j) = s.idx0()[k];
            endpoint[i] + endpoint[j] + 2.0 * group_sum[s.group_of[k]]
        })
    };
    let out = cg(apply_gm, &b_omega, None, AA_STAR_REL_TOL, max_iter)?;

    let b_diag = b.diag_part();
    let bd_sum = b_diag.sum();
    let mut values = DVector::zeros(m + n);
    for k in 0..m {
        values[k] = out.x[k];
    }
    for i in 0..n {
        values[m + i] = (2.0 / nf) * b_diag[i] - bd_sum / (nf * nf);
    }
    Ok(AaSolve {
        z: MeasurementVector { m, values },
        iters: out.iters,
        converged: out.converged,
        rel_residual: out.rel_residual,
    })
}

/// Dual-pairing coefficients of X against every sampled pair plus all
/// diagonal duals: ⟨v_{(i,j)}, X⟩ = −(X_ij − μ_i − μ_j + μ̄) and
/// ⟨v_{(i,i)}, X⟩ = 2μ_i − μ̄, with μ = X·1/n and μ̄ = 1ᵀX1/n².
fn dual_coefficients(s: &SampleSet, x: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = s.n();
    let nf = n as f64;
    let mu: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| x.get(i, j)).sum::<f64>() / nf)
        .collect();
    let mu_bar = mu.iter().sum::<f64>() / nf;
    let pair_c: Vec<f64> = s
        .idx0()
        .iter()
        .map(|&(i, j)| -(x.get(i, j) - mu[i] - mu[j] + mu_bar))
        .collect();
    let diag_c: Vec<f64> = (0..n).map(|i| 2.0 * mu[i] - mu_bar).collect();
    (pair_c, diag_c)
}

/// The sampling operator Q_Ω(X) = (L/m)·Σ_{α∈Ω} ⟨X, w_α⟩·v_α
/// + Σ_i ⟨X, w_{(i,i)}⟩·v_{(i,i)}, with the L/m rescaling on the pair part
/// only. Full sampling (Ω = all pairs, each once) makes this the identity
/// on symmetric matrices.
///
/// Assembled in O(n² + m) through J·K·J structure: every dual element is a
/// two-sided projection J(·)J of a sparse seed, J = I − 11ᵀ/n.
pub fn apply_q_omega(s: &SampleSet, x: &SymMatrix) -> Result<SymMatrix> {
    check_dims(s, x)?;
    let n = s.n();
    let nf = n as f64;
    let scale = s.l() as f64 / s.m() as f64;

    // Pair coefficients c_α = ⟨X, w_α⟩ and diagonal coefficients
    // c_i = (X·1)_i.
    let row_sum: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| x.get(i, j)).sum::<f64>())
        .collect();

    // Seed M = (L/m)·Σ c_α·(−½)(e_ie_jᵀ + e_je_iᵀ) − diag(c); then
    // Q_Ω(X) = J·M·J + diag(c), since v_(i,j) = J(−½(e_ie_jᵀ+e_je_iᵀ))J and
    // v_(i,i) = e_ie_iᵀ − J(e_ie_iᵀ)J.
    let mut seed = SymMatrix::zeros(n);
    for &(i, j) in s.idx0() {
        let c = x.get(i, i) + x.get(j, j) - 2.0 * x.get(i, j);
        seed.add_sym(i, j, -0.5 * scale * c);
    }
    for i in 0..n {
        seed.add_sym(i, i, -row_sum[i]);
    }

    // J·M·J expansion: M − (M·1)1ᵀ/n − 1(1ᵀM)/n + (1ᵀM1)·11ᵀ/n².
    let ms: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| seed.get(i, j)).sum::<f64>())
        .collect();
    let total: f64 = ms.iter().sum();
    let out = SymMatrix::from_fn(n, |i, j| {
        let jmj = seed.get(i, j) - ms[i] / nf - ms[j] / nf + total / (nf * nf);
        jmj + if i == j { row_sum[i] } else { 0.0 }
    });
    Ok(out)
}

/// Adjoint of the sampling operator:
/// Q_Ω*(X) = (L/m)·Σ_{α∈Ω} ⟨X, v_α⟩·w_α + Σ_i ⟨X, v_{(i,i)}⟩·w_{(i,i)}.
pub fn apply_q_omega_star(s: &SampleSet, x: &SymMatrix) -> Result<SymMatrix> {
    check_dims(s, x)?;
    let n = s.n();
    let m = s.m();
    let scale = s.l() as f64 / m as f64;
    let (pair_c, diag_c) = dual_coefficients(s, x);
    let mut y = DVector::zeros(m + n);
    for (k, c) in pair_c.into_iter().enumerate() {
        y[k] = scale * c;
    }
    for (i, c) in diag_c.into_iter().enumerate() {
        y[m + i] = c;
    }
    apply_a_star(s, &MeasurementVector { m, values: y })
}

/// Coherence ν of a rank-r column span with respect to the pair basis:
/// the smallest ν with
///   max_α Σ_β ⟨P_T·w_α, w_β⟩² ≤ 2νr/n  and
///   max_α Σ_β ⟨P_T·v_α, w_β⟩² ≤ 4νr/n,
/// both maxima over off-diagonal pairs only. Brute force, O(n⁴·r),
/// guarded at n ≤ 64.
pub fn coherence(u0: &DMatrix<f64>) -> Result<f64> {
    let n = u0.nrows();
    let r = u0.ncols();
    if n > COHERENCE_MAX_N {
        return Err(EdgError::TooLarge(format!(
            "coherence enumeration is O(n^4), refusing n={n} > {COHERENCE_MAX_N}"
        )));
    }
    if r == 0 || r > n {
        return Err(EdgError::DimensionMismatch(format!("rank {r} with n={n}")));
    }
    let gram = u0.transpose() * u0;
    let mut worst: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    if worst > 1e-8 {
        return Err(EdgError::InvalidInput(format!(
            "eigenbasis not orthonormal (max deviation {worst:.3e})"
        )));
    }

    // P_T(Z) = UC + CᵀUᵀ − U(CU)Uᵀ with C = UᵀZ.
    let project_t = |z: &SymMatrix| -> DMatrix<f64> {
        let c = u0.transpose() * z.as_matrix();
        let cu = &c * u0;
        u0 * &c + c.transpose() * u0.transpose() - u0 * cu * u0.transpose()
    };
    // Σ_β∈𝕀 ⟨M, w_β⟩² for dense symmetric M.
    let pair_energy = |mz: &DMatrix<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = mz[(i, i)] + mz[(j, j)] - 2.0 * mz[(i, j)];
                acc += v * v;
            }
        }
        acc
    };

    let mut max_w: f64 = 0.0;
    let mut max_v: f64 = 0.0;
    for i in 1..=n {
        for j in (i + 1)..=n {
            let alpha = IndexPair::Off { i, j };
            let w = primal_basis_element(alpha, n)?;
            max_w = max_w.max(pair_energy(&project_t(&w)));
            let v = dual_basis_element(alpha, n)?;
            max_v = max_v.max(pair_energy(&project_t(&v)));
        }
    }
    let nf = n as f64;
    let rf = r as f64;
    Ok((max_w * nf / (2.0 * rf)).max(max_v * nf / (4.0 * rf)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SymMatrix::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    }

    /// All off-diagonal pairs in lexicographic order.
    fn all_pairs(n: usize) -> Vec<IndexPair> {
        let mut out = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                out.push(IndexPair::Off { i, j });
            }
        }
        out
    }

    fn random_sample_set(n: usize, m: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = all_pairs(n);
        // Partial shuffle.
        for k in 0..m {
            let pick = rng.random_range(k..pool.len());
            pool.swap(k, pick);
        }
        pool.truncate(m);
        let d2: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..5.0)).collect();
        SampleSet::new(n, pool, d2, false).unwrap()
    }

    fn random_y(s: &SampleSet, seed: u64) -> MeasurementVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DVector::from_fn(s.m() + s.n(), |_, _| StandardNormal.sample(&mut rng));
        MeasurementVector::new(s.m(), v).unwrap()
    }

    #[test]
    fn primal_off_diagonal_example() {
        let w = primal_basis_element(IndexPair::off(1, 2).unwrap(), 3).unwrap();
        let expect = [[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.get(i, j), expect[i][j]);
            }
        }
    }

    #[test]
    fn primal_diagonal_example() {
        let w = primal_basis_element(IndexPair::diag(1).unwrap(), 2).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(0, 1), 0.5);
        assert_eq!(w.get(1, 0), 0.5);
        assert_eq!(w.get(1, 1), 0.0);
    }

    #[test]
    fn primal_pairing_is_distance_functional() {
        let x = random_sym(8, 3);
        let w = primal_basis_element(IndexPair::off(2, 5).unwrap(), 8).unwrap();
        let want = x.get(1, 1) + x.get(4, 4) - 2.0 * x.get(1, 4);
        assert_abs_diff_eq!(w.frob_inner(&x), want, epsilon = 1e-12);
        // Diagonal elements pair to row sums.
        let wd = primal_basis_element(IndexPair::diag(3).unwrap(), 8).unwrap();
        let want_row: f64 = (0..8).map(|j| x.get(2, j)).sum();
        assert_abs_diff_eq!(wd.frob_inner(&x), want_row, epsilon = 1e-12);
    }

    #[test]
    fn dual_two_point_example() {
        let v = dual_basis_element(IndexPair::off(1, 2).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(v.get(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(v.get(0, 1), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(v.get(1, 1), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn bi_orthogonality_exhaustive_n6() {
        let n = 6;
        let mut basis: Vec<IndexPair> = all_pairs(n);
        for i in 1..=n {
            basis.push(IndexPair::Diag { i });
        }
        for &a in &basis {
            let v = dual_basis_element(a, n).unwrap();
            for &b in &basis {
                let w = primal_basis_element(b, n).unwrap();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (w.frob_inner(&v) - want).abs() <= 1e-12,
                    "pairing failure at {a:?},{b:?}"
                );
            }
        }
    }

    #[test]
    fn index_pair_validation() {
        assert!(IndexPair::off(2, 2).is_err());
        assert!(IndexPair::off(0, 3).is_err());
        assert!(IndexPair::off(3, 2).is_err());
        assert!(IndexPair::diag(0).is_err());
        assert!(IndexPair::off(1, 9).unwrap().validate(8).is_err());
        assert!(primal_basis_element(IndexPair::Off { i: 1, j: 9 }, 8).is_err());
    }

    #[test]
    fn apply_a_quadrilateral() {
        // Centered four-point configuration with known Gram entries.
        let p = crate::geometry::PointCloud::new(DMatrix::from_row_slice(
            2,
            4,
            &[-1.0, 1.0, 1.0, -1.0, 1.0, 2.0, -2.0, -1.0],
        ))
        .unwrap();
        let x = p.gram();
        let s = SampleSet::new(
            4,
            vec![IndexPair::off(1, 2).unwrap()],
            vec![5.0],
            false,
        )
        .unwrap();
        let y = apply_a(&s, &x).unwrap();
        assert_abs_diff_eq!(y.values()[0], 5.0, epsilon = 1e-12);
        // Centered cloud: all row sums vanish.
        for i in 0..4 {
            assert_abs_diff_eq!(y.values()[1 + i], 0.0, epsilon = 1e-12);
        }
        let zero = apply_a(&s, &SymMatrix::zeros(4)).unwrap();
        assert_eq!(zero.values().norm(), 0.0);
    }

    #[test]
    fn apply_a_star_basis_images() {
        let s = random_sample_set(7, 9, 11);
        let m = s.m();
        for k in [0usize, 4, 8] {
            let mut y = MeasurementVector::zeros(m, 7);
            y.values_mut()[k] = 1.0;
            let got = apply_a_star(&s, &y).unwrap();
            let IndexPair::Off { i, j } = s.pairs()[k] else {
                panic!()
            };
            let want = primal_basis_element(IndexPair::Off { i, j }, 7).unwrap();
            assert!((got.as_matrix() - want.as_matrix()).norm() <= 1e-14);
        }
        for i in [0usize, 3, 6] {
            let mut y = MeasurementVector::zeros(m, 7);
            y.values_mut()[m + i] = 1.0;
            let got = apply_a_star(&s, &y).unwrap();
            let want = primal_basis_element(IndexPair::Diag { i: i + 1 }, 7).unwrap();
            assert!((got.as_matrix() - want.as_matrix()).norm() <= 1e-14);
        }
    }

    #[test]
    fn adjointness_of_a() {
        let s = random_sample_set(20, 60, 21);
        for probe in 0..50 {
            let x = random_sym(20, 100 + probe);
            let y = random_y(&s, 200 + probe);
            let lhs = apply_a(&s, &x).unwrap().dot(&y);
            let rhs = x.frob_inner(&apply_a_star(&s, &y).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!((lhs - rhs).abs() / scale <= 1e-10, "probe {probe}");
        }
    }

    #[test]
    fn aa_star_matches_composition() {
        let s = random_sample_set(15, 40, 31);
        for probe in 0..10 {
            let y = random_y(&s, 300 + probe);
            let fast = apply_aa_star(&s, &y).unwrap();
            let slow = apply_a(&s, &apply_a_star(&s, &y).unwrap()).unwrap();
            assert!((fast.values() - slow.values()).amax() <= 1e-12);
        }
        let zero = apply_aa_star(&s, &MeasurementVector::zeros(s.m(), s.n())).unwrap();
        assert_eq!(zero.values().norm(), 0.0);
    }

    #[test]
    fn aa_star_handles_duplicate_pairs() {
        // A multiset: pair (1,3) sampled three times, (2,4) twice.
        let pairs = vec![
            IndexPair::off(1, 3).unwrap(),
            IndexPair::off(2, 4).unwrap(),
            IndexPair::off(1, 3).unwrap(),
            IndexPair::off(1, 2).unwrap(),
            IndexPair::off(1, 3).unwrap(),
            IndexPair::off(2, 4).unwrap(),
        ];
        let s = SampleSet::new(5, pairs, vec![1.0; 6], true).unwrap();
        for probe in 0..5 {
            let y = random_y(&s, 400 + probe);
            let fast = apply_aa_star(&s, &y).unwrap();
            let slow = apply_a(&s, &apply_a_star(&s, &y).unwrap()).unwrap();
            assert!((fast.values() - slow.values()).amax() <= 1e-12);
        }
    }

    #[test]
    fn aa_star_dense_assembly_is_symmetric() {
        // Full sampling at n=8: assemble the (m+n)² dense matrix from
        // basis images and check self-adjointness.
        let n = 8;
        let pairs = all_pairs(n);
        let m = pairs.len();
        let s = SampleSet::new(n, pairs, vec![0.0; m], false).unwrap();
        let dim = m + n;
        let mut dense = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let mut y = MeasurementVector::zeros(m, n);
            y.values_mut()[c] = 1.0;
            let col = apply_aa_star(&s, &y).unwrap();
            dense.set_column(c, col.values());
        }
        assert!((&dense - dense.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn solve_aa_star_inverts() {
        let s = random_sample_set(10, 18, 41);
        let b = random_y(&s, 42);
        let out = solve_aa_star(&s, &b, 2000).unwrap();
        assert!(out.converged);
        let back = apply_aa_star(&s, &out.z).unwrap();
        assert!((back.values() - b.values()).norm() / b.values().norm() <= 1e-9);
    }

    #[test]
    fn solve_aa_star_diag_block_closed_form() {
        // Zero pair part: the answer must satisfy the row-sum block alone.
        let s = random_sample_set(9, 5, 51);
        let mut b = MeasurementVector::zeros(s.m(), 9);
        for i in 0..9 {
            b.values_mut()[s.m() + i] = (i as f64) - 3.0;
        }
        let out = solve_aa_star(&s, &b, 10).unwrap();
        assert_eq!(out.iters, 0);
        let back = apply_aa_star(&s, &out.z).unwrap();
        assert!((back.values() - b.values()).amax() <= 1e-12);
    }

    #[test]
    fn q_omega_full_sampling_is_identity() {
        let n = 7;
        let pairs = all_pairs(n);
        let m = pairs.len();
        let s = SampleSet::new(n, pairs, vec![0.0; m], false).unwrap();
        for probe in 0..5 {
            let x = random_sym(n, 500 + probe);
            let qx = apply_q_omega(&s, &x).unwrap();
            assert!(
                (qx.as_matrix() - x.as_matrix()).amax() <= 1e-12,
                "probe {probe}"
            );
        }
    }

    #[test]
    fn q_omega_matches_definitional_assembly() {
        let n = 8;
        let s = random_sample_set(n, 11, 61);
        let scale = s.l() as f64 / s.m() as f64;
        for probe in 0..5 {
            let x = random_sym(n, 600 + probe);
            let mut want = SymMatrix::zeros(n);
            for &p in s.pairs() {
                let w = primal_basis_element(p, n).unwrap();
                let v = dual_basis_element(p, n).unwrap();
                want.add_scaled(scale * w.frob_inner(&x), &v);
            }
            for i in 1..=n {
                let w = primal_basis_element(IndexPair::Diag { i }, n).unwrap();
                let v = dual_basis_element(IndexPair::Diag { i }, n).unwrap();
                want.add_scaled(w.frob_inner(&x), &v);
            }
            let got = apply_q_omega(&s, &x).unwrap();
            assert!(
                (got.as_matrix() - want.as_matrix()).amax() <= 1e-12,
                "probe {probe}"
            );
        }
    }

    #[test]
    fn q_omega_star_is_adjoint() {
        let s = random_sample_set(9, 14, 71);
        for probe in 0..10 {
            let x = random_sym(9, 700 + probe);
            let y = random_sym(9, 800 + probe);
            let lhs = apply_q_omega(&s, &x).unwrap().frob_inner(&y);
            let rhs = x.frob_inner(&apply_q_omega_star(&s, &y).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!((lhs - rhs).abs() / scale <= 1e-10, "probe {probe}");
        }
    }

    #[test]
    fn q_omega_zero() {
        let s = random_sample_set(6, 4, 81);
        let q = apply_q_omega(&s, &SymMatrix::zeros(6)).unwrap();
        assert_eq!(q.frob_norm(), 0.0);
    }

    #[test]
    fn coherence_gaussian_cloud() {
        let p = crate::geometry::PointCloud::new({
            let mut rng = ChaCha8Rng::seed_from_u64(91);
            DMatrix::<f64>::from_fn(2, 10, |_, _| StandardNormal.sample(&mut rng))
        })
        .unwrap()
        .center();
        let x = p.gram();
        let eig = x.as_matrix().clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let mut u = DMatrix::zeros(10, 2);
        for (c, &i) in order[..2].iter().enumerate() {
            u.set_column(c, &eig.eigenvectors.column(i));
        }
        let nu = coherence(&u).unwrap();
        assert!(nu > 0.0 && nu.is_finite());

        // Both defining inequalities hold at the returned ν, and at least
        // one is tight.
        let n = 10;
        let r = 2;
        let project_t = |z: &SymMatrix| -> DMatrix<f64> {
            let c = u.transpose() * z.as_matrix();
            let cu = &c * &u;
            &u * &c + c.transpose() * u.transpose() - &u * cu * u.transpose()
        };
        let pair_energy = |mz: &DMatrix<f64>| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = mz[(i, i)] + mz[(j, j)] - 2.0 * mz[(i, j)];
                    acc += v * v;
                }
            }
            acc
        };
        let mut max_w: f64 = 0.0;
        let mut max_v: f64 = 0.0;
        for i in 1..=n {
            for j in (i + 1)..=n {
                let a = IndexPair::Off { i, j };
                max_w = max_w.max(pair_energy(&project_t(
                    &primal_basis_element(a, n).unwrap(),
                )));
                max_v = max_v.max(pair_energy(&project_t(&dual_basis_element(a, n).unwrap())));
            }
        }
        let bound_w = 2.0 * nu * r as f64 / n as f64;
        let bound_v = 4.0 * nu * r as f64 / n as f64;
        assert!(max_w <= bound_w * (1.0 + 1e-12));
        assert!(max_v <= bound_v * (1.0 + 1e-12));
        let tight = (max_w - bound_w).abs() <= 1e-12 * bound_w
            || (max_v - bound_v).abs() <= 1e-12 * bound_v;
        assert!(tight, "returned coherence is not the smallest valid value");
    }

    #[test]
    fn coherence_span_invariance_and_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let a = DMatrix::<f64>::from_fn(12, 3, |_, _| StandardNormal.sample(&mut rng));
        let u = a.qr().q();
        let nu = coherence(&u).unwrap();
        // Any orthonormal basis of the same span gives the same value.
        let rot = {
            let b = DMatrix::<f64>::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
            b.qr().q()
        };
        let nu_rot = coherence(&(&u * rot)).unwrap();
        assert_abs_diff_eq!(nu, nu_rot, epsilon = 1e-10);

        let big = DMatrix::<f64>::identity(COHERENCE_MAX_N + 1, 2);
        match coherence(&big) {
            Err(EdgError::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn sample_set_validation() {
        let dup = vec![IndexPair::off(1, 2).unwrap(), IndexPair::off(1, 2).unwrap()];
        match SampleSet::new(4, dup.clone(), vec![1.0, 1.0], false) {
            Err(EdgError::TooMany(_)) => {}
            other => panic!("expected TooMany, got {other:?}"),
        }
        assert!(SampleSet::new(4, dup, vec![1.0, 1.0], true).is_ok());

        let too_many = all_pairs(3)
            .into_iter()
            .chain([IndexPair::off(1, 2).unwrap()])
            .collect::<Vec<_>>();
        match SampleSet::new(3, too_many, vec![0.0; 4], false) {
            Err(EdgError::TooMany(_)) => {}
            other => panic!("expected TooMany, got {other:?}"),
        }

        match SampleSet::new(
            4,
            vec![IndexPair::off(1, 2).unwrap()],
            vec![-1.0],
            false,
        ) {
            Err(EdgError::InvalidInput(_)) => {}
            other => panic!("expected InvalidInput, got {other:?}"),
        }
    }

    #[test]
    fn sample_text_roundtrip() {
        let s = random_sample_set(9, 12, 111);
        let text = s.to_text();
        assert!(text.starts_with("edg-samples v1 n=9 m=12\n"));
        let s2 = SampleSet::from_text(&text).unwrap();
        assert_eq!(s.pairs(), s2.pairs());
        assert_eq!(s.d2(), s2.d2());
        assert_eq!(s.n(), s2.n());
        assert!(!s2.with_replacement());
    }

    #[test]
    fn sample_text_errors_carry_line_numbers() {
        match SampleSet::from_text("edg-samples v1 n=4 m=2\n1 2 1.0\n1 oops 2.0\n") {
            Err(EdgError::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
        match SampleSet::from_text("edg-samples v2 n=4 m=1\n1 2 1.0\n") {
            Err(EdgError::ParseError { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected ParseError, got {other:?}"),
        }
        match SampleSet::from_text("edg-samples v1 n=4 m=3\n1 2 1.0\n") {
            Err(EdgError::ParseError { line: 1, .. }) => {}
            other => panic!("expected header-count ParseError, got {other:?}"),
        }
    }

    #[test]
    fn pair_count_arithmetic() {
        assert_eq!(pair_count(2), 1);
        assert_eq!(pair_count(6), 15);
        assert_eq!(pair_count(500), 124750);
    }
}
