//! Experiment harness: phase-transition grids over (rank, oversampling),
//! sampling-operator isometry probes, and wall-clock scaling runs. All
//! randomness flows from one grid seed through a stable hash, so results
//! replicate across platforms and thread counts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{apply_q_omega, apply_q_omega_star, pair_count, SampleSet};
use crate::dataio::{oversampling_to_m, sample_and_observe, InstanceKind, InstanceSpec};
use crate::error::{EdgError, Result};
use crate::geometry::{procrustes_distance, PointCloud};
use crate::irls::{matrix_irls, IrlsConfig, WlsMode};
use crate::linalg::{operator_norm, LinOpHandle, SymMatrix};
use crate::tangent::{embed_t, project_t_star};

/// Phase-transition protocol: for every (rank, ρ) cell, solve `instances`
/// independent random instances and aggregate success statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n: usize,
    pub ranks: Vec<usize>,
    /// Oversampling factors, sorted ascending.
    pub rhos: Vec<f64>,
    /// Instances per cell.
    pub instances: usize,
    /// Success threshold on the relative Procrustes error.
    pub tol_rec: f64,
    pub kind: InstanceKind,
    pub seed: u64,
    pub mode: WlsMode,
    /// Outer-iteration budget per solve (non-recoverable instances run to
    /// this cap, so it dominates grid wall time).
    pub max_outer: usize,
}

impl ExperimentGrid {
    pub fn new(n: usize, ranks: Vec<usize>, rhos: Vec<f64>, instances: usize, seed: u64) -> Self {
        ExperimentGrid {
            n,
            ranks,
            rhos,
            instances,
            tol_rec: 1e-3,
            kind: InstanceKind::Gaussian,
            seed,
            mode: WlsMode::Tangent,
            max_outer: 400,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(EdgError::InvalidInput(
                "grid needs at least one instance per cell".into(),
            ));
        }
        if self.ranks.is_empty() || self.rhos.is_empty() {
            return Err(EdgError::InvalidInput("grid has no cells".into()));
        }
        if self.rhos.windows(2).any(|w| w[1] < w[0]) {
            return Err(EdgError::InvalidInput(
                "oversampling factors must be sorted ascending".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregated statistics of one (rank, ρ) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub rank: usize,
    pub rho: f64,
    pub success_prob: f64,
    pub median_err: f64,
    pub q25_err: f64,
    pub q75_err: f64,
    pub median_time_ms: f64,
}

/// One solved instance inside a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub rank: usize,
    pub rho: f64,
    pub instance: usize,
    pub err: f64,
    pub success: bool,
    pub converged: bool,
    pub outer_iters: usize,
    pub wall_ms: f64,
}

/// FNV-1a over the cell coordinates: stable across platforms, collision-
/// free in practice for the handful of values a grid visits.
pub fn instance_seed(grid_seed: u64, rank: usize, rho: f64, instance: usize) -> u64 {
    const BASIS: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = BASIS;
    for word in [grid_seed, rank as u64, rho.to_bits(), instance as u64] {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Generate, sample, solve, and score one instance.
pub fn run_instance(
    spec: &InstanceSpec,
    rho: f64,
    tol_rec: f64,
    mode: WlsMode,
    max_outer: usize,
) -> Result<InstanceOutcome> {
    let p = spec.generate()?;
    let m = oversampling_to_m(rho, spec.n, spec.r);
    let s = sample_and_observe(&p, m, instance_seed(spec.seed, 0, rho, usize::MAX), false)?;
    let mut cfg = IrlsConfig::new(spec.r);
    cfg.mode = mode;
    cfg.max_outer = max_outer;
    let t0 = std::time::Instant::now();
    let res = matrix_irls(&s, &cfg, None)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let err = res
        .recovered_points(spec.r)
        .and_then(|rec| procrustes_distance(&rec, &p))
        .unwrap_or(f64::INFINITY);
    let err = if err.is_nan() { f64::INFINITY } else { err };
    Ok(InstanceOutcome {
        rank: spec.r,
        rho,
        instance: 0,
        err,
        success: err <= tol_rec,
        converged: res.converged,
        outer_iters: res.outer_iters,
        wall_ms,
    })
}

/// All instances of a grid, solved on the current worker pool and sorted
/// by (rank, ρ, instance) so output order ignores scheduling.
pub fn grid_outcomes(grid: &ExperimentGrid) -> Result<Vec<InstanceOutcome>> {
    grid.validate()?;
    let mut jobs: Vec<(usize, f64, usize)> = Vec::new();
    for &rank in &grid.ranks {
        for &rho in &grid.rhos {
            for i in 0..grid.instances {
                jobs.push((rank, rho, i));
            }
        }
    }
    let mut outcomes = jobs
        .into_par_iter()
        .map(|(rank, rho, i)| {
            let spec = InstanceSpec {
                n: grid.n,
                r: rank,
                kind: grid.kind,
                seed: instance_seed(grid.seed, rank, rho, i),
            };
            run_instance(&spec, rho, grid.tol_rec, grid.mode, grid.max_outer).map(|mut out| {
                out.instance = i;
                out
            })
        })
        .collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|a, b| {
        (a.rank, a.rho, a.instance)
            .partial_cmp(&(b.rank, b.rho, b.instance))
            .unwrap()
    });
    Ok(outcomes)
}

/// Interpolated quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn aggregate(rank: usize, rho: f64, cell: &[InstanceOutcome]) -> CellResult {
    let mut errs: Vec<f64> = cell.iter().map(|o| o.err).collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut times: Vec<f64> = cell.iter().map(|o| o.wall_ms).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let succ = cell.iter().filter(|o| o.success).count();
    CellResult {
        rank,
        rho,
        success_prob: succ as f64 / cell.len() as f64,
        median_err: quantile(&errs, 0.5),
        q25_err: quantile(&errs, 0.25),
        q75_err: quantile(&errs, 0.75),
        median_time_ms: quantile(&times, 0.5),
    }
}

/// Run the full grid and aggregate each cell.
pub fn phase_transition(grid: &ExperimentGrid) -> Result<Vec<CellResult>> {
    let outcomes = grid_outcomes(grid)?;
    let mut cells = Vec::new();
    for &rank in &grid.ranks {
        for &rho in &grid.rhos {
            let cell: Vec<InstanceOutcome> = outcomes
                .iter()
                .filter(|o| o.rank == rank && o.rho == rho)
                .cloned()
                .collect();
            cells.push(aggregate(rank, rho, &cell));
        }
    }
    Ok(cells)
}

pub fn phase_transition_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("rank,rho,success_prob,median_err,q25_err,q75_err,median_time_ms\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.3}\n",
            c.rank, c.rho, c.success_prob, c.median_err, c.q25_err, c.q75_err, c.median_time_ms
        ));
    }
    out
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    if n < 2.0 {
        return 1.0;
    }
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        // A constant sequence is monotone; treat as perfectly correlated.
        return 1.0;
    }
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

// ---------------------------------------------------------------------
// Sampling-operator isometry probe
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RipProbe {
    /// Max observed ‖P_T·Q*_Ω·P_T − P_T‖ over the trials.
    pub norm_ptqpt_minus_pt: f64,
    /// Max observed ‖Q_Ω‖ over the trials.
    pub qomega_norm: f64,
    /// 20·L·√(ln n / m) + 1.
    pub bound: f64,
}

fn sym_from_vec(n: usize, v: &DVector<f64>) -> SymMatrix {
    let m = DMatrix::from_fn(n, n, |i, j| v[i * n + j]);
    SymMatrix::from_dense(&m).expect("finite probe vector")
}

fn vec_from_sym(z: &SymMatrix) -> DVector<f64> {
    DVector::from_column_slice(z.as_matrix().as_slice())
}

fn p_t(u: &DMatrix<f64>, z: &SymMatrix) -> SymMatrix {
    embed_t(u, &project_t_star(u, z).expect("dims fixed")).expect("dims fixed")
}

/// ‖P_T·Q*_Ω·P_T − P_T‖ and ‖Q_Ω‖ for one sampled Ω, by power iteration
/// over the vectorized operators.
pub fn rip_norms(s: &SampleSet, u0: &DMatrix<f64>, iters: usize) -> Result<(f64, f64)> {
    let n = s.n();
    if u0.nrows() != n {
        return Err(EdgError::DimensionMismatch(format!(
            "basis over {} points, sample set over {n}",
            u0.nrows()
        )));
    }
    let u_fwd = u0.clone();
    let u_adj = u0.clone();
    let s_fwd = s.clone();
    let s_adj = s.clone();
    let dev = LinOpHandle::new(n * n, n * n, move |v| {
        let z = sym_from_vec(n, v);
        let pz = p_t(&u_fwd, &z);
        let mut out = p_t(&u_fwd, &apply_q_omega_star(&s_fwd, &pz).expect("dims fixed"));
        out.add_scaled(-1.0, &pz);
        vec_from_sym(&out)
    })
    .with_adjoint(move |v| {
        let z = sym_from_vec(n, v);
        let pz = p_t(&u_adj, &z);
        let mut out = p_t(&u_adj, &apply_q_omega(&s_adj, &pz).expect("dims fixed"));
        out.add_scaled(-1.0, &pz);
        vec_from_sym(&out)
    });
    let dev_norm = operator_norm(&dev, iters);

    let s_fwd = s.clone();
    let s_adj = s.clone();
    let q = LinOpHandle::new(n * n, n * n, move |v| {
        vec_from_sym(&apply_q_omega(&s_fwd, &sym_from_vec(n, v)).expect("dims fixed"))
    })
    .with_adjoint(move |v| {
        vec_from_sym(&apply_q_omega_star(&s_adj, &sym_from_vec(n, v)).expect("dims fixed"))
    });
    let q_norm = operator_norm(&q, iters);
    Ok((dev_norm, q_norm))
}

/// Lemma-style spectral bound for the sampling operator.
pub fn rip_bound(n: usize, m: usize) -> f64 {
    20.0 * pair_count(n) as f64 * ((n as f64).ln() / m as f64).sqrt() + 1.0
}

/// Deterministic flat-leverage configuration: cos/sin coordinate pairs at
/// distinct harmonics (plus an alternating row when r is odd and n even),
/// so every point carries the same share r/n of the column span. This is
/// the least-coherent rank-r ground truth the isometry statement admits.
pub fn incoherent_cloud(n: usize, r: usize) -> Result<PointCloud> {
    if r == 0 || n <= r || 2 * ((r + 1) / 2) >= n {
        return Err(EdgError::InvalidInput(format!(
            "need n > r >= 1 with room for {r} harmonics, got n={n}"
        )));
    }
    let nf = n as f64;
    let coords = DMatrix::<f64>::from_fn(r, n, |row, i| {
        let f = (row / 2 + 1) as f64;
        let th = 2.0 * std::f64::consts::PI * f * (i as f64 + 0.5) / nf;
        if row + 1 == r && r % 2 == 1 {
            if n % 2 == 0 {
                // Alternating ±1: the real harmonic at the Nyquist rate.
                if i % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                th.cos()
            }
        } else if row % 2 == 0 {
            th.cos()
        } else {
            th.sin()
        }
    });
    Ok(PointCloud::new(coords)?.center())
}

/// Repeat the isometry measurement over fresh with-replacement draws of
/// Ω at the tangent space of one fixed flat-leverage rank-r ground truth
/// (the randomness the isometry statement quantifies over is the sample
/// set, not the configuration).
pub fn rip_probe(n: usize, r: usize, m: usize, trials: usize, seed: u64) -> Result<RipProbe> {
    if trials == 0 {
        return Err(EdgError::InvalidInput("need at least one trial".into()));
    }
    let p = incoherent_cloud(n, r)?;
    let u0 = p.coords().transpose().qr().q();
    let results: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = sample_and_observe(&p, m, instance_seed(seed, r, 1.0, t), true)?;
            rip_norms(&s, &u0, 200)
        })
        .collect::<Result<Vec<_>>>()?;
    let dev = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let q = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(RipProbe {
        norm_ptqpt_minus_pt: dev,
        qomega_norm: q,
        bound: rip_bound(n, m),
    })
}

// ---------------------------------------------------------------------
// Scaling benchmark
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub relative_error: f64,
    pub wall_minutes: f64,
}

/// Solve one Gaussian instance per size and report error and wall time.
pub fn bench(sizes: &[usize], r: usize, rho: f64, seed: u64, mode: WlsMode) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let spec = InstanceSpec {
            n,
            r,
            kind: InstanceKind::Gaussian,
            seed: instance_seed(seed, r, rho, n),
        };
        let out = run_instance(&spec, rho, 1e-3, mode, 400)?;
        rows.push(BenchRow {
            n,
            relative_error: out.err,
            wall_minutes: out.wall_ms / 60_000.0,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,relative_error,wall_minutes\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.6}\n",
            r.n, r.relative_error, r.wall_minutes
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_gaussian, sample_pairs};

    #[test]
    fn instance_seed_is_stable_and_spread() {
        let a = instance_seed(7, 2, 1.5, 0);
        let b = instance_seed(7, 2, 1.5, 0);
        assert_eq!(a, b);
        let mut seen = std::collections::HashSet::new();
        for rank in [2usize, 3, 4] {
            for i in 0..50 {
                seen.insert(instance_seed(7, rank, 1.5, i));
                seen.insert(instance_seed(8, rank, 1.5, i));
            }
        }
        assert_eq!(seen.len(), 2 * 3 * 50);
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 6.0, 8.0]), 1.0);
        assert_eq!(spearman(&x, &[8.0, 6.0, 4.0, 2.0]), -1.0);
        // Ties handled with average ranks.
        let r = spearman(&[1.0, 1.0, 2.0, 2.0], &[1.0, 1.0, 2.0, 2.0]);
        assert!((r - 1.0).abs() <= 1e-12);
        assert_eq!(spearman(&x, &[5.0, 5.0, 5.0, 5.0]), 1.0);
    }

    #[test]
    fn quantiles_are_ordered() {
        let cell: Vec<InstanceOutcome> = (0..7)
            .map(|i| InstanceOutcome {
                rank: 2,
                rho: 3.0,
                instance: i,
                err: (i as f64 + 1.0) * 1e-7,
                success: true,
                converged: true,
                outer_iters: 10,
                wall_ms: 5.0,
            })
            .collect();
        let agg = aggregate(2, 3.0, &cell);
        assert!(agg.q25_err <= agg.median_err && agg.median_err <= agg.q75_err);
        assert_eq!(agg.success_prob, 1.0);
    }

    #[test]
    fn degenerate_grid_reproduces_single_solve() {
        let grid = ExperimentGrid {
            max_outer: 200,
            ..ExperimentGrid::new(24, vec![2], vec![3.0], 1, 11)
        };
        let cells = phase_transition(&grid).unwrap();
        assert_eq!(cells.len(), 1);
        let spec = InstanceSpec {
            n: 24,
            r: 2,
            kind: InstanceKind::Gaussian,
            seed: instance_seed(11, 2, 3.0, 0),
        };
        let single = run_instance(&spec, 3.0, 1e-3, WlsMode::Tangent, 200).unwrap();
        assert_eq!(cells[0].median_err.to_bits(), single.err.to_bits());
        assert_eq!(cells[0].success_prob, if single.success { 1.0 } else { 0.0 });
    }

    #[test]
    fn tiny_grid_separates_recoverable_from_impossible() {
        let mut grid = ExperimentGrid::new(40, vec![2], vec![0.8, 3.0], 2, 13);
        grid.max_outer = 120;
        let cells = phase_transition(&grid).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].rho, 0.8);
        assert_eq!(cells[0].success_prob, 0.0, "below DOF must fail");
        assert_eq!(cells[1].success_prob, 1.0, "rho=3 must recover");
        assert!(cells[1].median_err <= 1e-6);
        // Monotone success across the two cells.
        let probs: Vec<f64> = cells.iter().map(|c| c.success_prob).collect();
        let rhos: Vec<f64> = cells.iter().map(|c| c.rho).collect();
        assert!(spearman(&rhos, &probs) >= 0.8);
        // CSV round shape.
        let csv = phase_transition_csv(&cells);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("rank,rho,success_prob"));
    }

    #[test]
    fn rip_full_sampling_is_exact_identity() {
        let n = 12;
        let p = gen_gaussian(n, 2, 17).unwrap();
        let u0 = p.coords().transpose().qr().q();
        let l = pair_count(n);
        let s = sample_and_observe(&p, l, 18, false).unwrap();
        let (dev, q) = rip_norms(&s, &u0, 150).unwrap();
        assert!(dev <= 1e-8, "deviation {dev:.3e}");
        assert!((q - 1.0).abs() <= 1e-8, "full-sampling norm {q}");
    }

    #[test]
    fn rip_partial_sampling_is_bounded() {
        let probe = rip_probe(20, 2, 8 * 20 * 2 * 3, 2, 19).unwrap();
        assert!(probe.norm_ptqpt_minus_pt < 1.0);
        assert!(probe.qomega_norm <= probe.bound);
        assert!(probe.bound > 1.0);
    }

    #[test]
    fn incoherent_cloud_has_flat_leverage() {
        for (n, r) in [(12usize, 2usize), (12, 3), (13, 3), (20, 5)] {
            let p = incoherent_cloud(n, r).unwrap();
            let u = p.coords().transpose().qr().q();
            // Orthonormal columns, orthogonal to the all-ones vector.
            let gram = u.transpose() * &u;
            for i in 0..r {
                for j in 0..r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - want).abs() <= 1e-10, "n={n} r={r}");
                }
            }
            let ones = DVector::from_element(n, 1.0);
            assert!((u.transpose() * &ones).norm() <= 1e-10, "n={n} r={r}");
            // Row leverages are exactly r/n whenever the alternating
            // fallback is available (even n) or r is even.
            if r % 2 == 0 || n % 2 == 0 {
                for i in 0..n {
                    let lev: f64 = (0..r).map(|c| u[(i, c)] * u[(i, c)]).sum();
                    assert!(
                        (lev - r as f64 / n as f64).abs() <= 1e-10,
                        "n={n} r={r} i={i} leverage {lev}"
                    );
                }
            }
        }
        assert!(incoherent_cloud(4, 3).is_err());
        assert!(incoherent_cloud(10, 0).is_err());
    }

    #[test]
    fn grid_validation_rejects_bad_input() {
        let empty = ExperimentGrid::new(20, vec![], vec![1.0], 1, 0);
        assert!(phase_transition(&empty).is_err());
        let zero_inst = ExperimentGrid::new(20, vec![2], vec![1.0], 0, 0);
        assert!(phase_transition(&zero_inst).is_err());
        let unsorted = ExperimentGrid::new(20, vec![2], vec![2.0, 1.0], 1, 0);
        assert!(phase_transition(&unsorted).is_err());
    }

    #[test]
    fn bench_row_shape() {
        let rows = bench(&[20], 2, 3.0, 21, WlsMode::Tangent).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].relative_error <= 1e-6);
        assert!(rows[0].wall_minutes > 0.0);
        let csv = bench_csv(&rows);
        assert!(csv.starts_with("n,relative_error,wall_minutes"));
    }

    #[test]
    fn sampler_reuse_in_outcomes_is_deterministic() {
        let grid = ExperimentGrid {
            max_outer: 150,
            ..ExperimentGrid::new(20, vec![2], vec![3.0], 2, 23)
        };
        let a = grid_outcomes(&grid).unwrap();
        let b = grid_outcomes(&grid).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.err.to_bits(), y.err.to_bits());
            assert_eq!(x.outer_iters, y.outer_iters);
        }
        let _ = sample_pairs(20, 5, 1, false).unwrap();
    }
}
