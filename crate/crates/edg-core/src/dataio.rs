//! Synthetic instance generators, pair samplers, and the two real-data
//! loaders (PDB atom records, longitude/latitude CSV).
//!
//! Every generator is a pure function of its arguments plus a `u64` seed
//! feeding a ChaCha8 stream, so identical inputs give byte-identical
//! outputs on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::basis::{pair_count, IndexPair, SampleSet};
use crate::error::{EdgError, Result};
use crate::geometry::PointCloud;

/// Eigenvalue decay profile of the ill-conditioned generator is O(i⁻²).
pub const DECAY_EXPONENT: u32 = 2;

/// Which synthetic family an instance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InstanceKind {
    Gaussian,
    IllConditioned { kappa: f64 },
}

/// A fully specified synthetic instance: generate the same points from the
/// same spec forever.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub r: usize,
    pub kind: InstanceKind,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn generate(&self) -> Result<PointCloud> {
        match self.kind {
            InstanceKind::Gaussian => gen_gaussian(self.n, self.r, self.seed),
            InstanceKind::IllConditioned { kappa } => {
                gen_ill_conditioned(self.n, self.r, kappa, self.seed)
            }
        }
    }
}

fn check_n_r(n: usize, r: usize) -> Result<()> {
    if r == 0 || n <= r {
        return Err(EdgError::InvalidInput(format!(
            "need n > r >= 1, got n={n}, r={r}"
        )));
    }
    Ok(())
}

/// n i.i.d. standard-normal points in ℝʳ, centered.
pub fn gen_gaussian(n: usize, r: usize, seed: u64) -> Result<PointCloud> {
    check_n_r(n, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = DMatrix::<f64>::from_fn(r, n, |_, _| StandardNormal.sample(&mut rng));
    Ok(PointCloud::new(coords)?.center())
}

/// A centered cloud whose Gram matrix has eigenvalues interpolating from κ
/// down to 1 with an i⁻² profile:
/// λ_i = 1 + (κ−1)·((r/i)² − 1)/(r² − 1).
///
/// The eigenbasis is drawn orthogonal to the all-ones vector, so the exact
/// spectrum (and hence the exact condition number κ) survives centering.
pub fn gen_ill_conditioned(n: usize, r: usize, kappa: f64, seed: u64) -> Result<PointCloud> {
    check_n_r(n, r)?;
    if !(kappa >= 1.0) {
        return Err(EdgError::InvalidInput(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    if r == 1 && kappa != 1.0 {
        return Err(EdgError::InvalidInput(
            "a rank-1 Gram matrix always has condition number 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Random n×r block, each column projected orthogonal to 1, then QR.
    let mut a = DMatrix::<f64>::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
    for c in 0..r {
        let mean = a.column(c).sum() / n as f64;
        for i in 0..n {
            a[(i, c)] -= mean;
        }
    }
    let u = a.qr().q();

    let rf = r as f64;
    let lambda = |i: usize| -> f64 {
        if r == 1 {
            1.0
        } else {
            let x = (rf / i as f64).powi(DECAY_EXPONENT as i32);
            1.0 + (kappa - 1.0) * (x - 1.0) / (rf * rf - 1.0)
        }
    };
    // P = diag(√λ)·Uᵀ gives Gram = U·diag(λ)·Uᵀ with the exact spectrum.
    let coords = DMatrix::from_fn(r, n, |d, i| lambda(d + 1).sqrt() * u[(i, d)]);
    PointCloud::new(coords)
}

/// Degrees of freedom of a centered rank-r Gram matrix: nr − r(r−1)/2.
pub fn dof(n: usize, r: usize) -> usize {
    n * r - r * (r - 1) / 2
}

/// Sample budget at oversampling factor ρ: round(ρ·dof), clipped to
/// [1, L].
pub fn oversampling_to_m(rho: f64, n: usize, r: usize) -> usize {
    let m = (rho * dof(n, r) as f64).round() as isize;
    let l = pair_count(n) as isize;
    m.clamp(1, l) as usize
}

fn pairs_before_row(i: usize, n: usize) -> usize {
    i * (2 * n - 1 - i) / 2
}

/// Lexicographic unranking of k ∈ [0, L) to a 0-based pair (i, j), i < j.
fn unrank_pair(k: usize, n: usize) -> (usize, usize) {
    debug_assert!(k < pair_count(n));
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.sqrt()) / 2.0).floor().max(0.0) as usize;
    // Float fixup: land on the largest i with pairs_before_row(i) ≤ k.
    while i + 1 < n && pairs_before_row(i + 1, n) <= k {
        i += 1;
    }
    while pairs_before_row(i, n) > k {
        i -= 1;
    }
    let j = i + 1 + (k - pairs_before_row(i, n));
    (i, j)
}

/// m pairs drawn uniformly from the L = n(n−1)/2 off-diagonal pairs.
///
/// Without replacement this is a partial Fisher–Yates over the virtual
/// index range [0, L) (O(m) memory, so L never materializes); with
/// replacement it is m independent uniform draws and m may exceed L.
pub fn sample_pairs(n: usize, m: usize, seed: u64, with_replacement: bool) -> Result<Vec<IndexPair>> {
    if n < 2 {
        return Err(EdgError::InvalidInput(format!("need n >= 2, got {n}")));
    }
    let l = pair_count(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks: Vec<usize> = if with_replacement {
        (0..m).map(|_| rng.random_range(0..l)).collect()
    } else {
        if m > l {
            return Err(EdgError::TooMany(format!(
                "{m} samples requested but only {l} distinct pairs exist"
            )));
        }
        let mut displaced: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let pick = rng.random_range(k..l);
            let vk = *displaced.get(&k).unwrap_or(&k);
            let vp = *displaced.get(&pick).unwrap_or(&pick);
            out.push(vp);
            displaced.insert(pick, vk);
            displaced.insert(k, vp);
        }
        out
    };
    ranks
        .into_iter()
        .map(|k| {
            let (i, j) = unrank_pair(k, n);
            IndexPair::off(i + 1, j + 1)
        })
        .collect()
}

/// Measure the listed pairs on a point cloud: d²_ℓ = ‖p_i − p_j‖².
pub fn observe(p: &PointCloud, pairs: Vec<IndexPair>, with_replacement: bool) -> Result<SampleSet> {
    let n = p.n();
    let mut d2 = Vec::with_capacity(pairs.len());
    for &pair in &pairs {
        pair.validate(n)?;
        match pair {
            IndexPair::Off { i, j } => {
                let diff = p.point(i - 1) - p.point(j - 1);
                d2.push(diff.norm_squared());
            }
            IndexPair::Diag { .. } => {
                return Err(EdgError::InvalidInput(
                    "can only observe off-diagonal pairs".into(),
                ))
            }
        }
    }
    SampleSet::new(n, pairs, d2, with_replacement)
}

/// Draw m uniform pairs and measure them in one go.
pub fn sample_and_observe(
    p: &PointCloud,
    m: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<SampleSet> {
    let pairs = sample_pairs(p.n(), m, seed, with_replacement)?;
    observe(p, pairs, with_replacement)
}

/// Extract (x, y, z) coordinates from PDB `ATOM` records (fixed columns
/// 31–54), in record order. `include_hetatm` also takes `HETATM` records.
pub fn load_pdb_atoms(text: &str, include_hetatm: bool) -> Result<PointCloud> {
    let mut cols: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let is_atom = line.starts_with("ATOM");
        let is_het = line.starts_with("HETATM");
        if !is_atom && !(include_hetatm && is_het) {
            continue;
        }
        if line.len() < 54 {
            return Err(EdgError::ParseError {
                line: lineno,
                msg: format!("record too short for coordinate columns ({} chars)", line.len()),
            });
        }
        for (lo, hi) in [(30usize, 38usize), (38, 46), (46, 54)] {
            let field = &line[lo..hi];
            let v: f64 = field.trim().parse().map_err(|e| EdgError::ParseError {
                line: lineno,
                msg: format!("bad coordinate field {field:?}: {e}"),
            })?;
            cols.push(v);
        }
        count += 1;
    }
    if count == 0 {
        return Err(EdgError::EmptyCloud("no ATOM records found".into()));
    }
    let coords = DMatrix::from_fn(3, count, |d, i| cols[i * 3 + d]);
    PointCloud::new(coords)
}

/// Load a two-column CSV of (longitude, latitude) pairs as planar
/// coordinates (r = 2). A single non-numeric first line is treated as a
/// header and skipped.
pub fn load_latlong_csv(text: &str) -> Result<PointCloud> {
    let mut cols: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(EdgError::ParseError {
                line: lineno,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                cols.extend(v);
                count += 1;
            }
            Err(e) => {
                if lineno == 1 {
                    continue; // header row
                }
                return Err(EdgError::ParseError {
                    line: lineno,
                    msg: format!("bad coordinate: {e}"),
                });
            }
        }
    }
    if count == 0 {
        return Err(EdgError::EmptyCloud("no coordinate rows found".into()));
    }
    let coords = DMatrix::from_fn(2, count, |d, i| cols[i * 2 + d]);
    PointCloud::new(coords)
}
