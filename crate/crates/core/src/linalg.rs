//! Cholesky factors of covariance matrices and batched Gaussian sampling.
//!
//! Two factorization routes produce the same lower-triangular factor:
//! a dense `O(n³)` Cholesky for arbitrary covariance matrices, and the
//! `O(n²)` Schur algorithm for symmetric Toeplitz matrices (stationary fields
//! on uniform grids). Both share one jitter policy: on failure, add
//! `1e-12 · trace / n` to the diagonal and retry once.

use nalgebra::{DMatrix, DMatrixViewMut};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{MrmError, Result};

pub const JITTER_FACTOR: f64 = 1e-12;

/// Lower-triangular factor `L` with `L Lᵀ = C + jitter · I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Diagonal jitter that was needed; zero when the first attempt worked.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L · Z`; each column of `z` maps to one correlated draw.
    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.lower * z
    }

    /// A single mean-zero draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = standard_normals(self.dim(), rng);
        let mut out = vec![0.0; self.dim()];
        for (j, zj) in z.iter().enumerate() {
            let col = self.lower.column(j);
            for i in j..out.len() {
                out[i] += col[i] * zj;
            }
        }
        out
    }

    /// One mean-zero draw per generator; draw `k` only depends on `rngs[k]`.
    pub fn sample_batch<R: Rng>(&self, rngs: &mut [R]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut z = DMatrix::<f64>::zeros(n, rngs.len());
        for (k, rng) in rngs.iter_mut().enumerate() {
            for i in 0..n {
                z[(i, k)] = rng.sample(StandardNormal);
            }
        }
        let y = self.apply(&z);
        (0..rngs.len())
            .map(|k| y.column(k).iter().copied().collect())
            .collect()
    }
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn jitter_for(trace: f64, n: usize) -> f64 {
    JITTER_FACTOR * trace / n.max(1) as f64
}

const BLOCK: usize = 128;

/// Right-looking blocked Cholesky; trailing updates run per block column in
/// parallel. Returns `None` when the matrix is not positive definite.
fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n <= 2 * BLOCK {
        return a.cholesky().map(|c| c.unpack());
    }
    for k in (0..n).step_by(BLOCK) {
        let kb = BLOCK.min(n - k);
        let diag = a.view((k, k), (kb, kb)).clone_owned().cholesky()?.unpack();
        a.view_mut((k, k), (kb, kb)).copy_from(&diag);
        let rest = k + kb;
        if rest == n {
            break;
        }
        let m = n - rest;
        let panel_t = a.view((rest, k), (m, kb)).transpose();
        let panel = diag.solve_lower_triangular(&panel_t)?.transpose();
        a.view_mut((rest, k), (m, kb)).copy_from(&panel);
        let data = a.as_mut_slice();
        data[rest * n..]
            .par_chunks_mut(n * BLOCK)
            .enumerate()
            .for_each(|(b, chunk)| {
                let j0 = rest + b * BLOCK;
                let jb = chunk.len() / n;
                let mut cols = DMatrixViewMut::from_slice(chunk, n, jb);
                let mut target = cols.view_mut((j0, 0), (n - j0, jb));
                let left = panel.rows(j0 - rest, n - j0);
                let right = panel.rows(j0 - rest, jb);
                target.gemm(-1.0, &left, &right.transpose(), 1.0);
            });
    }
    // zero the strict upper triangle
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

/// Dense Cholesky with the shared jitter policy.
pub fn dense_cholesky(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(MrmError::Validation(
            "covariance matrix must be square".into(),
        ));
    }
    if n == 0 {
        return Ok(CholeskyFactor {
            lower: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    if let Some(lower) = blocked_cholesky(cov.clone()) {
        return Ok(CholeskyFactor { lower, jitter: 0.0 });
    }
    let jitter = jitter_for(cov.trace(), n);
    let mut shifted = cov.clone();
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    match blocked_cholesky(shifted) {
        Some(lower) => Ok(CholeskyFactor { lower, jitter }),
        None => Err(MrmError::numerical(
            "cholesky",
            format!(
                "{n}×{n} covariance is not positive definite even with diagonal jitter {jitter:e}"
            ),
        )),
    }
}

/// Schur algorithm on the generators of a symmetric Toeplitz matrix with
/// first column `col`. Returns `None` when the matrix is not positive
/// definite.
fn schur(col: &[f64]) -> Option<DMatrix<f64>> {
    let n = col.len();
    if col[0] <= 0.0 || !col[0].is_finite() {
        return None;
    }
    let root = col[0].sqrt();
    let mut g1: Vec<f64> = col.iter().map(|c| c / root).collect();
    let mut g2 = g1.clone();
    g2[0] = 0.0;
    let mut lower = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        {
            let mut column = lower.column_mut(k);
            let dst = &mut column.as_mut_slice()[k..];
            dst.copy_from_slice(&g1[k..]);
        }
        if k + 1 == n {
            break;
        }
        // shift the first generator down by one position
        g1.copy_within(k..n - 1, k + 1);
        g1[k] = 0.0;
        let rho = g2[k + 1] / g1[k + 1];
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return None;
        }
        let scale = 1.0 / ((1.0 - rho) * (1.0 + rho)).sqrt();
        for i in k + 1..n {
            let (a, b) = (g1[i], g2[i]);
            g1[i] = (a - rho * b) * scale;
            g2[i] = (b - rho * a) * scale;
        }
        g2[k + 1] = 0.0;
    }
    Some(lower)
}

/// Cholesky factor of the symmetric Toeplitz matrix with first column `col`.
pub fn toeplitz_cholesky(col: &[f64]) -> Result<CholeskyFactor> {
    let n = col.len();
    if n == 0 {
        return Ok(CholeskyFactor {
            lower: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    if let Some(lower) = schur(col) {
        return Ok(CholeskyFactor { lower, jitter: 0.0 });
    }
    let jitter = jitter_for(col[0] * n as f64, n);
    let mut shifted = col.to_vec();
    shifted[0] += jitter;
    match schur(&shifted) {
        Some(lower) => Ok(CholeskyFactor { lower, jitter }),
        None => Err(MrmError::numerical(
            "toeplitz cholesky",
            format!("{n}-point stationary covariance is not positive definite even with jitter {jitter:e}"),
        )),
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
