//! Randomized sparse low-rank approximation of the unfolded matrix.
//!
//! Subspace iteration against the block-sparse X: draw a Gaussian test matrix
//! R, orthonormalize B = X R, refine it `power_iters` times with
//! B = X (X^T Q), then form C = Q^T X and evaluate Y = Q C only on the
//! support. When N < T*C the same steps run on X^T so that every QR is on the
//! shorter dimension.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};
use crate::tensor::{BlockSparseMatrix, CandidateSets, LowRankModel};

pub const DEFAULT_POWER_ITERS: usize = 8;

/// Which side of X the subspace iteration runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Use X^T when N < T*C, X otherwise.
    #[default]
    Auto,
    /// Always iterate on X (Q is N x r).
    Rows,
    /// Always iterate on X^T (Q is T*C x r).
    Columns,
}

impl Orientation {
    pub fn transposed_for(self, n_users: usize, n_cols: usize) -> bool {
        match self {
            Orientation::Auto => n_users < n_cols,
            Orientation::Rows => false,
            Orientation::Columns => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterConfig {
    pub rank: usize,
    pub power_iters: usize,
    pub seed: u64,
    /// Forces order-fixed reductions in the transposed product.
    pub deterministic: bool,
    pub orientation: Orientation,
}

impl PowerIterConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        PowerIterConfig {
            rank,
            power_iters: DEFAULT_POWER_ITERS,
            seed,
            deterministic: false,
            orientation: Orientation::Auto,
        }
    }

    pub fn validate(&self, n_users: usize, n_cols: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(NutfError::InvalidInput("rank must be at least 1".into()));
        }
        let limit = n_users.min(n_cols);
        if self.rank > limit {
            return Err(NutfError::RankTooLarge {
                rank: self.rank,
                limit,
            });
        }
        Ok(())
    }
}

/// Wall time spent in each kernel of one approximation, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelTimings {
    pub spmm: f64,
    pub spmm_t: f64,
    pub qr: f64,
    pub materialize: f64,
}

impl std::ops::AddAssign for KernelTimings {
    fn add_assign(&mut self, rhs: Self) {
        self.spmm += rhs.spmm;
        self.spmm_t += rhs.spmm_t;
        self.qr += rhs.qr;
        self.materialize += rhs.materialize;
    }
}

/// Result of [`sparse_lowrank_approx`].
#[derive(Debug, Clone)]
pub struct LowRankApprox {
    pub model: LowRankModel,
    /// Y evaluated on the support of X, aligned with X's values.
    pub support_values: Vec<f64>,
    pub timings: KernelTimings,
}

/// SplitMix64 finalizer; derives independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal matrix whose row `i` depends only on `(seed, i)`, so the
/// draw is identical for any thread count.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    if cols == 0 {
        return out;
    }
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        });
    out
}

/// X D for D of shape (T*C) x p. Cost O(|Omega| p).
pub fn spmm(x: &BlockSparseMatrix, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let dims = x.dims();
    if dense.nrows() != dims.n_cols() {
        return Err(NutfError::DimensionMismatch(format!(
            "spmm: X has {} columns, dense operand has {} rows",
            dims.n_cols(),
            dense.nrows()
        )));
    }
    let p = dense.ncols();
    let dense = dense.as_standard_layout();
    let d = dense.as_slice().expect("standard layout");
    let mut out = Array2::zeros((dims.n_users, p));
    if p == 0 {
        return Ok(out);
    }
    let support = x.support();
    let cols = support.entry_columns();
    let values = x.values();
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(i, row)| {
            for e in support.user_entry_range(i) {
                let v = values[e];
                let src = &d[cols[e] * p..(cols[e] + 1) * p];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        });
    Ok(out)
}

/// X^T D for D of shape N x p, gathering through the column index of the
/// support. Each output row is summed in a fixed order.
pub fn spmm_t(x: &BlockSparseMatrix, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    spmm_t_with(x, dense, true)
}

/// X^T D. With `deterministic == false` the product is scattered row by row
/// into per-thread accumulators, which skips building the column index but
/// lets the summation order depend on the thread schedule.
pub fn spmm_t_with(
    x: &BlockSparseMatrix,
    dense: ArrayView2<'_, f64>,
    deterministic: bool,
) -> Result<Array2<f64>> {
    let dims = x.dims();
    if dense.nrows() != dims.n_users {
        return Err(NutfError::DimensionMismatch(format!(
            "spmm_t: X has {} rows, dense operand has {} rows",
            dims.n_users,
            dense.nrows()
        )));
    }
    let p = dense.ncols();
    let dense = dense.as_standard_layout();
    let d = dense.as_slice().expect("standard layout");
    let n_cols = dims.n_cols();
    if p == 0 {
        return Ok(Array2::zeros((n_cols, 0)));
    }
    let support = x.support();
    let values = x.values();

    if deterministic {
        let idx = support.column_index();
        let mut out = Array2::zeros((n_cols, p));
        out.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(col, row)| {
                for k in idx.col_ptr[col]..idx.col_ptr[col + 1] {
                    let v = values[idx.entries[k]];
                    let src = &d[idx.rows[k] * p..(idx.rows[k] + 1) * p];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            });
        return Ok(out);
    }

    let cols = support.entry_columns();
    let acc = (0..dims.n_users)
        .into_par_iter()
        .fold(
            || vec![0.0; n_cols * p],
            |mut acc, i| {
                let src = &d[i * p..(i + 1) * p];
                for e in support.user_entry_range(i) {
                    let v = values[e];
                    let dst = &mut acc[cols[e] * p..(cols[e] + 1) * p];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; n_cols * p],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(Array2::from_shape_vec((n_cols, p), acc).expect("shape matches"))
}

/// Reduced QR: an n x r matrix with orthonormal columns spanning range(b).
pub fn reduced_qr(b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    reduced_qr_seeded(b, 0)
}

/// Householder reduced QR returning the explicit Q factor.
///
/// A column whose remaining norm (after removing the span of the preceding
/// columns) falls below `1e-10` of the largest input column norm is replaced
/// by a Gaussian vector drawn from `seed` in the orthogonal complement of the
/// preceding columns, so Q always has r orthonormal columns. Each column is
/// then signed so that its first entry of largest magnitude is positive.
pub fn reduced_qr_seeded(b: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>> {
    let (n, r) = b.dim();
    if n < r {
        return Err(NutfError::DimensionMismatch(format!(
            "reduced QR needs at least as many rows as columns (got {n}x{r})"
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(NutfError::NonFinite("QR input".into()));
    }
    // Column-major working copy; each column is updated independently.
    let mut cols: Vec<Vec<f64>> = (0..r).map(|j| b.column(j).to_vec()).collect();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let tol = 1e-10 * scale;

    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(r);
    for j in 0..r {
        let (head, tail) = cols.split_at_mut(j + 1);
        let col = &mut head[j];
        let mut alpha = norm(&col[j..]);
        if alpha <= tol || alpha == 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, j as u64));
            for v in col[j..].iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            alpha = norm(&col[j..]);
        }
        // v = x + sign(x0) ||x|| e0, scaled so that H = I - tau v v^T.
        let mut v = col[j..].to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let tau = if vv > 0.0 { 2.0 / vv } else { 0.0 };
        tail.par_iter_mut().for_each(|c| apply_reflector(&v, tau, &mut c[j..]));
        reflectors.push((v, tau));
    }

    // Q = H_0 H_1 ... H_{r-1} [I_r; 0]
    let mut q_cols: Vec<Vec<f64>> = (0..r)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, (v, tau)) in reflectors.iter().enumerate().rev() {
        q_cols[j..]
            .par_iter_mut()
            .for_each(|c| apply_reflector(v, *tau, &mut c[j..]));
    }

    let mut q = Array2::zeros((n, r));
    for (j, mut col) in q_cols.into_iter().enumerate() {
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, v) in col.into_iter().enumerate() {
            q[[i, j]] = v;
        }
    }
    Ok(q)
}

fn apply_reflector(v: &[f64], tau: f64, x: &mut [f64]) {
    let w: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() * tau;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= w * vi;
    }
}

fn norm(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large entries.
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

/// Max |Q^T Q - I| over all entries.
pub fn orthonormality_error(q: ArrayView2<'_, f64>) -> f64 {
    let gram = q.t().dot(&q);
    let mut worst = 0.0f64;
    for ((i, j), v) in gram.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// Evaluates `row_factors[i] . col_factors[col]` for every support entry.
/// `row_factors` is N x r and `col_factors` is (T*C) x r.
pub(crate) fn support_product(
    support: &CandidateSets,
    row_factors: ArrayView2<'_, f64>,
    col_factors: ArrayView2<'_, f64>,
) -> Vec<f64> {
    let r = row_factors.ncols();
    debug_assert_eq!(col_factors.ncols(), r);
    let mut out = vec![0.0; support.total_size()];
    if r == 0 {
        return out;
    }
    let rf = row_factors.as_standard_layout();
    let cf = col_factors.as_standard_layout();
    let rf = rf.as_slice().expect("standard layout");
    let cf = cf.as_slice().expect("standard layout");
    let cols = support.entry_columns();
    let offsets: Vec<usize> = (0..support.dims().n_users)
        .map(|u| support.user_entry_range(u).start)
        .collect();
    support
        .split_by_user(&mut out)
        .into_par_iter()
        .enumerate()
        .for_each(|(i, dst)| {
            let a = &rf[i * r..(i + 1) * r];
            let base = offsets[i];
            for (k, o) in dst.iter_mut().enumerate() {
                let col = cols[base + k];
                let b = &cf[col * r..(col + 1) * r];
                *o = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        });
    out
}

/// Rank-r approximation of X restricted to its support.
pub fn sparse_lowrank_approx(x: &BlockSparseMatrix, cfg: &PowerIterConfig) -> Result<LowRankApprox> {
    let dims = *x.dims();
    cfg.validate(dims.n_users, dims.n_cols())?;
    let transposed = cfg.orientation.transposed_for(dims.n_users, dims.n_cols());
    let mut timings = KernelTimings::default();

    // A = X (rows) or X^T (columns); fwd(D) = A D, bwd(D) = A^T D.
    let fwd = |d: ArrayView2<'_, f64>, t: &mut KernelTimings| -> Result<Array2<f64>> {
        let start = Instant::now();
        if transposed {
            let out = spmm_t_with(x, d, cfg.deterministic);
            t.spmm_t += start.elapsed().as_secs_f64();
            out
        } else {
            let out = spmm(x, d);
            t.spmm += start.elapsed().as_secs_f64();
            out
        }
    };
    let bwd = |d: ArrayView2<'_, f64>, t: &mut KernelTimings| -> Result<Array2<f64>> {
        let start = Instant::now();
        if transposed {
            let out = spmm(x, d);
            t.spmm += start.elapsed().as_secs_f64();
            out
        } else {
            let out = spmm_t_with(x, d, cfg.deterministic);
            t.spmm_t += start.elapsed().as_secs_f64();
            out
        }
    };
    let qr = |b: &Array2<f64>, stream: u64, t: &mut KernelTimings| -> Result<Array2<f64>> {
        let start = Instant::now();
        let q = reduced_qr_seeded(b.view(), mix_seed(cfg.seed, stream));
        t.qr += start.elapsed().as_secs_f64();
        q
    };

    let inner_dim = if transposed { dims.n_users } else { dims.n_cols() };
    let r_mat = gaussian_matrix(inner_dim, cfg.rank, mix_seed(cfg.seed, 0));
    let b = fwd(r_mat.view(), &mut timings)?;
    let mut q = qr(&b, 1, &mut timings)?;
    for t in 0..cfg.power_iters {
        let inner = bwd(q.view(), &mut timings)?;
        let b = fwd(inner.view(), &mut timings)?;
        q = qr(&b, 2 + t as u64, &mut timings)?;
    }
    // C^T = A^T Q
    let ct = bwd(q.view(), &mut timings)?;
    if ct.iter().any(|v| !v.is_finite()) {
        return Err(NutfError::NonFinite("coefficient matrix".into()));
    }

    let start = Instant::now();
    let support_values = if transposed {
        support_product(x.support(), ct.view(), q.view())
    } else {
        support_product(x.support(), q.view(), ct.view())
    };
    timings.materialize += start.elapsed().as_secs_f64();

    let c = ct.t().as_standard_layout().into_owned();
    let model = LowRankModel::new(dims, q, c, transposed)?;
    Ok(LowRankApprox {
        model,
        support_values,
        timings,
    })
}
