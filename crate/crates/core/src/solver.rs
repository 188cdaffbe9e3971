//! Alternating minimization of ||X - Y||_F^2 over rank-r Y and
//! negative-unlabeled-feasible X.
//!
//! Each outer iteration replaces Y with a randomized rank-r approximation of
//! the current X, then replaces X with the blockwise simplex projection of Y
//! on the support. Both half-steps minimize the shared objective (the first
//! approximately), and X is feasible after every iteration.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};
use crate::linalg::{self, KernelTimings, Orientation, PowerIterConfig};
use crate::simplex;
use crate::tensor::{frobenius_gap_with, BlockSparseMatrix, CandidateSets, LowRankModel};

/// Largest N*T*C accepted by [`dense_reference_fit`].
pub const DENSE_REFERENCE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rank: usize,
    pub outer_iters: usize,
    pub power_iters: usize,
    /// Stop once the relative change of the objective drops below this.
    pub tol: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub orientation: Orientation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: 20,
            outer_iters: 100,
            power_iters: linalg::DEFAULT_POWER_ITERS,
            tol: 1e-6,
            seed: 0,
            deterministic: false,
            orientation: Orientation::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(NutfError::InvalidInput("rank must be at least 1".into()));
        }
        if self.outer_iters == 0 {
            return Err(NutfError::InvalidInput("outer_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(NutfError::InvalidInput(format!("tol must be >= 0 (got {})", self.tol)));
        }
        Ok(())
    }

    /// Subspace-iteration settings for outer iteration `iter`; the Gaussian
    /// test matrix is re-drawn from `seed ^ iter`.
    pub fn power_config(&self, iter: usize) -> PowerIterConfig {
        PowerIterConfig {
            rank: self.rank,
            power_iters: self.power_iters,
            seed: self.seed ^ iter as u64,
            deterministic: self.deterministic,
            orientation: self.orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// ||X - Y||_F^2 after the X-update.
    pub objective: f64,
    pub seconds: f64,
    /// ||X_new - X_old||_F
    pub x_delta: f64,
    #[serde(skip)]
    pub kernels: KernelTimings,
    #[serde(skip)]
    pub x_update_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    /// True when the run stopped on the tolerance rather than the iteration cap.
    pub converged: bool,
}

impl SolverTrace {
    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// One JSON object per iteration: `iter`, `objective`, `seconds`, `x_delta`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn push_and_check(&mut self, rec: IterationRecord, tol: f64) -> bool {
        let prev = self.records.last().map(|r| r.objective);
        let objective = rec.objective;
        self.records.push(rec);
        match prev {
            Some(p) => {
                let change = (p - objective).abs() / p.abs().max(f64::MIN_POSITIVE);
                let done = change < tol || (p == 0.0 && objective == 0.0 && tol > 0.0);
                self.converged = done;
                done
            }
            None => false,
        }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub x: BlockSparseMatrix,
    pub model: LowRankModel,
    pub trace: SolverTrace,
}

/// Uniform initialization: every present block becomes 1/|Omega_ij|.
pub fn init_x(omega: Arc<CandidateSets>) -> BlockSparseMatrix {
    let mut values = vec![0.0; omega.total_size()];
    for block in omega.blocks() {
        let w = 1.0 / block.len() as f64;
        values[block.range()].iter_mut().for_each(|v| *v = w);
    }
    BlockSparseMatrix::from_parts_unchecked(omega, values)
}

/// Projects every block of `y_on_support` onto the probability simplex.
pub fn update_x(y_on_support: &[f64], omega: Arc<CandidateSets>) -> Result<BlockSparseMatrix> {
    if y_on_support.len() != omega.total_size() {
        return Err(NutfError::DimensionMismatch(format!(
            "{} Y values for a support of size {}",
            y_on_support.len(),
            omega.total_size()
        )));
    }
    if let Some(v) = y_on_support.iter().find(|v| !v.is_finite()) {
        return Err(NutfError::NonFinite(format!("Y value {v}")));
    }
    let mut values = vec![0.0; omega.total_size()];
    omega
        .split_by_user(&mut values)
        .into_par_iter()
        .enumerate()
        .for_each_init(Vec::new, |scratch, (user, dst)| {
            let base = omega.user_entry_range(user).start;
            for block in omega.user_blocks(user) {
                let r = block.range();
                let local = r.start - base..r.end - base;
                simplex::project_into(&y_on_support[r], &mut dst[local], scratch);
            }
        });
    Ok(BlockSparseMatrix::from_parts_unchecked(omega, values))
}

/// Runs the alternating minimization.
pub fn fit(omega: impl Into<Arc<CandidateSets>>, cfg: &SolverConfig) -> Result<FitResult> {
    fit_with_observer(omega, cfg, |_, _, _| {})
}

/// [`fit`], calling `observer(iter, &x, &model)` after every outer iteration.
pub fn fit_with_observer<F>(
    omega: impl Into<Arc<CandidateSets>>,
    cfg: &SolverConfig,
    mut observer: F,
) -> Result<FitResult>
where
    F: FnMut(usize, &BlockSparseMatrix, &LowRankModel),
{
    cfg.validate()?;
    let omega = omega.into();
    let dims = *omega.dims();
    cfg.power_config(0).validate(dims.n_users, dims.n_cols())?;

    let mut x = init_x(omega.clone());
    let mut trace = SolverTrace::default();
    let mut model = LowRankModel::zero(dims);
    for iter in 0..cfg.outer_iters {
        let start = Instant::now();
        let approx = linalg::sparse_lowrank_approx(&x, &cfg.power_config(iter))?;
        let x_start = Instant::now();
        let next = update_x(&approx.support_values, omega.clone())?;
        let x_update_seconds = x_start.elapsed().as_secs_f64();
        let objective = frobenius_gap_with(&next, &approx.model, &approx.support_values);
        if !objective.is_finite() {
            return Err(NutfError::NonFinite(format!("objective at iteration {iter}")));
        }
        let x_delta = diff_norm(x.values(), next.values());
        x = next;
        model = approx.model;
        observer(iter, &x, &model);
        let rec = IterationRecord {
            iter,
            objective,
            seconds: start.elapsed().as_secs_f64(),
            x_delta,
            kernels: approx.timings,
            x_update_seconds,
        };
        if trace.push_and_check(rec, cfg.tol) {
            break;
        }
    }
    Ok(FitResult { x, model, trace })
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Output of [`dense_reference_fit`]: dense N x T*C matrices.
#[derive(Debug, Clone)]
pub struct DenseFit {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub trace: SolverTrace,
}

/// The same alternation with an exact truncated SVD in place of the
/// randomized approximation. Test oracle for small instances.
pub fn dense_reference_fit(omega: &CandidateSets, cfg: &SolverConfig) -> Result<DenseFit> {
    cfg.validate()?;
    let dims = *omega.dims();
    if dims.cells() > DENSE_REFERENCE_LIMIT {
        return Err(NutfError::InstanceTooLarge {
            cells: dims.cells(),
            limit: DENSE_REFERENCE_LIMIT,
        });
    }
    if cfg.rank > dims.max_rank() {
        return Err(NutfError::RankTooLarge {
            rank: cfg.rank,
            limit: dims.max_rank(),
        });
    }
    let (n, m) = (dims.n_users, dims.n_cols());
    let c = dims.n_categories;

    let mut x = Array2::<f64>::zeros((n, m));
    for block in omega.blocks() {
        for &k in block.cats {
            x[[block.user, block.slot * c + k]] = 1.0 / block.len() as f64;
        }
    }
    let mut y = Array2::<f64>::zeros((n, m));
    let mut trace = SolverTrace::default();
    for iter in 0..cfg.outer_iters {
        let start = Instant::now();
        y = truncated_svd(&x, cfg.rank)?;

        let mut next = Array2::<f64>::zeros((n, m));
        for block in omega.blocks() {
            let v: Vec<f64> = block.cats.iter().map(|&k| y[[block.user, block.slot * c + k]]).collect();
            let u = simplex::project_simplex(&v)?;
            for (&k, &p) in block.cats.iter().zip(u.values()) {
                next[[block.user, block.slot * c + k]] = p;
            }
        }
        let objective = (&next - &y).iter().map(|d| d * d).sum::<f64>();
        let x_delta = (&next - &x).iter().map(|d| d * d).sum::<f64>().sqrt();
        x = next;
        let rec = IterationRecord {
            iter,
            objective,
            seconds: start.elapsed().as_secs_f64(),
            x_delta,
            kernels: KernelTimings::default(),
            x_update_seconds: 0.0,
        };
        if trace.push_and_check(rec, cfg.tol) {
            break;
        }
    }
    Ok(DenseFit { x, y, trace })
}

/// Best rank-r approximation of `a`, via one-sided Jacobi SVD.
///
/// Columns of the tall orientation are rotated pairwise until mutually
/// orthogonal; then A V has columns sigma_j u_j and the truncation keeps the
/// r longest of them: Y = (A V)_r V_r^T.
fn truncated_svd(a: &Array2<f64>, rank: usize) -> Result<Array2<f64>> {
    if a.nrows() < a.ncols() {
        let t = a.t().as_standard_layout().into_owned();
        return Ok(truncated_svd(&t, rank)?.t().as_standard_layout().into_owned());
    }
    let (rows, n) = a.dim();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns shorter than this are numerically zero and never rotated.
    let floor = (1e-15 * a.iter().map(|x| x * x).sum::<f64>().sqrt()).powi(2);
    const MAX_SWEEPS: usize = 100;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if alpha <= floor || beta <= floor || gamma.abs() <= 1e-14 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], cs, sn);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], cs, sn);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NutfError::NonFinite("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().map(|x| x * x).sum::<f64>()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Array2::<f64>::zeros((rows, n));
    for &(j, _) in order.iter().take(rank) {
        for i in 0..rows {
            let wi = w[j][i];
            if wi != 0.0 {
                for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                    *o += wi * v[j][k];
                }
            }
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(NutfError::NonFinite("truncated SVD".into()));
    }
    Ok(out)
}

fn rotate(p: &mut [f64], q: &mut [f64], cs: f64, sn: f64) {
    for (a, b) in p.iter_mut().zip(q.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = cs * x - sn * y;
        *b = sn * x + cs * y;
    }
}

/// Scores of the candidate categories of (user, slot), best first.
///
/// Scores are Y[i, col(j, k)]; ties go to the smaller category index.
/// Without `restrict` all C categories are scored.
pub fn rank_categories(
    model: &LowRankModel,
    user: usize,
    slot: usize,
    restrict: Option<&[usize]>,
) -> Result<Vec<(usize, f64)>> {
    let dims = model.dims();
    if user >= dims.n_users {
        return Err(NutfError::IndexOutOfRange {
            what: "user",
            index: user,
            limit: dims.n_users,
        });
    }
    if slot >= dims.n_slots {
        return Err(NutfError::IndexOutOfRange {
            what: "slot",
            index: slot,
            limit: dims.n_slots,
        });
    }
    let base = slot * dims.n_categories;
    let mut scored: Vec<(usize, f64)> = match restrict {
        Some(cats) => cats
            .iter()
            .map(|&k| {
                if k >= dims.n_categories {
                    Err(NutfError::IndexOutOfRange {
                        what: "category",
                        index: k,
                        limit: dims.n_categories,
                    })
                } else {
                    Ok((k, model.value_unchecked(user, base + k)))
                }
            })
            .collect::<Result<_>>()?,
        None => (0..dims.n_categories)
            .map(|k| (k, model.value_unchecked(user, base + k)))
            .collect(),
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.dedup_by_key(|s| s.0);
    Ok(scored)
}

/// The `k_top` highest-scoring categories of (user, slot), best first.
pub fn predict_topk(
    model: &LowRankModel,
    user: usize,
    slot: usize,
    k_top: usize,
    restrict: Option<&[usize]>,
) -> Result<Vec<usize>> {
    if k_top == 0 {
        return Err(NutfError::InvalidInput("k must be at least 1".into()));
    }
    let scored = rank_categories(model, user, slot, restrict)?;
    if k_top > scored.len() {
        return Err(NutfError::InvalidInput(format!(
            "k = {k_top} exceeds the {} scored categories",
            scored.len()
        )));
    }
    Ok(scored.into_iter().take(k_top).map(|(k, _)| k).collect())
}
