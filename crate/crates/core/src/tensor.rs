//! Problem dimensions, the candidate-set support, the block-sparse unfolded
//! probability matrix, and the low-rank model.
//!
//! The N x T x C probability tensor is only ever handled through its mode-1
//! unfolding: an N x (T*C) matrix whose column for slot `j` and category `k`
//! is `j * C + k`. Row `i` of the unfolding holds one block per slot that has
//! a candidate set; each block is a probability vector over that set.

use std::sync::{Arc, OnceLock};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};

#[cfg(not(target_pointer_width = "64"))]
compile_error!("nutf requires 64-bit indices (usize must be 64 bits wide)");

/// Tolerance on block sums after an X-update.
pub const BLOCK_SUM_TOL: f64 = 1e-9;

/// Number of users (N), time slots (T) and location categories (C).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n_users: usize,
    pub n_slots: usize,
    pub n_categories: usize,
}

impl ProblemDims {
    pub fn new(n_users: usize, n_slots: usize, n_categories: usize) -> Result<Self> {
        let dims = ProblemDims {
            n_users,
            n_slots,
            n_categories,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_slots == 0 || self.n_categories == 0 {
            return Err(NutfError::InvalidDims(format!(
                "all of N, T, C must be positive (got N={}, T={}, C={})",
                self.n_users, self.n_slots, self.n_categories
            )));
        }
        if self.n_slots.checked_mul(self.n_categories).is_none() {
            return Err(NutfError::InvalidDims(format!(
                "T*C overflows the index type (T={}, C={})",
                self.n_slots, self.n_categories
            )));
        }
        Ok(())
    }

    /// Column count of the unfolded matrix, T*C.
    pub fn n_cols(&self) -> usize {
        self.n_slots * self.n_categories
    }

    /// Largest admissible rank, min(N, T*C).
    pub fn max_rank(&self) -> usize {
        self.n_users.min(self.n_cols())
    }

    /// Cell count N*T*C, saturating.
    pub fn cells(&self) -> usize {
        self.n_users.saturating_mul(self.n_cols())
    }
}

/// Unfolded column of slot `j`, category `k`: `j * C + k`.
pub fn col_index(j: usize, k: usize, dims: &ProblemDims) -> Result<usize> {
    if j >= dims.n_slots {
        return Err(NutfError::IndexOutOfRange {
            what: "slot",
            index: j,
            limit: dims.n_slots,
        });
    }
    if k >= dims.n_categories {
        return Err(NutfError::IndexOutOfRange {
            what: "category",
            index: k,
            limit: dims.n_categories,
        });
    }
    Ok(j * dims.n_categories + k)
}

/// Inverse of [`col_index`]: recovers `(slot, category)`.
pub fn split_col(col: usize, dims: &ProblemDims) -> Result<(usize, usize)> {
    if col >= dims.n_cols() {
        return Err(NutfError::IndexOutOfRange {
            what: "column",
            index: col,
            limit: dims.n_cols(),
        });
    }
    Ok((col / dims.n_categories, col % dims.n_categories))
}

/// One present (user, slot) pair and its candidate categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block<'a> {
    /// Position of this block in storage order (row-major by user, then slot).
    pub index: usize,
    pub user: usize,
    pub slot: usize,
    /// Offset of the block's first entry in the flat value array.
    pub offset: usize,
    pub cats: &'a [usize],
}

impl Block<'_> {
    pub fn len(&self) -> usize {
        self.cats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cats.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.cats.len()
    }
}

/// Column-major view of the support: for every unfolded column, the rows
/// holding an entry there and the position of that entry in the value array.
#[derive(Debug, Clone)]
pub(crate) struct ColumnIndex {
    pub col_ptr: Vec<usize>,
    pub rows: Vec<usize>,
    pub entries: Vec<usize>,
}

/// The candidate-set structure: for each present (user, slot) pair, the sorted
/// set of categories that could have been visited.
///
/// Absent pairs mean "no location update"; stored sets are never empty.
/// Blocks are stored row-major (by user, then slot) so that each user's
/// blocks and entries occupy a contiguous range.
#[derive(Debug)]
pub struct CandidateSets {
    dims: ProblemDims,
    user_ptr: Vec<usize>,
    block_slot: Vec<usize>,
    block_ptr: Vec<usize>,
    cats: Vec<usize>,
    cols: Vec<usize>,
    columns: OnceLock<ColumnIndex>,
}

impl Clone for CandidateSets {
    fn clone(&self) -> Self {
        CandidateSets {
            dims: self.dims,
            user_ptr: self.user_ptr.clone(),
            block_slot: self.block_slot.clone(),
            block_ptr: self.block_ptr.clone(),
            cats: self.cats.clone(),
            cols: self.cols.clone(),
            columns: OnceLock::new(),
        }
    }
}

impl PartialEq for CandidateSets {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.user_ptr == other.user_ptr
            && self.block_slot == other.block_slot
            && self.block_ptr == other.block_ptr
            && self.cats == other.cats
    }
}

impl Eq for CandidateSets {}

impl CandidateSets {
    /// Builds the support from `(user, slot, categories)` triples in any order.
    ///
    /// Category lists are sorted and deduplicated; empty lists are dropped.
    /// A repeated (user, slot) pair is rejected.
    pub fn from_blocks<I>(dims: ProblemDims, blocks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Vec<usize>)>,
    {
        dims.validate()?;
        let mut raw: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for (user, slot, mut cats) in blocks {
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
            if let Some(&bad) = cats.iter().find(|&&k| k >= dims.n_categories) {
                return Err(NutfError::IndexOutOfRange {
                    what: "category",
                    index: bad,
                    limit: dims.n_categories,
                });
            }
            if cats.is_empty() {
                continue;
            }
            cats.sort_unstable();
            cats.dedup();
            raw.push((user, slot, cats));
        }
        raw.sort_unstable_by_key(|&(u, s, _)| (u, s));
        if let Some(w) = raw.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(NutfError::InvalidInput(format!(
                "duplicate candidate set for user {} slot {}",
                w[0].0, w[0].1
            )));
        }

        let mut user_ptr = vec![0usize; dims.n_users + 1];
        let mut block_slot = Vec::with_capacity(raw.len());
        let mut block_ptr = Vec::with_capacity(raw.len() + 1);
        let total: usize = raw.iter().map(|b| b.2.len()).sum();
        let mut cats = Vec::with_capacity(total);
        let mut cols = Vec::with_capacity(total);
        block_ptr.push(0);
        for (user, slot, set) in raw {
            user_ptr[user + 1] += 1;
            block_slot.push(slot);
            cats.extend_from_slice(&set);
            cols.extend(set.iter().map(|&k| slot * dims.n_categories + k));
            block_ptr.push(cats.len());
        }
        for u in 0..dims.n_users {
            user_ptr[u + 1] += user_ptr[u];
        }
        Ok(CandidateSets {
            dims,
            user_ptr,
            block_slot,
            block_ptr,
            cats,
            cols,
            columns: OnceLock::new(),
        })
    }

    /// An empty support (no location updates at all).
    pub fn empty(dims: ProblemDims) -> Result<Self> {
        Self::from_blocks(dims, std::iter::empty())
    }

    pub fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    /// Number of present (user, slot) pairs.
    pub fn n_blocks(&self) -> usize {
        self.block_slot.len()
    }

    /// |Omega|, the total number of candidate entries.
    pub fn total_size(&self) -> usize {
        self.cats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cats.is_empty()
    }

    pub fn block(&self, b: usize) -> Block<'_> {
        let user = self.user_ptr.partition_point(|&p| p <= b) - 1;
        self.block_for(user, b)
    }

    fn block_for(&self, user: usize, b: usize) -> Block<'_> {
        let (lo, hi) = (self.block_ptr[b], self.block_ptr[b + 1]);
        Block {
            index: b,
            user,
            slot: self.block_slot[b],
            offset: lo,
            cats: &self.cats[lo..hi],
        }
    }

    /// All blocks in storage order.
    pub fn blocks(&self) -> impl Iterator<Item = Block<'_>> + '_ {
        (0..self.dims.n_users).flat_map(move |u| self.user_blocks(u))
    }

    /// Blocks of user `i`, in ascending slot order.
    pub fn user_blocks(&self, user: usize) -> impl Iterator<Item = Block<'_>> + '_ {
        (self.user_ptr[user]..self.user_ptr[user + 1]).map(move |b| self.block_for(user, b))
    }

    /// Range of block indices owned by user `i`.
    pub fn user_block_range(&self, user: usize) -> std::ops::Range<usize> {
        self.user_ptr[user]..self.user_ptr[user + 1]
    }

    /// Range of flat entry positions owned by user `i`.
    pub fn user_entry_range(&self, user: usize) -> std::ops::Range<usize> {
        self.block_ptr[self.user_ptr[user]]..self.block_ptr[self.user_ptr[user + 1]]
    }

    /// Candidate set of (user, slot), if present.
    pub fn get(&self, user: usize, slot: usize) -> Option<&[usize]> {
        self.find(user, slot).map(|b| b.cats)
    }

    pub fn find(&self, user: usize, slot: usize) -> Option<Block<'_>> {
        if user >= self.dims.n_users {
            return None;
        }
        let range = self.user_block_range(user);
        let slots = &self.block_slot[range.clone()];
        slots
            .binary_search(&slot)
            .ok()
            .map(|pos| self.block_for(user, range.start + pos))
    }

    /// Category of every flat entry.
    pub fn categories(&self) -> &[usize] {
        &self.cats
    }

    /// Splits `values` (aligned with the flat entries) into one mutable slice
    /// per user. The slices are disjoint, so rows can be processed in parallel.
    pub fn split_by_user<'v, T>(&self, values: &'v mut [T]) -> Vec<&'v mut [T]> {
        assert_eq!(values.len(), self.total_size());
        let mut out = Vec::with_capacity(self.dims.n_users);
        let mut rest = values;
        for u in 0..self.dims.n_users {
            let len = self.user_entry_range(u).len();
            let (head, tail) = rest.split_at_mut(len);
            out.push(head);
            rest = tail;
        }
        out
    }

    /// Unfolded column of every flat entry, in storage order.
    pub fn entry_columns(&self) -> &[usize] {
        &self.cols
    }

    pub(crate) fn column_index(&self) -> &ColumnIndex {
        self.columns.get_or_init(|| self.build_column_index())
    }

    fn build_column_index(&self) -> ColumnIndex {
        let n_cols = self.dims.n_cols();
        let cols = self.entry_columns();
        let mut col_ptr = vec![0usize; n_cols + 1];
        for &col in cols {
            col_ptr[col + 1] += 1;
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut rows = vec![0usize; cols.len()];
        let mut entries = vec![0usize; cols.len()];
        for u in 0..self.dims.n_users {
            for e in self.user_entry_range(u) {
                let slot = &mut next[cols[e]];
                rows[*slot] = u;
                entries[*slot] = e;
                *slot += 1;
            }
        }
        ColumnIndex {
            col_ptr,
            rows,
            entries,
        }
    }

    /// Builds a new support in which every listed (user, slot) pair carries
    /// the given set (inserted, or replacing an existing one).
    pub fn with_replaced<I>(&self, replacements: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Vec<usize>)>,
    {
        let mut map: std::collections::BTreeMap<(usize, usize), Vec<usize>> = self
            .blocks()
            .map(|b| ((b.user, b.slot), b.cats.to_vec()))
            .collect();
        for (u, s, cats) in replacements {
            map.insert((u, s), cats);
        }
        Self::from_blocks(self.dims, map.into_iter().map(|((u, s), c)| (u, s, c)))
    }
}

/// The unfolded N x (T*C) matrix X, nonzero only on the candidate support.
///
/// `values[e]` belongs to the `e`-th flat entry of the support. Entries off the
/// support are zero by representation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    support: Arc<CandidateSets>,
    values: Vec<f64>,
}

impl BlockSparseMatrix {
    pub fn new(support: Arc<CandidateSets>, values: Vec<f64>) -> Result<Self> {
        if values.len() != support.total_size() {
            return Err(NutfError::DimensionMismatch(format!(
                "{} values for a support of size {}",
                values.len(),
                support.total_size()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(NutfError::NonFinite(format!("matrix value {v}")));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(NutfError::InvalidInput(format!("negative matrix value {v}")));
        }
        Ok(BlockSparseMatrix { support, values })
    }

    /// A matrix with arbitrary real values on the support. Used for the
    /// linear-algebra kernels, which do not need the probability invariants.
    pub fn from_raw(support: Arc<CandidateSets>, values: Vec<f64>) -> Result<Self> {
        if values.len() != support.total_size() {
            return Err(NutfError::DimensionMismatch(format!(
                "{} values for a support of size {}",
                values.len(),
                support.total_size()
            )));
        }
        Ok(BlockSparseMatrix { support, values })
    }

    pub(crate) fn from_parts_unchecked(support: Arc<CandidateSets>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), support.total_size());
        BlockSparseMatrix { support, values }
    }

    pub fn dims(&self) -> &ProblemDims {
        self.support.dims()
    }

    pub fn support(&self) -> &CandidateSets {
        &self.support
    }

    pub fn support_arc(&self) -> &Arc<CandidateSets> {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block_values(&self, block: &Block<'_>) -> &[f64] {
        &self.values[block.range()]
    }

    /// Entry X[i, col(j, k)]; zero off the support.
    pub fn get(&self, user: usize, slot: usize, category: usize) -> f64 {
        match self.support.find(user, slot) {
            Some(b) => match b.cats.binary_search(&category) {
                Ok(pos) => self.values[b.offset + pos],
                Err(_) => 0.0,
            },
            None => 0.0,
        }
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Dense copy of the unfolding (N x T*C). Only sensible for small instances.
    pub fn to_dense(&self) -> Array2<f64> {
        let dims = self.dims();
        let mut out = Array2::zeros((dims.n_users, dims.n_cols()));
        for block in self.support.blocks() {
            for (&k, &v) in block.cats.iter().zip(self.block_values(&block)) {
                out[[block.user, block.slot * dims.n_categories + k]] = v;
            }
        }
        out
    }

    /// Largest |sum - 1| over present blocks (0 for an empty support).
    pub fn max_block_sum_error(&self) -> f64 {
        self.support
            .blocks()
            .map(|b| (self.block_values(&b).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the negative-unlabeled constraints: non-negative values and
    /// block sums of one within [`BLOCK_SUM_TOL`]. Off-support entries are zero
    /// by construction.
    pub fn check_feasible(&self) -> Result<()> {
        if let Some(v) = self.values.iter().find(|&&v| v.is_nan() || v < 0.0) {
            return Err(NutfError::InvalidInput(format!("infeasible value {v}")));
        }
        let err = self.max_block_sum_error();
        if err > BLOCK_SUM_TOL {
            return Err(NutfError::InvalidInput(format!(
                "block sum deviates from 1 by {err:e}"
            )));
        }
        Ok(())
    }
}

/// Rank-r factorization Y = Q C of the unfolded matrix.
///
/// In the default orientation `q` is N x r and `c` is r x (T*C). When the
/// factorization was computed on the transpose (`transposed == true`), `q` is
/// (T*C) x r and `c` is r x N, so that Y^T = Q C.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    dims: ProblemDims,
    q: Array2<f64>,
    c: Array2<f64>,
    transposed: bool,
}

impl LowRankModel {
    pub fn new(dims: ProblemDims, q: Array2<f64>, c: Array2<f64>, transposed: bool) -> Result<Self> {
        dims.validate()?;
        let (q_rows, c_cols) = if transposed {
            (dims.n_cols(), dims.n_users)
        } else {
            (dims.n_users, dims.n_cols())
        };
        let rank = q.ncols();
        if q.nrows() != q_rows || c.nrows() != rank || c.ncols() != c_cols {
            return Err(NutfError::DimensionMismatch(format!(
                "factors {}x{} and {}x{} do not fit dims {:?} (transposed={transposed})",
                q.nrows(),
                q.ncols(),
                c.nrows(),
                c.ncols(),
                dims
            )));
        }
        if rank > dims.max_rank() {
            return Err(NutfError::RankTooLarge {
                rank,
                limit: dims.max_rank(),
            });
        }
        if q.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(NutfError::NonFinite("low-rank factor entry".into()));
        }
        Ok(LowRankModel {
            dims,
            q: q.as_standard_layout().into_owned(),
            c: c.as_standard_layout().into_owned(),
            transposed,
        })
    }

    /// The rank-0 model (Y = 0).
    pub fn zero(dims: ProblemDims) -> Self {
        let q_rows = dims.n_users;
        LowRankModel {
            dims,
            q: Array2::zeros((q_rows, 0)),
            c: Array2::zeros((0, dims.n_cols())),
            transposed: false,
        }
    }

    pub fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn transposed(&self) -> bool {
        self.transposed
    }

    pub fn q(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    pub fn c(&self) -> ArrayView2<'_, f64> {
        self.c.view()
    }

    /// Y[i, col], the inner product of the matching factor row and column.
    pub fn value(&self, user: usize, col: usize) -> Result<f64> {
        if user >= self.dims.n_users {
            return Err(NutfError::IndexOutOfRange {
                what: "user",
                index: user,
                limit: self.dims.n_users,
            });
        }
        if col >= self.dims.n_cols() {
            return Err(NutfError::IndexOutOfRange {
                what: "column",
                index: col,
                limit: self.dims.n_cols(),
            });
        }
        Ok(self.value_unchecked(user, col))
    }

    pub(crate) fn value_unchecked(&self, user: usize, col: usize) -> f64 {
        let (row, c_col) = if self.transposed { (col, user) } else { (user, col) };
        dot(self.q.row(row), self.c.column(c_col))
    }

    /// Y evaluated on every entry of `support`, in flat entry order.
    pub fn support_values(&self, support: &CandidateSets) -> Result<Vec<f64>> {
        if support.dims() != &self.dims {
            return Err(NutfError::DimensionMismatch(format!(
                "support dims {:?} vs model dims {:?}",
                support.dims(),
                self.dims
            )));
        }
        let ct = self.c.t().as_standard_layout().into_owned();
        let (row_factors, col_factors) = if self.transposed {
            (ct.view(), self.q.view())
        } else {
            (self.q.view(), ct.view())
        };
        Ok(crate::linalg::support_product(support, row_factors, col_factors))
    }

    /// Squared Frobenius norm of C; equals ||Y||_F^2 when Q is orthonormal.
    pub fn coeff_norm_sq(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum()
    }

    /// ||Y||_F^2 via the Gram form sum((Q^T Q) .* (C C^T)); equals
    /// [`Self::coeff_norm_sq`] when Q has orthonormal columns.
    pub fn norm_sq(&self) -> f64 {
        let qq = self.q.t().dot(&self.q);
        let cc = self.c.dot(&self.c.t());
        qq.iter().zip(cc.iter()).map(|(a, b)| a * b).sum()
    }

    /// Max |Q^T Q - I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        crate::linalg::orthonormality_error(self.q.view())
    }

    /// Dense N x T*C copy of Y. Only sensible for small instances.
    pub fn to_dense(&self) -> Array2<f64> {
        let prod = self.q.dot(&self.c);
        if self.transposed {
            prod.t().as_standard_layout().into_owned()
        } else {
            prod
        }
    }
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Exact squared Frobenius distance ||X - Y||_F^2 over the full N x T*C matrix.
///
/// The off-support part of Y is never formed:
/// ||X - Y||^2 = ||X_O - Y_O||^2 + ||Y||^2 - ||Y_O||^2, with ||Y||^2 from the
/// r x r Gram matrices (just ||C||^2 for orthonormal Q).
pub fn frobenius_gap(x: &BlockSparseMatrix, model: &LowRankModel) -> Result<f64> {
    let y = model.support_values(x.support())?;
    Ok(frobenius_gap_with(x, model, &y))
}

/// [`frobenius_gap`] with Y's support values already computed.
pub fn frobenius_gap_with(x: &BlockSparseMatrix, model: &LowRankModel, y_support: &[f64]) -> f64 {
    let support = x.support();
    let xv = x.values();
    let partial: Vec<(f64, f64)> = (0..support.dims().n_users)
        .into_par_iter()
        .map(|u| {
            let mut diff = 0.0;
            let mut y_sq = 0.0;
            for e in support.user_entry_range(u) {
                let d = xv[e] - y_support[e];
                diff += d * d;
                y_sq += y_support[e] * y_support[e];
            }
            (diff, y_sq)
        })
        .collect();
    let (diff, y_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), &(d, y)| (a + d, b + y));
    (diff + model.norm_sq() - y_sq).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dims(n: usize, t: usize, c: usize) -> ProblemDims {
        ProblemDims::new(n, t, c).unwrap()
    }

    #[test]
    fn col_index_examples() {
        assert_eq!(col_index(0, 0, &dims(1, 2, 42)).unwrap(), 0);
        assert_eq!(col_index(1, 0, &dims(1, 2, 42)).unwrap(), 42);
        assert_eq!(col_index(3, 7, &dims(1, 4, 10)).unwrap(), 37);
        assert!(col_index(4, 0, &dims(1, 4, 10)).is_err());
        assert!(col_index(0, 10, &dims(1, 4, 10)).is_err());
    }

    #[test]
    fn col_index_is_a_bijection() {
        let d = dims(1, 7, 5);
        let mut seen = vec![false; d.n_cols()];
        for j in 0..7 {
            for k in 0..5 {
                let col = col_index(j, k, &d).unwrap();
                assert!(!seen[col]);
                seen[col] = true;
                assert_eq!(split_col(col, &d).unwrap(), (j, k));
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(split_col(35, &d).is_err());
    }

    #[test]
    fn dims_reject_zero_and_overflow() {
        assert!(ProblemDims::new(0, 1, 1).is_err());
        assert!(ProblemDims::new(1, 0, 1).is_err());
        assert!(ProblemDims::new(1, 1, 0).is_err());
        assert!(ProblemDims::new(1, usize::MAX, 2).is_err());
    }

    #[test]
    fn candidate_sets_normalize_and_validate() {
        let d = dims(3, 4, 5);
        let omega = CandidateSets::from_blocks(
            d,
            vec![(2, 1, vec![4, 0, 4]), (0, 3, vec![1]), (1, 0, vec![]), (0, 0, vec![2, 3])],
        )
        .unwrap();
        assert_eq!(omega.n_blocks(), 3);
        assert_eq!(omega.total_size(), 5);
        assert_eq!(omega.get(2, 1), Some(&[0, 4][..]));
        assert_eq!(omega.get(1, 0), None);
        let order: Vec<_> = omega.blocks().map(|b| (b.user, b.slot)).collect();
        assert_eq!(order, vec![(0, 0), (0, 3), (2, 1)]);
        assert_eq!(omega.block(2).user, 2);

        assert!(CandidateSets::from_blocks(d, vec![(0, 0, vec![5])]).is_err());
        assert!(CandidateSets::from_blocks(d, vec![(3, 0, vec![0])]).is_err());
        assert!(CandidateSets::from_blocks(d, vec![(0, 4, vec![0])]).is_err());
        assert!(CandidateSets::from_blocks(d, vec![(0, 0, vec![0]), (0, 0, vec![1])]).is_err());
    }

    #[test]
    fn column_index_transposes_support() {
        let d = dims(3, 2, 2);
        let omega =
            CandidateSets::from_blocks(d, vec![(0, 0, vec![0, 1]), (2, 0, vec![1]), (1, 1, vec![0])])
                .unwrap();
        let idx = omega.column_index();
        let cols = omega.entry_columns();
        for col in 0..d.n_cols() {
            for p in idx.col_ptr[col]..idx.col_ptr[col + 1] {
                assert_eq!(cols[idx.entries[p]], col);
                assert!(omega.user_entry_range(idx.rows[p]).contains(&idx.entries[p]));
            }
        }
        assert_eq!(idx.col_ptr[d.n_cols()], omega.total_size());
    }

    #[test]
    fn model_value_examples() {
        let d = dims(4, 2, 3);
        let zero = LowRankModel::zero(d);
        assert_eq!(zero.value(3, 5).unwrap(), 0.0);

        let q = Array2::from_elem((4, 1), 1.0 / 2.0);
        let c = Array2::from_elem((1, 6), 1.0);
        let m = LowRankModel::new(d, q, c, false).unwrap();
        for i in 0..4 {
            for col in 0..6 {
                assert_eq!(m.value(i, col).unwrap(), 0.5);
            }
        }
        assert!(m.value(4, 0).is_err());
        assert!(m.value(0, 6).is_err());
    }

    #[test]
    fn model_rejects_bad_shapes() {
        let d = dims(4, 2, 3);
        assert!(LowRankModel::new(d, Array2::zeros((4, 2)), Array2::zeros((2, 5)), false).is_err());
        assert!(LowRankModel::new(d, Array2::zeros((6, 2)), Array2::zeros((2, 4)), true).is_ok());
        assert!(LowRankModel::new(d, Array2::zeros((4, 5)), Array2::zeros((5, 6)), false).is_err());
    }

    #[test]
    fn gap_of_zero_model_is_norm_of_x() {
        let d = dims(2, 2, 3);
        let omega = Arc::new(
            CandidateSets::from_blocks(d, vec![(0, 0, vec![1]), (0, 1, vec![2]), (1, 1, vec![0])])
                .unwrap(),
        );
        let x = BlockSparseMatrix::new(omega, vec![1.0, 1.0, 1.0]).unwrap();
        let gap = frobenius_gap(&x, &LowRankModel::zero(d)).unwrap();
        assert_eq!(gap, 3.0);
    }

    #[test]
    fn gap_of_exact_factorization_is_zero() {
        // One-hot X whose two rows are identical: rank 1.
        let d = dims(2, 1, 2);
        let omega = Arc::new(
            CandidateSets::from_blocks(d, vec![(0, 0, vec![1]), (1, 0, vec![1])]).unwrap(),
        );
        let x = BlockSparseMatrix::new(omega, vec![1.0, 1.0]).unwrap();
        let s = 0.5f64.sqrt();
        let q = array![[s], [s]];
        let c = array![[0.0, 2.0 * s]];
        let m = LowRankModel::new(d, q, c, false).unwrap();
        assert!(frobenius_gap(&x, &m).unwrap() < 1e-12);
    }

    #[test]
    fn block_sparse_rejects_bad_values() {
        let d = dims(1, 1, 2);
        let omega = Arc::new(CandidateSets::from_blocks(d, vec![(0, 0, vec![0, 1])]).unwrap());
        assert!(BlockSparseMatrix::new(omega.clone(), vec![1.0]).is_err());
        assert!(BlockSparseMatrix::new(omega.clone(), vec![-0.5, 1.5]).is_err());
        assert!(BlockSparseMatrix::new(omega.clone(), vec![f64::NAN, 1.0]).is_err());
        let x = BlockSparseMatrix::new(omega, vec![0.25, 0.75]).unwrap();
        assert_eq!(x.get(0, 0, 1), 0.75);
        x.check_feasible().unwrap();
    }
}
