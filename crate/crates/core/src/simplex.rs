//! Euclidean projection onto the probability simplex
//! `{u : u >= 0, sum(u) = 1}`.
//!
//! Sort-and-threshold method: with `w` the values sorted descending, take the
//! largest `j` with `w_j - (sum_{i<=j} w_i - 1) / j > 0`, set
//! `theta = (sum_{i<=j} w_i - 1) / j`, and return `max(v - theta, 0)`.

use crate::error::{NutfError, Result};

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Projects `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(NutfError::InvalidInput(
            "cannot project an empty vector onto the simplex".into(),
        ));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(NutfError::NonFinite(format!("simplex input entry {x}")));
    }
    let mut out = vec![0.0; v.len()];
    let mut scratch = Vec::with_capacity(v.len());
    project_into(v, &mut out, &mut scratch);
    Ok(SimplexVector(out))
}

/// Allocation-free kernel behind [`project_simplex`]. `v` must be nonempty
/// and finite; `scratch` is reused across calls.
pub(crate) fn project_into(v: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    debug_assert_eq!(v.len(), out.len());
    if v.len() == 1 {
        out[0] = 1.0;
        return;
    }
    let theta = threshold(v, scratch);
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - theta).max(0.0);
    }
}

fn threshold(v: &[f64], sorted: &mut Vec<f64>) -> f64 {
    sorted.clear();
    sorted.extend_from_slice(v);
    // Stable descending sort; equal values keep their original order.
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut prefix = 0.0;
    let mut best_sum = sorted[0];
    let mut best_len = 1usize;
    for (j, &w) in sorted.iter().enumerate() {
        prefix += w;
        let len = j + 1;
        if w - (prefix - 1.0) / len as f64 > 0.0 {
            best_sum = prefix;
            best_len = len;
        }
    }
    (best_sum - 1.0) / best_len as f64
}
