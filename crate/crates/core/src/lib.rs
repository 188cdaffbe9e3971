//! Negative-unlabeled tensor factorization (NUTF).
//!
//! Given, for each (user, time slot) pair with a location update, the set of
//! location categories whose venues intersect the update's uncertainty
//! circle, infer a low-rank probability tensor over (user, slot, category)
//! that singles out the most likely category of each observation and fills in
//! slots with no observation at all.
//!
//! The tensor is handled through its N x (T*C) unfolding. The solver
//! alternates a randomized sparse low-rank approximation ([`linalg`]) with a
//! per-block projection onto the probability simplex ([`simplex`]).

pub mod error;
pub mod harness;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod simplex;
pub mod snapshot;
pub mod solver;
pub mod tensor;

pub use error::{NutfError, Result};
pub use linalg::{sparse_lowrank_approx, Orientation, PowerIterConfig};
pub use simplex::{project_simplex, SimplexVector};
pub use tensor::{
    col_index, frobenius_gap, split_col, BlockSparseMatrix, CandidateSets, LowRankModel,
    ProblemDims,
};
