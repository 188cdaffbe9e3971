//! Binary snapshots of the iterate X and of the low-rank model Y = QC.
//!
//! Little-endian throughout. Layout (see `docs/formats.md`):
//!
//! ```text
//! magic "NUTF" | version u16 | kind u8 | flags u8 | N u64 | T u64 | C u64 | rank u64
//! kind 1 (X):     n_blocks u64 | n_entries u64
//!                 n_blocks x (user u64, slot u64, len u64)
//!                 n_entries x category u64 | n_entries x value f64
//! kind 2 (model): q (rows x rank f64, row-major) | c (rank x cols f64, row-major)
//! ```
//!
//! The decoder checks every declared length against the remaining input
//! before allocating and rejects trailing bytes.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{NutfError, Result};
use crate::tensor::{BlockSparseMatrix, CandidateSets, LowRankModel, ProblemDims};

pub const MAGIC: [u8; 4] = *b"NUTF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 * 8;

const KIND_X: u8 = 1;
const KIND_MODEL: u8 = 2;
const FLAG_TRANSPOSED: u8 = 1;

/// Size caps applied while decoding untrusted input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeLimits {
    /// Largest N accepted; bounds the per-user index allocated for X.
    pub max_users: usize,
    /// Largest T*C accepted.
    pub max_cols: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits {
            max_users: 1 << 26,
            max_cols: 1 << 32,
        }
    }
}

/// A decoded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    X(BlockSparseMatrix),
    Model(LowRankModel),
}

fn header(out: &mut Vec<u8>, kind: u8, flags: u8, dims: &ProblemDims, rank: usize) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.push(flags);
    for v in [dims.n_users, dims.n_slots, dims.n_categories, rank] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

pub fn encode_x(x: &BlockSparseMatrix) -> Vec<u8> {
    let support = x.support();
    let n_entries = support.total_size();
    let mut out =
        Vec::with_capacity(HEADER_LEN + 16 + support.n_blocks() * 24 + n_entries * 16);
    header(&mut out, KIND_X, 0, support.dims(), 0);
    out.extend_from_slice(&(support.n_blocks() as u64).to_le_bytes());
    out.extend_from_slice(&(n_entries as u64).to_le_bytes());
    for b in support.blocks() {
        for v in [b.user, b.slot, b.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }
    for &k in support.categories() {
        out.extend_from_slice(&(k as u64).to_le_bytes());
    }
    for v in x.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_model(model: &LowRankModel) -> Vec<u8> {
    let (q, c) = (model.q(), model.c());
    let mut out = Vec::with_capacity(HEADER_LEN + (q.len() + c.len()) * 8);
    let flags = if model.transposed() { FLAG_TRANSPOSED } else { 0 };
    header(&mut out, KIND_MODEL, flags, model.dims(), model.rank());
    for v in q.iter().chain(c.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    decode_with_limits(bytes, &DecodeLimits::default())
}

pub fn decode_with_limits(bytes: &[u8], limits: &DecodeLimits) -> Result<Snapshot> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(fmt("bad magic"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let kind = r.take(1)?[0];
    let flags = r.take(1)?[0];
    let n = r.usize()?;
    let t = r.usize()?;
    let c = r.usize()?;
    let rank = r.usize()?;
    let dims = ProblemDims::new(n, t, c).map_err(|e| fmt(e.to_string()))?;
    if n > limits.max_users || dims.n_cols() > limits.max_cols {
        return Err(fmt(format!("dimensions {dims:?} exceed decode limits")));
    }
    match kind {
        KIND_X => {
            if flags != 0 || rank != 0 {
                return Err(fmt("X snapshot must have zero flags and rank"));
            }
            decode_x_body(&mut r, dims).map(Snapshot::X)
        }
        KIND_MODEL => {
            if flags & !FLAG_TRANSPOSED != 0 {
                return Err(fmt(format!("unknown flags {flags:#04x}")));
            }
            decode_model_body(&mut r, dims, rank, flags & FLAG_TRANSPOSED != 0)
                .map(Snapshot::Model)
        }
        other => Err(fmt(format!("unknown snapshot kind {other}"))),
    }
}

pub fn decode_x(bytes: &[u8]) -> Result<BlockSparseMatrix> {
    match decode(bytes)? {
        Snapshot::X(x) => Ok(x),
        Snapshot::Model(_) => Err(fmt("expected an X snapshot, found a model")),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<LowRankModel> {
    match decode(bytes)? {
        Snapshot::Model(m) => Ok(m),
        Snapshot::X(_) => Err(fmt("expected a model snapshot, found X")),
    }
}

fn decode_x_body(r: &mut Reader<'_>, dims: ProblemDims) -> Result<BlockSparseMatrix> {
    let n_blocks = r.usize()?;
    let n_entries = r.usize()?;
    let need = n_blocks
        .checked_mul(24)
        .and_then(|a| n_entries.checked_mul(16).and_then(|b| a.checked_add(b)))
        .ok_or_else(|| fmt("declared sizes overflow"))?;
    if need != r.remaining() {
        return Err(fmt(format!(
            "payload length {} does not match {n_blocks} blocks / {n_entries} entries",
            r.remaining()
        )));
    }
    let mut heads = Vec::with_capacity(n_blocks);
    let mut total = 0usize;
    let mut prev: Option<(usize, usize)> = None;
    for _ in 0..n_blocks {
        let (user, slot, len) = (r.usize()?, r.usize()?, r.usize()?);
        if user >= dims.n_users || slot >= dims.n_slots {
            return Err(fmt(format!("block ({user}, {slot}) out of range")));
        }
        if len == 0 || len > dims.n_categories {
            return Err(fmt(format!("block ({user}, {slot}) has invalid length {len}")));
        }
        if prev.is_some_and(|p| p >= (user, slot)) {
            return Err(fmt("blocks not in strictly increasing (user, slot) order"));
        }
        prev = Some((user, slot));
        total += len;
        heads.push((user, slot, len));
    }
    if total != n_entries {
        return Err(fmt(format!("block lengths sum to {total}, header says {n_entries}")));
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for (user, slot, len) in heads {
        let mut cats = Vec::with_capacity(len);
        for _ in 0..len {
            let k = r.usize()?;
            if k >= dims.n_categories || cats.last().is_some_and(|&p| p >= k) {
                return Err(fmt(format!(
                    "block ({user}, {slot}): categories must be increasing and < C"
                )));
            }
            cats.push(k);
        }
        blocks.push((user, slot, cats));
    }
    let values = (0..n_entries).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let support = CandidateSets::from_blocks(dims, blocks).map_err(|e| fmt(e.to_string()))?;
    BlockSparseMatrix::new(Arc::new(support), values).map_err(|e| fmt(e.to_string()))
}

fn decode_model_body(
    r: &mut Reader<'_>,
    dims: ProblemDims,
    rank: usize,
    transposed: bool,
) -> Result<LowRankModel> {
    if rank > dims.max_rank() {
        return Err(fmt(format!("rank {rank} exceeds min(N, T*C)")));
    }
    if rank == 0 && transposed {
        return Err(fmt("rank-0 model cannot be transposed"));
    }
    let (rows, cols) = if transposed {
        (dims.n_cols(), dims.n_users)
    } else {
        (dims.n_users, dims.n_cols())
    };
    let need = rows
        .checked_add(cols)
        .and_then(|s| s.checked_mul(rank))
        .and_then(|s| s.checked_mul(8))
        .ok_or_else(|| fmt("declared sizes overflow"))?;
    if need != r.remaining() {
        return Err(fmt(format!(
            "payload length {} does not match a rank-{rank} model",
            r.remaining()
        )));
    }
    let mut read = |len| (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>();
    let q = Array2::from_shape_vec((rows, rank), read(rows * rank)?).expect("shape checked");
    let c = Array2::from_shape_vec((rank, cols), read(rank * cols)?).expect("shape checked");
    LowRankModel::new(dims, q, c, transposed).map_err(|e| fmt(e.to_string()))
}

fn fmt(msg: impl Into<String>) -> NutfError {
    NutfError::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(fmt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| fmt(format!("value {v} does not fit in usize")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
