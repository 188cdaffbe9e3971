//! Text formats: candidate sets as JSON lines plus a JSON sidecar carrying
//! the dimensions and index maps.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};
use crate::ingest::SlotScheme;
use crate::tensor::{CandidateSets, ProblemDims};

/// One line of the candidate-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaLine {
    pub u: usize,
    pub j: usize,
    pub cats: Vec<usize>,
}

/// Sidecar describing a candidate-set file.
///
/// `users` and `categories` map dense indices back to external names; they
/// are empty for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaMeta {
    pub dims: ProblemDims,
    #[serde(default)]
    pub users: Vec<String>,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<SlotScheme>,
}

impl OmegaMeta {
    pub fn new(dims: ProblemDims) -> Self {
        OmegaMeta {
            dims,
            users: Vec::new(),
            categories: Vec::new(),
            slots: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !self.users.is_empty() && self.users.len() != self.dims.n_users {
            return Err(NutfError::DimensionMismatch(format!(
                "{} user names for N = {}",
                self.users.len(),
                self.dims.n_users
            )));
        }
        if !self.categories.is_empty() && self.categories.len() != self.dims.n_categories {
            return Err(NutfError::DimensionMismatch(format!(
                "{} category names for C = {}",
                self.categories.len(),
                self.dims.n_categories
            )));
        }
        if let Some(s) = &self.slots {
            if s.n_slots() != self.dims.n_slots {
                return Err(NutfError::DimensionMismatch(format!(
                    "slot scheme yields {} slots, T = {}",
                    s.n_slots(),
                    self.dims.n_slots
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let meta: OmegaMeta =
            serde_json::from_str(s).map_err(|e| NutfError::parse(e.line() as u64, e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("meta serializes")
    }

    /// Index of a category by name.
    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }
}

/// Writes one line per block, in storage order.
pub fn write_omega<W: Write>(omega: &CandidateSets, mut out: W) -> Result<()> {
    for b in omega.blocks() {
        let line = OmegaLine {
            u: b.user,
            j: b.slot,
            cats: b.cats.to_vec(),
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads candidate sets; blank lines are skipped. Category lists may be in
/// any order but must be nonempty and duplicate-free, and each (u, j) pair
/// may appear once.
pub fn read_omega<R: BufRead>(input: R, dims: ProblemDims) -> Result<CandidateSets> {
    dims.validate()?;
    let mut seen = HashSet::new();
    let mut blocks = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: OmegaLine =
            serde_json::from_str(&line).map_err(|e| NutfError::parse(lineno, e.to_string()))?;
        if rec.u >= dims.n_users || rec.j >= dims.n_slots {
            return Err(NutfError::parse(
                lineno,
                format!("pair ({}, {}) out of range for {dims:?}", rec.u, rec.j),
            ));
        }
        if rec.cats.is_empty() {
            return Err(NutfError::parse(lineno, "empty candidate set"));
        }
        if let Some(&k) = rec.cats.iter().find(|&&k| k >= dims.n_categories) {
            return Err(NutfError::parse(lineno, format!("category {k} out of range")));
        }
        let mut sorted = rec.cats.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(NutfError::parse(lineno, "duplicate category in set"));
        }
        if !seen.insert((rec.u, rec.j)) {
            return Err(NutfError::parse(
                lineno,
                format!("pair ({}, {}) repeated", rec.u, rec.j),
            ));
        }
        blocks.push((rec.u, rec.j, sorted));
    }
    CandidateSets::from_blocks(dims, blocks)
}
