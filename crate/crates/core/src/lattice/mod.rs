//! Transducer lattice: alignment semantics, the exact loss by forward-backward
//! dynamic programming, its gradient, and a brute-force enumeration oracle.
//!
//! Indexing is zero-based: frames `t ∈ [0, T)`, label rows `u ∈ [0, U]`,
//! classes `k ∈ [0, K]` with `k = 0` the blank.

mod alignment;
mod dp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax_in_place, logsumexp, LogValue};

pub use alignment::{
    alignment_log_prob, brute_force_log_prob, enumerate_alignments, remove_blanks, rnnt_loss_brute, ENUMERATION_LIMIT,
};
pub use dp::{
    logits_grad, rnnt_backward, rnnt_forward, rnnt_grad, rnnt_loss, rnnt_loss_and_grad, rnnt_tables, AlphaBetaTables,
    LogTable,
};

/// Index of the blank symbol in the extended label set.
pub const BLANK: usize = 0;

/// Ordered character inventory. Symbol `i` (zero-based) has label id `i + 1`;
/// id 0 is the blank and is never a member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<char>,
}

impl Vocab {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (i, c) in symbols.iter().enumerate() {
            if !seen.insert(*c) {
                return Err(Error::config(format!("duplicate symbol {c:?} at position {}", i + 1)));
            }
        }
        Ok(Self { symbols })
    }

    /// `K`, the number of non-blank classes.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `K + 1`.
    pub fn extended_size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + 1)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        if id == BLANK {
            None
        } else {
            self.symbols.get(id - 1).copied()
        }
    }

    pub fn encode(&self, text: &str) -> Result<LabelSeq> {
        let ids = text
            .chars()
            .map(|c| {
                self.id_of(c)
                    .ok_or_else(|| Error::usage(format!("character {c:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelSeq { ids })
    }

    pub fn decode(&self, labels: &LabelSeq) -> Result<String> {
        labels
            .ids()
            .iter()
            .map(|&id| {
                self.symbol(id)
                    .ok_or_else(|| Error::config(format!("label id {id} is outside the vocabulary")))
            })
            .collect()
    }
}

/// Blank-free label sequence `y = (y₁, …, y_U)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSeq {
    ids: Vec<usize>,
}

impl LabelSeq {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if let Some(pos) = ids.iter().position(|&id| id == BLANK) {
            return Err(Error::usage(format!("label sequence contains blank at {pos}")));
        }
        Ok(Self { ids })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One path through the lattice, written over the extended label set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Alignment {
    ids: Vec<usize>,
}

impl Alignment {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Log-probabilities over the extended label set at every node `(t, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLattice {
    frames: usize,
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

/// Tolerance on `Σₖ exp(values[t][u][k]) = 1` when accepting a lattice.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

impl LogitLattice {
    /// Wraps already-normalized log-probabilities laid out as `[t][u][k]`.
    pub fn from_log_probs(frames: usize, rows: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        Self::check_shape(frames, rows, classes, values.len())?;
        for (cell, slice) in values.chunks_exact(classes).enumerate() {
            let mass = logsumexp(slice)?.exp();
            if !((mass - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
                return Err(Error::Numeric(format!(
                    "lattice node ({}, {}) sums to {mass}",
                    cell / rows,
                    cell % rows
                )));
            }
        }
        Ok(Self {
            frames,
            rows,
            classes,
            values,
        })
    }

    /// Applies `log_softmax` to each `(t, u)` slice of raw logits.
    pub fn from_logits(frames: usize, rows: usize, classes: usize, logits: Vec<f64>) -> Result<Self> {
        Self::check_shape(frames, rows, classes, logits.len())?;
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("lattice logits contain {bad}")));
        }
        let mut values = logits;
        for slice in values.chunks_exact_mut(classes) {
            log_softmax_in_place(slice);
        }
        Ok(Self {
            frames,
            rows,
            classes,
            values,
        })
    }

    /// Every entry `−ln(classes)`.
    pub fn uniform(frames: usize, rows: usize, classes: usize) -> Result<Self> {
        Self::check_shape(frames, rows, classes, frames * rows * classes)?;
        let v = -(classes as f64).ln();
        Ok(Self {
            frames,
            rows,
            classes,
            values: vec![v; frames * rows * classes],
        })
    }

    fn check_shape(frames: usize, rows: usize, classes: usize, len: usize) -> Result<()> {
        if frames == 0 || rows == 0 || classes < 2 {
            return Err(Error::usage(format!(
                "lattice needs T ≥ 1, U+1 ≥ 1 and at least 2 classes, got {frames}x{rows}x{classes}"
            )));
        }
        if len != frames * rows * classes {
            return Err(Error::usage(format!(
                "lattice data length {len} does not match {frames}x{rows}x{classes}"
            )));
        }
        Ok(())
    }

    /// `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `U + 1`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `K + 1`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, k: usize) -> usize {
        (t * self.rows + u) * self.classes + k
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: usize) -> LogValue {
        self.values[self.index(t, u, k)]
    }

    #[inline]
    pub fn slice(&self, t: usize, u: usize) -> &[f64] {
        let start = self.index(t, u, 0);
        &self.values[start..start + self.classes]
    }

    /// Checks that `y` fits this lattice: `U + 1` rows and ids below `K + 1`.
    pub(crate) fn check_labels(&self, y: &LabelSeq) -> Result<()> {
        if y.len() + 1 != self.rows {
            return Err(Error::usage(format!(
                "label sequence of length {} needs {} lattice rows, lattice has {}",
                y.len(),
                y.len() + 1,
                self.rows
            )));
        }
        if let Some(&bad) = y.ids().iter().find(|&&id| id >= self.classes) {
            return Err(Error::usage(format!(
                "label id {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }
}
