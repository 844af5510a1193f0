use super::{LabelSeq, LogitLattice, BLANK};
use crate::error::{Error, Result};
use crate::numerics::{log_add, log_softmax_backward_into, LogValue, LOG_ZERO};

/// `T × (U+1)` table of log-masses.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    frames: usize,
    rows: usize,
    data: Vec<f64>,
}

impl LogTable {
    fn new(frames: usize, rows: usize) -> Self {
        Self {
            frames,
            rows,
            data: vec![LOG_ZERO; frames * rows],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> LogValue {
        self.data[t * self.rows + u]
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, v: LogValue) {
        self.data[t * self.rows + u] = v;
    }
}

/// Forward and backward tables for one `(lattice, labels)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBetaTables {
    pub alpha: LogTable,
    pub beta: LogTable,
    /// `log Pr(y|x)`.
    pub log_prob: LogValue,
}

/// Forward pass. `alpha[t][u]` is the log-mass of every partial path that
/// reaches node `(t, u)`; the result also carries `log Pr(y|x)`.
///
/// ```text
/// alpha[0][0] = 0
/// alpha[t][u] = logsumexp(alpha[t−1][u] + blank(t−1, u),
///                         alpha[t][u−1] + label(t, u−1))
/// log Pr(y|x) = alpha[T−1][U] + blank(T−1, U)
/// ```
pub fn rnnt_forward(lat: &LogitLattice, y: &LabelSeq) -> Result<(LogTable, LogValue)> {
    lat.check_labels(y)?;
    let (frames, rows) = (lat.frames(), lat.rows());
    let labels = y.ids();
    let mut alpha = LogTable::new(frames, rows);
    for t in 0..frames {
        for u in 0..rows {
            let v = if t == 0 && u == 0 {
                0.0
            } else {
                let from_blank = if t > 0 {
                    alpha.get(t - 1, u) + lat.get(t - 1, u, BLANK)
                } else {
                    LOG_ZERO
                };
                let from_label = if u > 0 {
                    alpha.get(t, u - 1) + lat.get(t, u - 1, labels[u - 1])
                } else {
                    LOG_ZERO
                };
                log_add(from_blank, from_label)
            };
            alpha.set(t, u, v);
        }
    }
    let log_prob = alpha.get(frames - 1, rows - 1) + lat.get(frames - 1, rows - 1, BLANK);
    Ok((alpha, log_prob))
}

/// Backward pass. `beta[t][u]` is the log-mass of every completion from node
/// `(t, u)`, terminal blank included; `beta[0][0] = log Pr(y|x)`.
pub fn rnnt_backward(lat: &LogitLattice, y: &LabelSeq) -> Result<LogTable> {
    lat.check_labels(y)?;
    let (frames, rows) = (lat.frames(), lat.rows());
    let labels = y.ids();
    let mut beta = LogTable::new(frames, rows);
    for t in (0..frames).rev() {
        for u in (0..rows).rev() {
            let v = if t == frames - 1 && u == rows - 1 {
                lat.get(t, u, BLANK)
            } else {
                let via_blank = if t + 1 < frames {
                    beta.get(t + 1, u) + lat.get(t, u, BLANK)
                } else {
                    LOG_ZERO
                };
                let via_label = if u + 1 < rows {
                    beta.get(t, u + 1) + lat.get(t, u, labels[u])
                } else {
                    LOG_ZERO
                };
                log_add(via_blank, via_label)
            };
            beta.set(t, u, v);
        }
    }
    Ok(beta)
}

pub fn rnnt_tables(lat: &LogitLattice, y: &LabelSeq) -> Result<AlphaBetaTables> {
    let (alpha, log_prob) = rnnt_forward(lat, y)?;
    let beta = rnnt_backward(lat, y)?;
    Ok(AlphaBetaTables { alpha, beta, log_prob })
}

/// `L = −log Pr(y|x)` by the forward recursion.
pub fn rnnt_loss(lat: &LogitLattice, y: &LabelSeq) -> Result<f64> {
    Ok(-rnnt_forward(lat, y)?.1)
}

/// `∂L/∂values[t][u][k]` for `L = −log Pr(y|x)`, laid out like the lattice.
///
/// Only the blank and the next label `y_{u+1}` carry mass at each node; the
/// gradient there is minus the posterior probability `γ` that a path takes
/// that transition. All other entries are exactly zero.
pub fn rnnt_grad(lat: &LogitLattice, y: &LabelSeq, tables: &AlphaBetaTables) -> Result<Vec<f64>> {
    lat.check_labels(y)?;
    let (frames, rows) = (lat.frames(), lat.rows());
    if tables.alpha.frames() != frames
        || tables.alpha.rows() != rows
        || tables.beta.frames() != frames
        || tables.beta.rows() != rows
    {
        return Err(Error::usage("rnnt_grad: tables do not match the lattice"));
    }
    if !tables.log_prob.is_finite() {
        return Err(Error::Numeric(format!(
            "log Pr(y|x) is {}, gradient undefined",
            tables.log_prob
        )));
    }
    let labels = y.ids();
    let mut grad = vec![0.0; lat.values().len()];
    for t in 0..frames {
        for u in 0..rows {
            let a = tables.alpha.get(t, u);
            let after_blank = if t + 1 < frames {
                tables.beta.get(t + 1, u)
            } else if u == rows - 1 {
                0.0
            } else {
                LOG_ZERO
            };
            grad[lat.index(t, u, BLANK)] = -(a + lat.get(t, u, BLANK) + after_blank - tables.log_prob).exp();
            if u + 1 < rows {
                let k = labels[u];
                grad[lat.index(t, u, k)] = -(a + lat.get(t, u, k) + tables.beta.get(t, u + 1) - tables.log_prob).exp();
            }
        }
    }
    Ok(grad)
}

/// Loss and log-probability-level gradient in one call.
pub fn rnnt_loss_and_grad(lat: &LogitLattice, y: &LabelSeq) -> Result<(f64, Vec<f64>)> {
    let tables = rnnt_tables(lat, y)?;
    let grad = rnnt_grad(lat, y, &tables)?;
    Ok((-tables.log_prob, grad))
}

/// Chains a log-probability-level gradient through the per-node
/// `log_softmax`, giving the gradient with respect to the raw logits.
pub fn logits_grad(lat: &LogitLattice, grad: &[f64]) -> Result<Vec<f64>> {
    if grad.len() != lat.values().len() {
        return Err(Error::usage("logits_grad: gradient does not match the lattice"));
    }
    let k = lat.classes();
    let mut out = vec![0.0; grad.len()];
    for ((o, g), lp) in out
        .chunks_exact_mut(k)
        .zip(grad.chunks_exact(k))
        .zip(lat.values().chunks_exact(k))
    {
        log_softmax_backward_into(g, lp, o);
    }
    Ok(out)
}
