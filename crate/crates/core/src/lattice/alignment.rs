use super::{Alignment, LabelSeq, LogitLattice, BLANK};
use crate::error::{Error, Result};
use crate::numerics::{logsumexp, LogValue};

/// Largest `T + U` accepted by [`enumerate_alignments`].
pub const ENUMERATION_LIMIT: usize = 12;

/// Drops every blank, keeping the remaining labels in order.
///
/// `classes` is `K + 1`; ids at or above it are rejected.
pub fn remove_blanks(a: &Alignment, classes: usize) -> Result<LabelSeq> {
    if let Some(&bad) = a.ids().iter().find(|&&id| id >= classes) {
        return Err(Error::usage(format!(
            "alignment id {bad} out of range for {classes} classes"
        )));
    }
    LabelSeq::new(a.ids().iter().copied().filter(|&id| id != BLANK).collect())
}

/// Every alignment of `y` over `frames` input frames.
///
/// An alignment has length `T + U`, holds exactly `T` blanks, ends in a blank,
/// and its non-blank subsequence is `y`. There are `C(T+U−1, U)` of them.
pub fn enumerate_alignments(frames: usize, y: &LabelSeq) -> Result<Vec<Alignment>> {
    if frames == 0 {
        return Err(Error::usage("enumerate_alignments needs at least one frame"));
    }
    if frames + y.len() > ENUMERATION_LIMIT {
        return Err(Error::usage(format!(
            "enumeration guard: T + U = {} exceeds {ENUMERATION_LIMIT}",
            frames + y.len()
        )));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(frames + y.len());
    extend(frames, y.ids(), 0, 0, &mut prefix, &mut out);
    Ok(out)
}

fn extend(
    frames: usize,
    labels: &[usize],
    blanks: usize,
    emitted: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Alignment>,
) {
    if blanks == frames {
        out.push(Alignment::new(prefix.clone()));
        return;
    }
    if emitted < labels.len() {
        prefix.push(labels[emitted]);
        extend(frames, labels, blanks, emitted + 1, prefix, out);
        prefix.pop();
    }
    // The final blank may only be placed once every label is out.
    if blanks + 1 < frames || emitted == labels.len() {
        prefix.push(BLANK);
        extend(frames, labels, blanks + 1, emitted, prefix, out);
        prefix.pop();
    }
}

/// Log-probability of one path: the sum of the `T + U` transition
/// log-probabilities it takes through the lattice.
///
/// From node `(t, u)` a blank contributes `values[t][u][∅]` and moves to
/// `(t+1, u)`; the label `y_{u+1}` contributes `values[t][u][y_{u+1}]` and
/// moves to `(t, u+1)`.
pub fn alignment_log_prob(lat: &LogitLattice, y: &LabelSeq, a: &Alignment) -> Result<LogValue> {
    lat.check_labels(y)?;
    let frames = lat.frames();
    if a.len() != frames + y.len() {
        return Err(Error::usage(format!(
            "alignment length {} is not T + U = {}",
            a.len(),
            frames + y.len()
        )));
    }
    if a.ids().last() != Some(&BLANK) {
        return Err(Error::usage("alignment must end with a blank"));
    }
    let (mut t, mut u) = (0usize, 0usize);
    let mut total = 0.0;
    for (step, &id) in a.ids().iter().enumerate() {
        if t >= frames {
            return Err(Error::usage(format!(
                "alignment runs past the last frame at step {step}"
            )));
        }
        if id == BLANK {
            total += lat.get(t, u, BLANK);
            t += 1;
        } else if u < y.len() && y.ids()[u] == id {
            total += lat.get(t, u, id);
            u += 1;
        } else {
            return Err(Error::usage(format!(
                "alignment symbol {id} at step {step} does not match the label sequence"
            )));
        }
    }
    if t != frames || u != y.len() {
        return Err(Error::usage("alignment does not consume every frame and label"));
    }
    Ok(total)
}

/// `log Pr(y|x)` as the log-sum of every alignment's path probability.
pub fn brute_force_log_prob(lat: &LogitLattice, y: &LabelSeq) -> Result<LogValue> {
    lat.check_labels(y)?;
    let paths = enumerate_alignments(lat.frames(), y)?;
    let scores = paths
        .iter()
        .map(|a| alignment_log_prob(lat, y, a))
        .collect::<Result<Vec<_>>>()?;
    logsumexp(&scores)
}

/// `−log Pr(y|x)` by enumeration.
pub fn rnnt_loss_brute(lat: &LogitLattice, y: &LabelSeq) -> Result<f64> {
    Ok(-brute_force_log_prob(lat, y)?)
}
