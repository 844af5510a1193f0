//! Log-domain reductions. `f64::NEG_INFINITY` is the canonical log-zero.

use crate::error::{Error, Result};

/// Log-domain value; `-inf` denotes probability zero.
pub type LogValue = f64;

pub const LOG_ZERO: LogValue = f64::NEG_INFINITY;

/// `log Σ exp(vᵢ)` with a max shift.
pub fn logsumexp(values: &[f64]) -> Result<LogValue> {
    if values.is_empty() {
        return Err(Error::usage("logsumexp of an empty vector"));
    }
    Ok(logsumexp_unchecked(values))
}

pub(crate) fn logsumexp_unchecked(values: &[f64]) -> LogValue {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: LogValue, b: LogValue) -> LogValue {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Normalizes logits into log-probabilities.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::usage("log_softmax of an empty vector"));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("log_softmax input contains {bad}")));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn log_softmax_in_place(values: &mut [f64]) {
    let lse = logsumexp_unchecked(values);
    for v in values.iter_mut() {
        *v -= lse;
    }
}

/// Chain rule through `log_softmax`: maps `∂L/∂out` to `∂L/∂logits`.
///
/// `log_probs` is the forward output. The Jacobian is `δᵢⱼ − pⱼ`, so the
/// result is `g − p · Σg`.
pub fn log_softmax_backward(grad_out: &[f64], log_probs: &[f64]) -> Result<Vec<f64>> {
    if grad_out.len() != log_probs.len() {
        return Err(Error::usage(format!(
            "log_softmax_backward: gradient length {} vs output length {}",
            grad_out.len(),
            log_probs.len()
        )));
    }
    let mut out = vec![0.0; grad_out.len()];
    log_softmax_backward_into(grad_out, log_probs, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn log_softmax_backward_into(grad_out: &[f64], log_probs: &[f64], out: &mut [f64]) {
    let total: f64 = grad_out.iter().sum();
    for ((o, &g), &lp) in out.iter_mut().zip(grad_out).zip(log_probs) {
        *o = g - lp.exp() * total;
    }
}
