use crate::error::{Error, Result};

/// Added to the variance before the square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Forward values kept for [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// `(x − μ) / σ`, before gain and shift.
    pub normalized: Vec<f64>,
    /// `1 / √(var + ε)`.
    pub inv_std: f64,
}

pub fn layer_norm(input: &[f64], gain: &[f64], shift: &[f64]) -> Result<Vec<f64>> {
    Ok(layer_norm_cached(input, gain, shift)?.0)
}

pub fn layer_norm_cached(input: &[f64], gain: &[f64], shift: &[f64]) -> Result<(Vec<f64>, LayerNormCache)> {
    if input.len() < 2 {
        return Err(Error::usage(format!(
            "layer_norm needs at least 2 entries, got {}",
            input.len()
        )));
    }
    if gain.len() != input.len() || shift.len() != input.len() {
        return Err(Error::usage("layer_norm: gain/shift length mismatch"));
    }
    let (normalized, inv_std) = standardize(input);
    let out = normalized
        .iter()
        .zip(gain.iter().zip(shift))
        .map(|(n, (g, s))| n * g + s)
        .collect();
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(∂L/∂x, ∂L/∂gain, ∂L/∂shift)`.
pub fn layer_norm_backward(
    grad_out: &[f64],
    cache: &LayerNormCache,
    gain: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = cache.normalized.len();
    if grad_out.len() != n || gain.len() != n {
        return Err(Error::usage("layer_norm_backward: length mismatch"));
    }
    let grad_gain: Vec<f64> = grad_out.iter().zip(&cache.normalized).map(|(g, x)| g * x).collect();
    let grad_norm: Vec<f64> = grad_out.iter().zip(gain).map(|(g, w)| g * w).collect();
    let grad_input = standardize_backward(&grad_norm, &cache.normalized, cache.inv_std);
    Ok((grad_input, grad_gain, grad_out.to_vec()))
}

/// Zero-mean, unit-variance transform with [`LAYER_NORM_EPS`]; shared with the
/// per-channel normalization of the convolutional blocks.
pub(crate) fn standardize(input: &[f64]) -> (Vec<f64>, f64) {
    let n = input.len() as f64;
    let mean = input.iter().sum::<f64>() / n;
    let var = input.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (input.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

pub(crate) fn standardize_backward(grad_norm: &[f64], normalized: &[f64], inv_std: f64) -> Vec<f64> {
    let n = grad_norm.len() as f64;
    let mean_g = grad_norm.iter().sum::<f64>() / n;
    let mean_gx = grad_norm.iter().zip(normalized).map(|(g, x)| g * x).sum::<f64>() / n;
    grad_norm
        .iter()
        .zip(normalized)
        .map(|(g, x)| inv_std * (g - mean_g - x * mean_gx))
        .collect()
}
