use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate before optimizer step `step` (0-based): linear from 0 to
/// `base_lr` over the first `warmup_epochs · steps_per_epoch` steps, then
/// linear back to 0 at `epochs · steps_per_epoch`.
pub fn lr_at(step: usize, steps_per_epoch: usize, base_lr: f64, warmup_epochs: usize, epochs: usize) -> f64 {
    let warm = (warmup_epochs * steps_per_epoch) as f64;
    let total = (epochs * steps_per_epoch) as f64;
    let s = step as f64;
    if s < warm {
        base_lr * (s / warm)
    } else if s >= total {
        0.0
    } else {
        base_lr * ((total - s) / (total - warm))
    }
}

/// Adam moments, shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update on flat slices; `step` is the 1-based
/// count including this update.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Clips `grads` to global norm `clip` (if given), then applies one Adam
/// update. Returns the gradient norm before clipping.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    opt: &mut OptState,
    lr: f64,
    clip: Option<f64>,
) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        let bad: Vec<String> = grads
            .tensors()
            .iter()
            .filter(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.clone())
            .collect();
        return Err(Error::Training(format!("non-finite gradient in {}", bad.join(", "))));
    }
    let scale = match clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    opt.step += 1;
    let step = opt.step;
    let grad_tensors = grads.tensors();
    let mut m_tensors = opt.first.tensors_mut();
    let mut v_tensors = opt.second.tensors_mut();
    let mut scaled = Vec::new();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(m_tensors.iter_mut())
        .zip(v_tensors.iter_mut())
    {
        let g = if scale == 1.0 {
            g.data
        } else {
            scaled.clear();
            scaled.extend(g.data.iter().map(|x| x * scale));
            &scaled[..]
        };
        adam_update(p.data, g, m.data, v.data, step, lr);
    }
    Ok(norm)
}
