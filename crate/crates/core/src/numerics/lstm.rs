//! LSTM cell with a hand-derived backward pass.
//!
//! Gate layout: the `4·H` pre-activation rows are stacked as
//! `[input, forget, candidate, output]`, each block `H` rows long. Bias,
//! layer-norm gain and shift use the same layout.

use serde::{Deserialize, Serialize};

use super::layer_norm::{standardize, standardize_backward};
use super::matrix::RealMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden_size],
            cell: vec![0.0; hidden_size],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H × input_size`.
    pub w_input: RealMatrix,
    /// `4H × H`.
    pub w_hidden: RealMatrix,
    pub bias: Vec<f64>,
    /// Used only when gate layer normalization is enabled.
    pub norm_gain: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

impl LstmParams {
    /// Zero weights, zero bias, identity layer norm.
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            w_input: RealMatrix::zeros(g, input_size),
            w_hidden: RealMatrix::zeros(g, hidden_size),
            bias: vec![0.0; g],
            norm_gain: vec![1.0; g],
            norm_shift: vec![0.0; g],
        }
    }

    /// Same shapes, all entries zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_input: RealMatrix::zeros(self.w_input.rows(), self.w_input.cols()),
            w_hidden: RealMatrix::zeros(self.w_hidden.rows(), self.w_hidden.cols()),
            bias: vec![0.0; self.bias.len()],
            norm_gain: vec![0.0; self.norm_gain.len()],
            norm_shift: vec![0.0; self.norm_shift.len()],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    fn check(&self, input_len: usize, state: &LstmState) -> Result<()> {
        let h = self.hidden_size();
        if self.w_hidden.rows() != 4 * h
            || self.w_input.rows() != 4 * h
            || self.bias.len() != 4 * h
            || self.norm_gain.len() != 4 * h
            || self.norm_shift.len() != 4 * h
        {
            return Err(Error::usage("lstm: parameter shapes are inconsistent"));
        }
        if input_len != self.input_size() {
            return Err(Error::usage(format!(
                "lstm: input length {input_len}, expected {}",
                self.input_size()
            )));
        }
        if state.hidden.len() != h || state.cell.len() != h {
            return Err(Error::usage(format!(
                "lstm: state length {}/{}, expected {h}",
                state.hidden.len(),
                state.cell.len()
            )));
        }
        Ok(())
    }
}

/// Everything the backward step needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Vec<f64>,
    /// Previous hidden state after the dropout mask.
    hidden_in: Vec<f64>,
    cell_prev: Vec<f64>,
    /// Activated gates, same layout as the pre-activations.
    gates: Vec<f64>,
    cell_tanh: Vec<f64>,
    mask: Option<Vec<f64>>,
    norm: Option<(Vec<f64>, f64)>,
}

/// Inference step. Returns `(output, new_state)`; the output is the new hidden state.
pub fn lstm_step(
    input: &[f64],
    state: &LstmState,
    params: &LstmParams,
    layer_norm: bool,
) -> Result<(Vec<f64>, LstmState)> {
    let (next, _) = lstm_step_cached(input, state, params, layer_norm, None)?;
    Ok((next.hidden.clone(), next))
}

/// Training step. `mask` multiplies the previous hidden state before the
/// recurrent product (variational dropout; entries are `0` or `1/(1−p)`).
pub fn lstm_step_cached(
    input: &[f64],
    state: &LstmState,
    params: &LstmParams,
    layer_norm: bool,
    mask: Option<&[f64]>,
) -> Result<(LstmState, LstmCache)> {
    params.check(input.len(), state)?;
    let h = params.hidden_size();
    let hidden_in: Vec<f64> = match mask {
        Some(m) => {
            if m.len() != h {
                return Err(Error::usage("lstm: dropout mask length mismatch"));
            }
            state.hidden.iter().zip(m).map(|(a, b)| a * b).collect()
        }
        None => state.hidden.clone(),
    };

    let mut pre = vec![0.0; 4 * h];
    params.w_input.matvec_acc(input, &mut pre);
    params.w_hidden.matvec_acc(&hidden_in, &mut pre);

    let norm = if layer_norm {
        let (normalized, inv_std) = standardize(&pre);
        for (i, p) in pre.iter_mut().enumerate() {
            *p = normalized[i] * params.norm_gain[i] + params.norm_shift[i];
        }
        Some((normalized, inv_std))
    } else {
        None
    };

    let mut gates = pre;
    for (g, b) in gates.iter_mut().zip(&params.bias) {
        *g += b;
    }
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if k / h == 2 { g.tanh() } else { sigmoid(*g) };
    }

    let mut cell = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    let mut cell_tanh = vec![0.0; h];
    for j in 0..h {
        let (i_g, f_g, c_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
        cell[j] = f_g * state.cell[j] + i_g * c_g;
        cell_tanh[j] = cell[j].tanh();
        hidden[j] = o_g * cell_tanh[j];
    }

    let cache = LstmCache {
        input: input.to_vec(),
        hidden_in,
        cell_prev: state.cell.clone(),
        gates,
        cell_tanh,
        mask: mask.map(<[f64]>::to_vec),
        norm,
    };
    Ok((LstmState { hidden, cell }, cache))
}

/// Gradients flowing out of one backward step.
#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub input: Vec<f64>,
    pub hidden_prev: Vec<f64>,
    pub cell_prev: Vec<f64>,
}

/// Backward through one step. `grad_hidden` and `grad_cell` are `∂L/∂h_t`
/// and `∂L/∂c_t` (the latter from later steps); parameter gradients are
/// accumulated into `grads`.
pub fn lstm_step_backward(
    grad_hidden: &[f64],
    grad_cell: &[f64],
    cache: &LstmCache,
    params: &LstmParams,
    grads: &mut LstmParams,
) -> Result<LstmStepGrads> {
    let h = params.hidden_size();
    if grad_hidden.len() != h || grad_cell.len() != h || cache.cell_tanh.len() != h {
        return Err(Error::usage("lstm backward: gradient/cache length mismatch"));
    }
    let gates = &cache.gates;
    let mut dz = vec![0.0; 4 * h];
    let mut cell_prev = vec![0.0; h];
    for j in 0..h {
        let (i_g, f_g, c_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
        let tc = cache.cell_tanh[j];
        let d_o = grad_hidden[j] * tc;
        let dc = grad_cell[j] + grad_hidden[j] * o_g * (1.0 - tc * tc);
        let d_f = dc * cache.cell_prev[j];
        let d_i = dc * c_g;
        let d_c = dc * i_g;
        cell_prev[j] = dc * f_g;
        dz[j] = d_i * i_g * (1.0 - i_g);
        dz[h + j] = d_f * f_g * (1.0 - f_g);
        dz[2 * h + j] = d_c * (1.0 - c_g * c_g);
        dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
    }
    for (b, d) in grads.bias.iter_mut().zip(&dz) {
        *b += d;
    }

    let d_pre = match &cache.norm {
        Some((normalized, inv_std)) => {
            let mut d_norm = vec![0.0; 4 * h];
            for k in 0..4 * h {
                grads.norm_gain[k] += dz[k] * normalized[k];
                grads.norm_shift[k] += dz[k];
                d_norm[k] = dz[k] * params.norm_gain[k];
            }
            standardize_backward(&d_norm, normalized, *inv_std)
        }
        None => dz,
    };

    grads.w_input.add_outer(&d_pre, &cache.input);
    grads.w_hidden.add_outer(&d_pre, &cache.hidden_in);
    let mut input = vec![0.0; params.input_size()];
    params.w_input.matvec_t_acc(&d_pre, &mut input);
    let mut hidden_prev = vec![0.0; h];
    params.w_hidden.matvec_t_acc(&d_pre, &mut hidden_prev);
    if let Some(m) = &cache.mask {
        for (d, mk) in hidden_prev.iter_mut().zip(m) {
            *d *= mk;
        }
    }
    Ok(LstmStepGrads {
        input,
        hidden_prev,
        cell_prev,
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
