//! Forward and backward passes of the visual encoder, linguistic encoder and
//! joint decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::conv::{conv_block_backward, conv_block_forward, ConvCache, FeatureMap};
use super::params::{BiLstmParams, ModelParams};
use crate::error::{Error, Result};
use crate::lattice::{LabelSeq, LogitLattice, BLANK};
use crate::numerics::{
    affine_backward_acc, log_softmax_backward_into, log_softmax_in_place, lstm_step, lstm_step_backward,
    lstm_step_cached, LstmCache, LstmParams, LstmState, RealMatrix,
};

/// Visual feature sequence `f_1 … f_T` (row `t` is frame `t+1`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    vectors: RealMatrix,
}

impl FeatureSeq {
    pub fn new(vectors: RealMatrix) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::usage("feature sequence must have at least one frame"));
        }
        Ok(Self { vectors })
    }

    pub fn frames(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, t: usize) -> &[f64] {
        self.vectors.row(t)
    }

    pub fn as_matrix(&self) -> &RealMatrix {
        &self.vectors
    }
}

/// Context vectors `g_0 … g_U`; `g_0` comes from the blank start token.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSeq {
    vectors: RealMatrix,
}

impl ContextSeq {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vector(&self, u: usize) -> &[f64] {
        self.vectors.row(u)
    }

    pub fn as_matrix(&self) -> &RealMatrix {
        &self.vectors
    }
}

/// Variational dropout masks, one per recurrent direction, fixed for a whole
/// sequence. Entries are `0` or `1/(1−p)`.
#[derive(Debug, Clone)]
pub(crate) struct DropoutMasks {
    visual: Vec<[Vec<f64>; 2]>,
    linguistic: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub(crate) fn sample(config: &ModelConfig, seed: u64) -> Option<Self> {
        let p = config.dropout_rate;
        if p <= 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let h = config.hidden_size;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..h)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let visual = (0..config.recurrent_layers_visual)
            .map(|_| [draw(&mut rng), draw(&mut rng)])
            .collect();
        let linguistic = (0..config.recurrent_layers_linguistic)
            .map(|_| draw(&mut rng))
            .collect();
        Some(Self { visual, linguistic })
    }
}

struct SequenceCache {
    steps: Vec<LstmCache>,
}

fn lstm_sequence_forward(
    inputs: &[Vec<f64>],
    params: &LstmParams,
    layer_norm: bool,
    mask: Option<&[f64]>,
    reverse: bool,
) -> Result<(Vec<Vec<f64>>, SequenceCache)> {
    let n = inputs.len();
    let mut outputs = vec![Vec::new(); n];
    let mut steps: Vec<Option<LstmCache>> = (0..n).map(|_| None).collect();
    let mut state = LstmState::zeros(params.hidden_size());
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let (next, cache) = lstm_step_cached(&inputs[t], &state, params, layer_norm, mask)?;
        outputs[t] = next.hidden.clone();
        steps[t] = Some(cache);
        state = next;
    }
    Ok((
        outputs,
        SequenceCache {
            steps: steps.into_iter().map(|c| c.expect("every step visited")).collect(),
        },
    ))
}

/// Returns `∂L/∂inputs` and accumulates parameter gradients.
fn lstm_sequence_backward(
    grad_outputs: &[Vec<f64>],
    cache: &SequenceCache,
    params: &LstmParams,
    grads: &mut LstmParams,
    reverse: bool,
) -> Result<Vec<Vec<f64>>> {
    let n = grad_outputs.len();
    let h = params.hidden_size();
    let mut d_inputs = vec![Vec::new(); n];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    // Walk against the processing order.
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..n)
    } else {
        Box::new((0..n).rev())
    };
    for t in order {
        let dh: Vec<f64> = grad_outputs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let g = lstm_step_backward(&dh, &dc_next, &cache.steps[t], params, grads)?;
        d_inputs[t] = g.input;
        dh_next = g.hidden_prev;
        dc_next = g.cell_prev;
    }
    Ok(d_inputs)
}

struct BiLayerCache {
    forward: SequenceCache,
    backward: SequenceCache,
}

pub(crate) struct VisualCache {
    conv: Vec<ConvCache>,
    conv_channels: usize,
    layers: Vec<BiLayerCache>,
    proj_inputs: Vec<Vec<f64>>,
}

pub(crate) struct LinguisticCache {
    tokens: Vec<usize>,
    layers: Vec<SequenceCache>,
    proj_inputs: Vec<Vec<f64>>,
}

fn check_image(image: &RealMatrix, config: &ModelConfig) -> Result<()> {
    if image.rows() == 0 || image.cols() == 0 {
        return Err(Error::usage("empty image"));
    }
    if image.rows() != config.input_height {
        return Err(Error::usage(format!(
            "image height {} does not match the model's input height {}",
            image.rows(),
            config.input_height
        )));
    }
    Ok(())
}

fn visual_forward(
    image: &RealMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    masks: Option<&DropoutMasks>,
) -> Result<(FeatureSeq, VisualCache)> {
    check_image(image, config)?;
    let mut map = FeatureMap {
        channels: 1,
        height: image.rows(),
        width: image.cols(),
        data: image.as_slice().to_vec(),
    };
    let mut conv = Vec::with_capacity(config.conv_blocks.len());
    for (block, p) in config.conv_blocks.iter().zip(&params.conv) {
        let (next, cache) = conv_block_forward(&map, block, p);
        conv.push(cache);
        map = next;
    }
    debug_assert_eq!(map.height, 1);
    let frames = map.width;
    let channels = map.channels;
    let mut seq: Vec<Vec<f64>> = (0..frames)
        .map(|t| (0..channels).map(|c| map.data[c * frames + t]).collect())
        .collect();

    let mut layers = Vec::with_capacity(params.visual_rnn.len());
    for (l, bi) in params.visual_rnn.iter().enumerate() {
        let (fm, bm) = match masks {
            Some(m) => (Some(m.visual[l][0].as_slice()), Some(m.visual[l][1].as_slice())),
            None => (None, None),
        };
        let (out_f, cache_f) = lstm_sequence_forward(&seq, &bi.forward, config.layer_norm, fm, false)?;
        let (out_b, cache_b) = lstm_sequence_forward(&seq, &bi.backward, config.layer_norm, bm, true)?;
        seq = out_f
            .into_iter()
            .zip(out_b)
            .map(|(mut f, b)| {
                f.extend(b);
                f
            })
            .collect();
        layers.push(BiLayerCache {
            forward: cache_f,
            backward: cache_b,
        });
    }

    let mut vectors = RealMatrix::zeros(frames, config.encoded_size);
    for (t, x) in seq.iter().enumerate() {
        let row = vectors.row_mut(t);
        row.copy_from_slice(&params.visual_proj_bias);
        params.visual_proj.matvec_acc(x, row);
    }
    Ok((
        FeatureSeq { vectors },
        VisualCache {
            conv,
            conv_channels: channels,
            layers,
            proj_inputs: seq,
        },
    ))
}

fn check_labels(y: &LabelSeq, config: &ModelConfig) -> Result<()> {
    if let Some(&bad) = y.ids().iter().find(|&&id| id == BLANK || id > config.vocab_size) {
        return Err(Error::usage(format!(
            "label id {bad} is not in [1, {}]",
            config.vocab_size
        )));
    }
    Ok(())
}

fn linguistic_forward(
    y: &LabelSeq,
    params: &ModelParams,
    config: &ModelConfig,
    masks: Option<&DropoutMasks>,
) -> Result<(ContextSeq, LinguisticCache)> {
    check_labels(y, config)?;
    let tokens: Vec<usize> = std::iter::once(BLANK).chain(y.ids().iter().copied()).collect();
    let mut seq: Vec<Vec<f64>> = tokens.iter().map(|&id| params.embedding.row(id).to_vec()).collect();
    let mut layers = Vec::with_capacity(params.linguistic_rnn.len());
    for (l, p) in params.linguistic_rnn.iter().enumerate() {
        let mask = masks.map(|m| m.linguistic[l].as_slice());
        let (out, cache) = lstm_sequence_forward(&seq, p, config.layer_norm, mask, false)?;
        seq = out;
        layers.push(cache);
    }
    let mut vectors = RealMatrix::zeros(tokens.len(), config.encoded_size);
    for (u, x) in seq.iter().enumerate() {
        let row = vectors.row_mut(u);
        row.copy_from_slice(&params.linguistic_proj_bias);
        params.linguistic_proj.matvec_acc(x, row);
    }
    Ok((
        ContextSeq { vectors },
        LinguisticCache {
            tokens,
            layers,
            proj_inputs: seq,
        },
    ))
}

/// Image → `f_1 … f_T`. The image must be `input_height` rows high with
/// values in `[0, 1]`.
pub fn visual_encode(image: &RealMatrix, params: &ModelParams, config: &ModelConfig) -> Result<FeatureSeq> {
    Ok(visual_forward(image, params, config, None)?.0)
}

/// `(∅, y₁, …, y_U)` → `g_0 … g_U`.
pub fn linguistic_encode(y: &LabelSeq, params: &ModelParams, config: &ModelConfig) -> Result<ContextSeq> {
    Ok(linguistic_forward(y, params, config, None)?.0)
}

/// Zero state for every linguistic recurrent layer.
pub fn linguistic_start_state(config: &ModelConfig) -> Vec<LstmState> {
    (0..config.recurrent_layers_linguistic)
        .map(|_| LstmState::zeros(config.hidden_size))
        .collect()
}

/// One incremental step of the linguistic encoder: feeds `prev_label`
/// (blank for the start token) and returns the context vector with the new
/// state stack. The input state is left untouched.
pub fn linguistic_step(
    prev_label: usize,
    state: &[LstmState],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Vec<f64>, Vec<LstmState>)> {
    if prev_label > config.vocab_size {
        return Err(Error::usage(format!(
            "label {prev_label} outside the extended vocabulary of size {}",
            config.classes()
        )));
    }
    if state.len() != params.linguistic_rnn.len() {
        return Err(Error::usage(format!(
            "state stack has {} layers, model has {}",
            state.len(),
            params.linguistic_rnn.len()
        )));
    }
    let mut x = params.embedding.row(prev_label).to_vec();
    let mut next = Vec::with_capacity(state.len());
    for (p, s) in params.linguistic_rnn.iter().zip(state) {
        let (out, new_state) = lstm_step(&x, s, p, config.layer_norm)?;
        x = out;
        next.push(new_state);
    }
    let mut g = params.linguistic_proj_bias.clone();
    params.linguistic_proj.matvec_acc(&x, &mut g);
    Ok((g, next))
}

/// `log_softmax(W^joint · tanh(f + g + b))`.
pub fn joint(f: &[f64], g: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let e = params.joint_bias.len();
    if f.len() != e || g.len() != e {
        return Err(Error::usage(format!(
            "joint expects vectors of length {e}, got {} and {}",
            f.len(),
            g.len()
        )));
    }
    let hidden = joint_hidden(f, g, &params.joint_bias);
    let mut out = vec![0.0; params.joint_out.rows()];
    params.joint_out.matvec_acc(&hidden, &mut out);
    log_softmax_in_place(&mut out);
    Ok(out)
}

#[inline]
fn joint_hidden(f: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    f.iter().zip(g).zip(b).map(|((a, c), d)| (a + c + d).tanh()).collect()
}

/// Activations kept by [`forward_lattice`] for [`backward_pass`].
pub struct ForwardCache {
    visual: VisualCache,
    linguistic: LinguisticCache,
    /// `tanh` activations, `T·(U+1) × encoded`.
    joint_hidden: Vec<f64>,
    lattice: LogitLattice,
}

impl ForwardCache {
    pub fn lattice(&self) -> &LogitLattice {
        &self.lattice
    }
}

/// Builds the full `T × (U+1) × (K+1)` lattice; entry `(t, u, ·)` is
/// `joint(f_{t+1}, g_u)`.
pub fn forward_lattice(
    image: &RealMatrix,
    y: &LabelSeq,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(LogitLattice, ForwardCache)> {
    forward_impl(image, y, params, config, None)
}

/// As [`forward_lattice`], with variational dropout masks drawn from `seed`
/// when the configured rate is positive.
pub fn forward_lattice_train(
    image: &RealMatrix,
    y: &LabelSeq,
    params: &ModelParams,
    config: &ModelConfig,
    dropout_seed: u64,
) -> Result<(LogitLattice, ForwardCache)> {
    let masks = DropoutMasks::sample(config, dropout_seed);
    forward_impl(image, y, params, config, masks.as_ref())
}

fn forward_impl(
    image: &RealMatrix,
    y: &LabelSeq,
    params: &ModelParams,
    config: &ModelConfig,
    masks: Option<&DropoutMasks>,
) -> Result<(LogitLattice, ForwardCache)> {
    let (features, visual) = visual_forward(image, params, config, masks)?;
    let (context, linguistic) = linguistic_forward(y, params, config, masks)?;
    let frames = features.frames();
    let rows = context.len();
    let classes = config.classes();
    let e = config.encoded_size;
    let mut hidden_all = Vec::with_capacity(frames * rows * e);
    let mut logits = Vec::with_capacity(frames * rows * classes);
    for t in 0..frames {
        for u in 0..rows {
            let hidden = joint_hidden(features.vector(t), context.vector(u), &params.joint_bias);
            let start = logits.len();
            logits.resize(start + classes, 0.0);
            params.joint_out.matvec_acc(&hidden, &mut logits[start..]);
            hidden_all.extend(hidden);
        }
    }
    let lattice = LogitLattice::from_logits(frames, rows, classes, logits)?;
    let cache = ForwardCache {
        visual,
        linguistic,
        joint_hidden: hidden_all,
        lattice: lattice.clone(),
    };
    Ok((lattice, cache))
}

/// Parameter gradients from `∂L/∂lattice` (at the log-probability level, as
/// returned by [`crate::lattice::rnnt_grad`]).
pub fn backward_pass(grad: &[f64], cache: &ForwardCache, params: &ModelParams) -> Result<ModelParams> {
    let lat = &cache.lattice;
    if grad.len() != lat.values().len() {
        return Err(Error::usage(format!(
            "gradient has {} entries, cached lattice has {}",
            grad.len(),
            lat.values().len()
        )));
    }
    let (frames, rows, classes) = (lat.frames(), lat.rows(), lat.classes());
    if cache.visual.proj_inputs.len() != frames || cache.linguistic.tokens.len() != rows {
        return Err(Error::usage("forward cache is inconsistent with its lattice"));
    }
    let e = params.joint_bias.len();
    let mut grads = params.zeros_like();

    // Joint decoder.
    let mut d_f = vec![vec![0.0; e]; frames];
    let mut d_g = vec![vec![0.0; e]; rows];
    let mut d_logits = vec![0.0; classes];
    let mut d_hidden = vec![0.0; e];
    for t in 0..frames {
        for u in 0..rows {
            let cell = t * rows + u;
            let g = &grad[cell * classes..(cell + 1) * classes];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            log_softmax_backward_into(g, lat.slice(t, u), &mut d_logits);
            let hidden = &cache.joint_hidden[cell * e..(cell + 1) * e];
            grads.joint_out.add_outer(&d_logits, hidden);
            d_hidden.fill(0.0);
            params.joint_out.matvec_t_acc(&d_logits, &mut d_hidden);
            for j in 0..e {
                let d_pre = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
                d_f[t][j] += d_pre;
                d_g[u][j] += d_pre;
                grads.joint_bias[j] += d_pre;
            }
        }
    }

    visual_backward(&d_f, &cache.visual, params, &mut grads)?;
    linguistic_backward(&d_g, &cache.linguistic, params, &mut grads)?;
    Ok(grads)
}

fn visual_backward(d_f: &[Vec<f64>], cache: &VisualCache, params: &ModelParams, grads: &mut ModelParams) -> Result<()> {
    let mut d_seq: Vec<Vec<f64>> = d_f
        .iter()
        .zip(&cache.proj_inputs)
        .map(|(df, x)| {
            affine_backward_acc(
                df,
                x,
                &params.visual_proj,
                &mut grads.visual_proj,
                &mut grads.visual_proj_bias,
            )
        })
        .collect();

    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let bi: &BiLstmParams = &params.visual_rnn[l];
        let h = bi.forward.hidden_size();
        let d_fwd: Vec<Vec<f64>> = d_seq.iter().map(|d| d[..h].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = d_seq.iter().map(|d| d[h..].to_vec()).collect();
        let gl = &mut grads.visual_rnn[l];
        let a = lstm_sequence_backward(&d_fwd, &layer.forward, &bi.forward, &mut gl.forward, false)?;
        let b = lstm_sequence_backward(&d_bwd, &layer.backward, &bi.backward, &mut gl.backward, true)?;
        d_seq = a
            .into_iter()
            .zip(b)
            .map(|(mut x, y)| {
                x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                x
            })
            .collect();
    }

    // Back to the 1-row feature map, channel-major.
    let frames = d_seq.len();
    let channels = cache.conv_channels;
    let mut d_map = vec![0.0; channels * frames];
    for (t, d) in d_seq.iter().enumerate() {
        for c in 0..channels {
            d_map[c * frames + t] = d[c];
        }
    }
    for i in (0..cache.conv.len()).rev() {
        let need_input = i > 0;
        let d_in = conv_block_backward(&d_map, &cache.conv[i], &params.conv[i], &mut grads.conv[i], need_input);
        if let Some(d) = d_in {
            d_map = d;
        }
    }
    Ok(())
}

fn linguistic_backward(
    d_g: &[Vec<f64>],
    cache: &LinguisticCache,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Result<()> {
    let mut d_seq: Vec<Vec<f64>> = d_g
        .iter()
        .zip(&cache.proj_inputs)
        .map(|(dg, x)| {
            affine_backward_acc(
                dg,
                x,
                &params.linguistic_proj,
                &mut grads.linguistic_proj,
                &mut grads.linguistic_proj_bias,
            )
        })
        .collect();
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        d_seq = lstm_sequence_backward(
            &d_seq,
            layer,
            &params.linguistic_rnn[l],
            &mut grads.linguistic_rnn[l],
            false,
        )?;
    }
    for (&token, d) in cache.tokens.iter().zip(&d_seq) {
        for (gw, v) in grads.embedding.row_mut(token).iter_mut().zip(d) {
            *gw += v;
        }
    }
    Ok(())
}
