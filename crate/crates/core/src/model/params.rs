use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{LstmParams, RealMatrix};

/// Convolution weights are stored im2col-style: `out × (in·k·k)`, with the
/// column index `(in_channel·k + dy)·k + dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
    pub norm_gain: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

/// Every trainable tensor of the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvParams>,
    pub visual_rnn: Vec<BiLstmParams>,
    /// Visual projection (`encoded × 2H`), the `W^visual` role.
    pub visual_proj: RealMatrix,
    pub visual_proj_bias: Vec<f64>,
    /// `(K+1) × embed`; row 0 embeds the blank start token.
    pub embedding: RealMatrix,
    pub linguistic_rnn: Vec<LstmParams>,
    /// Linguistic projection (`encoded × H`), the `W^linguistic` role.
    pub linguistic_proj: RealMatrix,
    pub linguistic_proj_bias: Vec<f64>,
    /// Combination bias `b` inside the joint's `tanh`.
    pub joint_bias: Vec<f64>,
    /// `W^joint`, `(K+1) × encoded`.
    pub joint_out: RealMatrix,
}

/// Read-only view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl ModelParams {
    /// All-zero tensors shaped for `config`, with unit normalization gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let mut conv = Vec::new();
        let mut in_ch = 1;
        for b in &config.conv_blocks {
            conv.push(ConvParams {
                weight: RealMatrix::zeros(b.out_channels, in_ch * b.kernel * b.kernel),
                bias: vec![0.0; b.out_channels],
                norm_gain: vec![1.0; b.out_channels],
                norm_shift: vec![0.0; b.out_channels],
            });
            in_ch = b.out_channels;
        }
        let mut visual_rnn = Vec::new();
        let mut input = config.visual_feature_size();
        for _ in 0..config.recurrent_layers_visual {
            visual_rnn.push(BiLstmParams {
                forward: LstmParams::zeros(input, h),
                backward: LstmParams::zeros(input, h),
            });
            input = 2 * h;
        }
        let mut linguistic_rnn = Vec::new();
        let mut input = config.embed_size;
        for _ in 0..config.recurrent_layers_linguistic {
            linguistic_rnn.push(LstmParams::zeros(input, h));
            input = h;
        }
        let e = config.encoded_size;
        Ok(Self {
            conv,
            visual_rnn,
            visual_proj: RealMatrix::zeros(e, 2 * h),
            visual_proj_bias: vec![0.0; e],
            embedding: RealMatrix::zeros(config.classes(), config.embed_size),
            linguistic_rnn,
            linguistic_proj: RealMatrix::zeros(e, h),
            linguistic_proj_bias: vec![0.0; e],
            joint_bias: vec![0.0; e],
            joint_out: RealMatrix::zeros(config.classes(), e),
        })
    }

    /// Seeded initialization.
    ///
    /// Linear and convolution weights are uniform in `±√(6/(fan_in+fan_out))`,
    /// embeddings uniform in `±0.1`, forget-gate biases `1.0`, every other bias
    /// and shift `0`, every gain `1`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 1;
        for (block, cp) in config.conv_blocks.iter().zip(&mut p.conv) {
            let k2 = block.kernel * block.kernel;
            glorot(&mut rng, cp.weight.as_mut_slice(), in_ch * k2, block.out_channels * k2);
            in_ch = block.out_channels;
        }
        for layer in &mut p.visual_rnn {
            init_lstm(&mut rng, &mut layer.forward);
            init_lstm(&mut rng, &mut layer.backward);
        }
        glorot_matrix(&mut rng, &mut p.visual_proj);
        for v in p.embedding.as_mut_slice() {
            *v = rng.random_range(-0.1..=0.1);
        }
        for layer in &mut p.linguistic_rnn {
            init_lstm(&mut rng, layer);
        }
        glorot_matrix(&mut rng, &mut p.linguistic_proj);
        glorot_matrix(&mut rng, &mut p.joint_out);
        Ok(p)
    }

    /// Same shapes, every entry zero (gains included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        // Order must match `tensors_mut`.
        fn mat<'a>(name: String, m: &'a RealMatrix, out: &mut Vec<TensorRef<'a>>) {
            out.push(TensorRef {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_slice(),
            });
        }
        fn vec_ref<'a>(name: String, v: &'a [f64], out: &mut Vec<TensorRef<'a>>) {
            out.push(TensorRef {
                name,
                shape: vec![v.len()],
                data: v,
            });
        }
        fn lstm_refs<'a>(prefix: &str, l: &'a LstmParams, out: &mut Vec<TensorRef<'a>>) {
            mat(format!("{prefix}.w_input"), &l.w_input, out);
            mat(format!("{prefix}.w_hidden"), &l.w_hidden, out);
            vec_ref(format!("{prefix}.bias"), &l.bias, out);
            vec_ref(format!("{prefix}.norm_gain"), &l.norm_gain, out);
            vec_ref(format!("{prefix}.norm_shift"), &l.norm_shift, out);
        }
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            mat(format!("conv{i}.weight"), &c.weight, &mut out);
            vec_ref(format!("conv{i}.bias"), &c.bias, &mut out);
            vec_ref(format!("conv{i}.norm_gain"), &c.norm_gain, &mut out);
            vec_ref(format!("conv{i}.norm_shift"), &c.norm_shift, &mut out);
        }
        for (i, l) in self.visual_rnn.iter().enumerate() {
            lstm_refs(&format!("visual_rnn{i}.fwd"), &l.forward, &mut out);
            lstm_refs(&format!("visual_rnn{i}.bwd"), &l.backward, &mut out);
        }
        mat("visual_proj.weight".into(), &self.visual_proj, &mut out);
        vec_ref("visual_proj.bias".into(), &self.visual_proj_bias, &mut out);
        mat("embedding".into(), &self.embedding, &mut out);
        for (i, l) in self.linguistic_rnn.iter().enumerate() {
            lstm_refs(&format!("linguistic_rnn{i}"), l, &mut out);
        }
        mat("linguistic_proj.weight".into(), &self.linguistic_proj, &mut out);
        vec_ref("linguistic_proj.bias".into(), &self.linguistic_proj_bias, &mut out);
        vec_ref("joint.bias".into(), &self.joint_bias, &mut out);
        mat("joint.weight".into(), &self.joint_out, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn mat<'a>(name: String, m: &'a mut RealMatrix, out: &mut Vec<TensorMut<'a>>) {
            let shape = vec![m.rows(), m.cols()];
            out.push(TensorMut {
                name,
                shape,
                data: m.as_mut_slice(),
            });
        }
        fn vec_mut<'a>(name: String, v: &'a mut [f64], out: &mut Vec<TensorMut<'a>>) {
            out.push(TensorMut {
                name,
                shape: vec![v.len()],
                data: v,
            });
        }
        fn lstm_muts<'a>(prefix: &str, l: &'a mut LstmParams, out: &mut Vec<TensorMut<'a>>) {
            mat(format!("{prefix}.w_input"), &mut l.w_input, out);
            mat(format!("{prefix}.w_hidden"), &mut l.w_hidden, out);
            vec_mut(format!("{prefix}.bias"), &mut l.bias, out);
            vec_mut(format!("{prefix}.norm_gain"), &mut l.norm_gain, out);
            vec_mut(format!("{prefix}.norm_shift"), &mut l.norm_shift, out);
        }
        let mut out = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            mat(format!("conv{i}.weight"), &mut c.weight, &mut out);
            vec_mut(format!("conv{i}.bias"), &mut c.bias, &mut out);
            vec_mut(format!("conv{i}.norm_gain"), &mut c.norm_gain, &mut out);
            vec_mut(format!("conv{i}.norm_shift"), &mut c.norm_shift, &mut out);
        }
        for (i, l) in self.visual_rnn.iter_mut().enumerate() {
            lstm_muts(&format!("visual_rnn{i}.fwd"), &mut l.forward, &mut out);
            lstm_muts(&format!("visual_rnn{i}.bwd"), &mut l.backward, &mut out);
        }
        mat("visual_proj.weight".into(), &mut self.visual_proj, &mut out);
        vec_mut("visual_proj.bias".into(), &mut self.visual_proj_bias, &mut out);
        mat("embedding".into(), &mut self.embedding, &mut out);
        for (i, l) in self.linguistic_rnn.iter_mut().enumerate() {
            lstm_muts(&format!("linguistic_rnn{i}"), l, &mut out);
        }
        mat("linguistic_proj.weight".into(), &mut self.linguistic_proj, &mut out);
        vec_mut("linguistic_proj.bias".into(), &mut self.linguistic_proj_bias, &mut out);
        vec_mut("joint.bias".into(), &mut self.joint_bias, &mut out);
        mat("joint.weight".into(), &mut self.joint_out, &mut out);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor. Shapes must match.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(a.data.len(), b.data.len());
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Euclidean norm over every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn glorot(rng: &mut ChaCha8Rng, data: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data {
        *v = rng.random_range(-bound..=bound);
    }
}

fn glorot_matrix(rng: &mut ChaCha8Rng, m: &mut RealMatrix) {
    let (fan_out, fan_in) = (m.rows(), m.cols());
    glorot(rng, m.as_mut_slice(), fan_in, fan_out);
}

fn init_lstm(rng: &mut ChaCha8Rng, l: &mut LstmParams) {
    glorot_matrix(rng, &mut l.w_input);
    glorot_matrix(rng, &mut l.w_hidden);
    let h = l.hidden_size();
    l.bias.fill(0.0);
    l.bias[h..2 * h].fill(1.0);
}
