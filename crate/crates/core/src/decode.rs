//! Greedy transcription.
//!
//! The search walks the frames once. At each frame it scores the current
//! `(f_t, g)` pair, takes the argmax (lowest index on ties, so blank wins),
//! and on a non-blank label appends it and advances the linguistic state.
//! [`DecodeMode::PaperGreedy`] emits at most one label per frame;
//! [`DecodeMode::MultiEmit`] re-scores the same frame with the new context
//! until blank or the per-frame cap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LabelSeq, Vocab, BLANK};
use crate::model::{
    joint, linguistic_start_state, linguistic_step, visual_encode, FeatureSeq, ModelConfig, ModelParams,
};
use crate::numerics::{LstmState, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    PaperGreedy,
    MultiEmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    #[serde(default)]
    pub mode: DecodeMode,
    /// Only consulted in [`DecodeMode::MultiEmit`].
    #[serde(default = "default_max_symbols")]
    pub max_symbols_per_frame: usize,
}

fn default_max_symbols() -> usize {
    3
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::PaperGreedy,
            max_symbols_per_frame: default_max_symbols(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_symbols_per_frame == 0 {
            return Err(Error::config("max_symbols_per_frame must be at least 1"));
        }
        Ok(())
    }

    fn per_frame_cap(&self) -> usize {
        match self.mode {
            DecodeMode::PaperGreedy => 1,
            DecodeMode::MultiEmit => self.max_symbols_per_frame,
        }
    }
}

/// What the search needs from a model: per-frame scores given a context
/// state, and a way to advance that state by one emitted label.
pub trait StepScorer {
    type State;

    fn frames(&self) -> usize;

    /// State after consuming the start token.
    fn start(&self) -> Result<Self::State>;

    /// Scores over the extended label set at frame `t` (0-based).
    fn scores(&self, t: usize, state: &Self::State) -> Result<Vec<f64>>;

    fn advance(&self, state: &Self::State, label: usize) -> Result<Self::State>;
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn greedy_search<S: StepScorer>(scorer: &S, dcfg: &DecodeConfig) -> Result<LabelSeq> {
    dcfg.validate()?;
    let frames = scorer.frames();
    if frames == 0 {
        return Err(Error::usage("cannot decode an empty feature sequence"));
    }
    let cap = dcfg.per_frame_cap();
    let mut state = scorer.start()?;
    let mut out = Vec::new();
    for t in 0..frames {
        for _ in 0..cap {
            let scores = scorer.scores(t, &state)?;
            let pred = argmax(&scores).ok_or_else(|| Error::usage("scorer returned no scores"))?;
            if pred == BLANK {
                break;
            }
            out.push(pred);
            state = scorer.advance(&state, pred)?;
        }
    }
    LabelSeq::new(out)
}

/// The trained networks as a [`StepScorer`] over precomputed features.
pub struct ModelScorer<'a> {
    features: &'a FeatureSeq,
    params: &'a ModelParams,
    config: &'a ModelConfig,
}

impl<'a> ModelScorer<'a> {
    pub fn new(features: &'a FeatureSeq, params: &'a ModelParams, config: &'a ModelConfig) -> Self {
        Self {
            features,
            params,
            config,
        }
    }
}

/// Context vector plus the recurrent state that produced it.
pub struct ContextState {
    g: Vec<f64>,
    layers: Vec<LstmState>,
}

impl StepScorer for ModelScorer<'_> {
    type State = ContextState;

    fn frames(&self) -> usize {
        self.features.frames()
    }

    fn start(&self) -> Result<ContextState> {
        let (g, layers) = linguistic_step(BLANK, &linguistic_start_state(self.config), self.params, self.config)?;
        Ok(ContextState { g, layers })
    }

    fn scores(&self, t: usize, state: &ContextState) -> Result<Vec<f64>> {
        joint(self.features.vector(t), &state.g, self.params)
    }

    fn advance(&self, state: &ContextState, label: usize) -> Result<ContextState> {
        let (g, layers) = linguistic_step(label, &state.layers, self.params, self.config)?;
        Ok(ContextState { g, layers })
    }
}

pub fn greedy_decode(
    features: &FeatureSeq,
    params: &ModelParams,
    config: &ModelConfig,
    dcfg: &DecodeConfig,
) -> Result<LabelSeq> {
    greedy_search(&ModelScorer::new(features, params, config), dcfg)
}

pub fn decode_image(
    image: &RealMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocab,
    dcfg: &DecodeConfig,
) -> Result<String> {
    if vocab.len() != config.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} symbols, model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let features = visual_encode(image, params, config)?;
    let labels = greedy_decode(&features, params, config, dcfg)?;
    vocab.decode(&labels)
}
