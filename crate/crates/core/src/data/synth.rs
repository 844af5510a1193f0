use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::imaging::augment;
use super::{sample_seed, Charset, Direction, LineSample};
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// 5×5 binary mask, row-major.
pub type Glyph = [bool; 25];

const GLYPH_SIDE: usize = 5;
const GLYPH_MIN_HAMMING: usize = 5;
const GLYPH_INK_RANGE: (usize, usize) = (8, 17);
const GLYPH_BANK_SEED: u64 = 0x6c79_7068_5f62_616e;
const GLYPH_MAX_ATTEMPTS: u64 = 100_000;

/// Ranges for random affine distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    /// Maximum absolute rotation, degrees.
    pub rotation_deg: f64,
    /// Isotropic scale factor range.
    pub scale: [f64; 2],
    /// Horizontal shear coefficient range.
    pub shear: [f64; 2],
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            rotation_deg: 3.0,
            scale: [0.92, 1.08],
            shear: [-0.15, 0.15],
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            shear: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub charset_size: usize,
    /// Side of the square cell each glyph is drawn into, pixels.
    pub glyph_cell: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Inclusive range of blank columns between glyphs and at the margins.
    pub spacing: [usize; 2],
    pub jitter: Jitter,
    pub noise_sigma: f64,
    pub canvas_height: usize,
    pub num_samples: usize,
    /// Probability that a line is stored top-to-bottom.
    pub vertical_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            charset_size: 12,
            glyph_cell: 15,
            min_length: 1,
            max_length: 8,
            spacing: [2, 5],
            jitter: Jitter::default(),
            noise_sigma: 0.05,
            canvas_height: 32,
            num_samples: 2200,
            vertical_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.charset_size == 0 {
            return fail("charset_size must be at least 1".into());
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return fail(format!(
                "line length range [{}, {}] must satisfy 1 ≤ min ≤ max",
                self.min_length, self.max_length
            ));
        }
        if self.glyph_cell < GLYPH_SIDE || self.glyph_cell > self.canvas_height {
            return fail(format!(
                "glyph_cell {} must lie in [{GLYPH_SIDE}, canvas_height = {}]",
                self.glyph_cell, self.canvas_height
            ));
        }
        if self.spacing[0] > self.spacing[1] {
            return fail(format!("spacing range {:?} is not ordered", self.spacing));
        }
        let j = &self.jitter;
        if !(j.rotation_deg >= 0.0 && j.rotation_deg < 90.0) {
            return fail(format!("rotation_deg {} must lie in [0, 90)", j.rotation_deg));
        }
        if !(j.scale[0] > 0.0 && j.scale[0] <= j.scale[1]) {
            return fail(format!("scale range {:?} must be positive and ordered", j.scale));
        }
        if !(j.shear[0] <= j.shear[1] && j.shear[0].is_finite() && j.shear[1].is_finite()) {
            return fail(format!("shear range {:?} is not ordered", j.shear));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma {} must be ≥ 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.vertical_fraction) {
            return fail(format!(
                "vertical_fraction {} must lie in [0, 1]",
                self.vertical_fraction
            ));
        }
        Ok(())
    }
}

/// `K` symbols: `a`–`z` first, then CJK ideographs from U+4E00.
pub fn synthetic_charset(k: usize) -> Result<Charset> {
    let symbols = (0..k)
        .map(|i| {
            if i < 26 {
                char::from(b'a' + i as u8)
            } else {
                char::from_u32(0x4E00 + (i - 26) as u32).expect("CJK block is contiguous")
            }
        })
        .collect();
    Charset::new(symbols)
}

fn hamming(a: &Glyph, b: &Glyph) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Masks for classes `1..=k`, in order. Class `c`'s mask depends only on `c`
/// (and the masks before it), so the bank for `k` is a prefix of the bank
/// for any larger `k`. Every pair differs in at least five cells.
pub fn glyph_bank(k: usize) -> Result<Vec<Glyph>> {
    let mut bank: Vec<Glyph> = Vec::with_capacity(k);
    for class in 0..k as u64 {
        let mut found = None;
        for attempt in 0..GLYPH_MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(GLYPH_BANK_SEED ^ (class << 24) ^ attempt);
            let mut g = [false; 25];
            for cell in g.iter_mut() {
                *cell = rng.random::<bool>();
            }
            let ink = g.iter().filter(|&&b| b).count();
            if ink < GLYPH_INK_RANGE.0 || ink > GLYPH_INK_RANGE.1 {
                continue;
            }
            if bank.iter().all(|other| hamming(other, &g) >= GLYPH_MIN_HAMMING) {
                found = Some(g);
                break;
            }
        }
        match found {
            Some(g) => bank.push(g),
            None => {
                return Err(Error::config(format!(
                    "could not find a separable glyph for class {}",
                    class + 1
                )))
            }
        }
    }
    Ok(bank)
}

/// Renders synthetic lines for one configuration.
pub struct Synthesizer {
    cfg: SynthConfig,
    bank: Vec<Glyph>,
    charset: Charset,
}

impl Synthesizer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            bank: glyph_bank(cfg.charset_size)?,
            charset: synthetic_charset(cfg.charset_size)?,
        })
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn render(&self, seed: u64) -> Result<LineSample> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(cfg.min_length..=cfg.max_length);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..=cfg.charset_size)).collect();
        let vertical = rng.random::<f64>() < cfg.vertical_fraction;
        let mut gap = || rng.random_range(cfg.spacing[0]..=cfg.spacing[1]);
        let mut xs = Vec::with_capacity(len);
        let mut x = gap();
        for _ in 0..len {
            xs.push(x);
            x += cfg.glyph_cell + gap();
        }
        let width = x;
        let cell = cfg.glyph_cell;
        let base = (cfg.canvas_height - cell) / 2;
        let wobble = base.min(2);
        let mut image = RealMatrix::zeros(cfg.canvas_height, width);
        for (&id, &x0) in ids.iter().zip(&xs) {
            let y0 = base + rng.random_range(0..=2 * wobble) - wobble;
            let glyph = &self.bank[id - 1];
            for dy in 0..cell {
                for dx in 0..cell {
                    if glyph[(dy * GLYPH_SIDE / cell) * GLYPH_SIDE + dx * GLYPH_SIDE / cell] {
                        image.set(y0 + dy, x0 + dx, 1.0);
                    }
                }
            }
        }
        let transcript: String = ids
            .iter()
            .map(|&id| self.charset.symbol(id).expect("id drawn from the charset"))
            .collect();
        let clean = LineSample::new(image, transcript, Direction::Horizontal)?;
        let mut sample = augment(&clean, 1.0, rng.random(), &cfg.jitter, cfg.noise_sigma)?;
        // Quantize to 8-bit levels so PGM files round-trip exactly.
        for v in sample.image.as_mut_slice() {
            *v = (*v * 255.0).round() / 255.0;
        }
        if vertical {
            sample.image = sample.image.transpose();
            sample.direction = Direction::Vertical;
        }
        Ok(sample)
    }
}

pub fn render_synthetic_line(cfg: &SynthConfig, seed: u64) -> Result<LineSample> {
    Synthesizer::new(cfg)?.render(seed)
}

/// Samples `indices`, each rendered from [`sample_seed`]`(seed, i)`, in index
/// order regardless of thread count.
pub fn render_dataset(cfg: &SynthConfig, seed: u64, indices: Range<usize>) -> Result<Vec<LineSample>> {
    let synth = Synthesizer::new(cfg)?;
    indices
        .into_par_iter()
        .map(|i| synth.render(sample_seed(seed, i)))
        .collect()
}
