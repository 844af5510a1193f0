//! Line images, their transcripts, and where they come from: a procedural
//! generator of glyph lines, file formats for external datasets, and the
//! geometric preprocessing and augmentation applied before the model.
//!
//! Pixel values are intensities in `[0, 1]`; synthetic lines draw ink at 1.0
//! on a 0.0 background so that zero fill at borders reads as background.

mod formats;
mod imaging;
mod layout;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

pub use formats::{
    decode_pgm, encode_pgm, load_charset, load_manifest, read_image, read_manifest, write_charset, write_image,
    write_manifest, ManifestRow,
};
pub use imaging::{augment, preprocess, resize_bilinear, scaled_width};
pub use layout::{
    load_dataset_dir, write_synthetic_dataset, SynthSummary, CHARSET_FILE, IMAGE_DIR, TRAIN_MANIFEST, VAL_MANIFEST,
};
pub use synth::{
    glyph_bank, render_dataset, render_synthetic_line, synthetic_charset, Glyph, Jitter, SynthConfig, Synthesizer,
};

/// Label inventory of a dataset; see [`crate::lattice::Vocab`].
pub type Charset = crate::lattice::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Horizontal => "horizontal",
            Direction::Vertical => "vertical",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" => Ok(Direction::Horizontal),
            "vertical" => Ok(Direction::Vertical),
            other => Err(Error::usage(format!(
                "direction must be 'horizontal' or 'vertical', got {other:?}"
            ))),
        }
    }
}

/// A text-line image with its transcript. Vertical lines read top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSample {
    pub image: RealMatrix,
    pub transcript: String,
    pub direction: Direction,
}

impl LineSample {
    pub fn new(image: RealMatrix, transcript: impl Into<String>, direction: Direction) -> Result<Self> {
        if image.rows() == 0 || image.cols() == 0 {
            return Err(Error::usage("line image must have at least one pixel"));
        }
        Ok(Self {
            image,
            transcript: transcript.into(),
            direction,
        })
    }
}

/// Per-sample seed for item `index` of a collection generated from `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Deterministic 9:1 split by index: every tenth item (indices 9, 19, …)
/// goes to validation.
pub fn split_train_val<T>(items: Vec<T>) -> (Vec<T>, Vec<T>) {
    let mut train = Vec::with_capacity(items.len() - items.len() / 10);
    let mut val = Vec::with_capacity(items.len() / 10);
    for (i, item) in items.into_iter().enumerate() {
        if i % 10 == 9 {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    (train, val)
}
