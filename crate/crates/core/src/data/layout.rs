//! Directory layout of a generated dataset:
//!
//! ```text
//! <dir>/charset.txt
//! <dir>/train.tsv
//! <dir>/val.tsv
//! <dir>/images/000000.pgm …
//! ```

use std::path::{Path, PathBuf};

use super::formats::{load_charset, load_manifest, write_charset, write_image, write_manifest, ManifestRow};
use super::synth::{render_dataset, synthetic_charset, SynthConfig};
use super::{split_train_val, Charset, LineSample};
use crate::error::{Error, Result};

pub const CHARSET_FILE: &str = "charset.txt";
pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const VAL_MANIFEST: &str = "val.tsv";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub train: usize,
    pub val: usize,
}

/// Renders `cfg.num_samples` lines from `seed` and writes them under `dir`,
/// split 9:1 by index.
pub fn write_synthetic_dataset(dir: &Path, cfg: &SynthConfig, seed: u64) -> Result<SynthSummary> {
    let charset = synthetic_charset(cfg.charset_size)?;
    let samples = render_dataset(cfg, seed, 0..cfg.num_samples)?;
    let images = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = PathBuf::from(IMAGE_DIR).join(format!("{i:06}.pgm"));
        write_image(&dir.join(&rel), &s.image)?;
        rows.push(ManifestRow {
            image: rel,
            direction: s.direction,
            transcript: s.transcript.clone(),
        });
    }
    let (train, val) = split_train_val(rows);
    write_charset(&dir.join(CHARSET_FILE), &charset)?;
    write_manifest(&dir.join(TRAIN_MANIFEST), &train)?;
    write_manifest(&dir.join(VAL_MANIFEST), &val)?;
    Ok(SynthSummary {
        train: train.len(),
        val: val.len(),
    })
}

/// Charset, training and validation samples of a directory in the layout above.
pub fn load_dataset_dir(dir: &Path) -> Result<(Charset, Vec<LineSample>, Vec<LineSample>)> {
    let charset = load_charset(&dir.join(CHARSET_FILE))?;
    let train = load_manifest(&dir.join(TRAIN_MANIFEST), &charset)?;
    let val = load_manifest(&dir.join(VAL_MANIFEST), &charset)?;
    Ok((charset, train, val))
}
