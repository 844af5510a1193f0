use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::CorpusCer;
use super::optim::{adam_step, lr_at, OptState};
use super::TrainConfig;
use crate::data::{augment, preprocess, Direction, Jitter, LineSample};
use crate::decode::{decode_image, DecodeConfig};
use crate::error::{Error, Result};
use crate::lattice::{rnnt_loss_and_grad, LabelSeq, Vocab};
use crate::model::{backward_pass, forward_lattice_train, save_checkpoint, ModelConfig, ModelParams};
use crate::numerics::RealMatrix;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
const METRICS_HEADER: &str = "epoch\tmean_train_loss\tval_cer\tlr\twall_seconds";

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of random stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

/// A canonical, label-encoded training or validation line.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: RealMatrix,
    pub labels: LabelSeq,
    pub transcript: String,
}

/// Preprocesses every sample to `input_height` and encodes its transcript.
pub fn prepare_examples(samples: &[LineSample], vocab: &Vocab, input_height: usize) -> Result<Vec<Example>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let canon = preprocess(s, input_height)?;
            let labels = vocab
                .encode(&s.transcript)
                .map_err(|e| Error::data(format!("sample {i}"), e.to_string()))?;
            Ok(Example {
                image: canon.image,
                labels,
                transcript: s.transcript.clone(),
            })
        })
        .collect()
}

pub struct TrainData<'a> {
    pub train: &'a [Example],
    pub val: &'a [Example],
    pub vocab: &'a Vocab,
    pub jitter: Jitter,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_cer: f64,
    /// Rate used for the last step of the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters had the lowest validation CER.
    pub best_epoch: usize,
    pub best_val_cer: f64,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
}

fn map_ordered<T: Sync, R: Send>(
    pool: Option<&rayon::ThreadPool>,
    items: &[T],
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    match pool {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))
}

/// Greedy-decodes every example; returns the corpus CER and hypotheses.
pub fn evaluate(
    examples: &[Example],
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocab,
    dcfg: &DecodeConfig,
    workers: usize,
) -> Result<(CorpusCer, Vec<String>)> {
    let pool = build_pool(workers)?;
    let hyps = map_ordered(pool.as_ref(), examples, |ex| {
        decode_image(&ex.image, params, config, vocab, dcfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut corpus = CorpusCer::default();
    for (h, ex) in hyps.iter().zip(examples) {
        corpus.add(h, &ex.transcript);
    }
    Ok((corpus, hyps))
}

struct SampleJob<'a> {
    index: usize,
    example: &'a Example,
}

fn sample_loss_and_grad(
    job: &SampleJob,
    epoch: usize,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &TrainData,
) -> Result<(f64, ModelParams)> {
    let key = ((epoch as u64) << 32) | job.index as u64;
    let augmented;
    let image = if train_cfg.augment_strength > 0.0 {
        let line = LineSample {
            image: job.example.image.clone(),
            transcript: String::new(),
            direction: Direction::Horizontal,
        };
        let seed = derive_seed(train_cfg.seed, STREAM_AUGMENT, key);
        augmented = augment(&line, train_cfg.augment_strength, seed, &data.jitter, data.noise_sigma)?.image;
        &augmented
    } else {
        &job.example.image
    };
    let dropout_seed = derive_seed(train_cfg.seed, STREAM_DROPOUT, key);
    let diverged = |what: &str| {
        Error::Training(format!(
            "{what} in epoch {} on training example {} ({:?})",
            epoch + 1,
            job.index,
            job.example.transcript
        ))
    };
    let (lattice, cache) =
        forward_lattice_train(image, &job.example.labels, params, model_cfg, dropout_seed).map_err(|e| match e {
            Error::Numeric(m) => diverged(&format!("non-finite activations ({m})")),
            other => other,
        })?;
    let (loss, grad) = rnnt_loss_and_grad(&lattice, &job.example.labels).map_err(|_| diverged("non-finite loss"))?;
    if !loss.is_finite() {
        return Err(diverged("non-finite loss"));
    }
    let grads = backward_pass(&grad, &cache, params)?;
    if !grads.is_finite() {
        return Err(diverged("non-finite gradient"));
    }
    Ok((loss, grads))
}

/// Trains from `init` (or a fresh initialization from the run seed), keeping
/// the parameters with the lowest validation CER. `on_epoch` sees each row of
/// the metrics log as it is produced.
pub fn train_run(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &TrainData,
    init: Option<ModelParams>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    if data.vocab.len() != model_cfg.vocab_size {
        return Err(Error::config(format!(
            "charset has {} symbols, model expects {}",
            data.vocab.len(),
            model_cfg.vocab_size
        )));
    }
    let start = Instant::now();
    let pool = build_pool(train_cfg.workers)?;
    let mut params = match init {
        Some(p) => p,
        None => ModelParams::init(model_cfg, derive_seed(train_cfg.seed, STREAM_INIT, 0))?,
    };
    let mut opt = OptState::new(&params);
    let steps_per_epoch = train_cfg.steps_per_epoch(data.train.len());
    let dcfg = DecodeConfig::default();
    if let Some(dir) = &train_cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut step = 0usize;
    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            train_cfg.seed,
            STREAM_SHUFFLE,
            epoch as u64,
        )));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let jobs: Vec<SampleJob> = batch
                .iter()
                .map(|&index| SampleJob {
                    index,
                    example: &data.train[index],
                })
                .collect();
            let results = map_ordered(pool.as_ref(), &jobs, |job| {
                sample_loss_and_grad(job, epoch, &params, model_cfg, train_cfg, data)
            });
            let mut total: Option<ModelParams> = None;
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                match total.as_mut() {
                    Some(t) => t.add_assign(&g),
                    None => total = Some(g),
                }
            }
            let mut grads = total.expect("batches are non-empty");
            grads.scale(1.0 / batch.len() as f64);
            lr = lr_at(
                step,
                steps_per_epoch,
                train_cfg.base_lr,
                train_cfg.warmup_epochs,
                train_cfg.epochs,
            );
            adam_step(&mut params, &grads, &mut opt, lr, train_cfg.grad_clip_norm)
                .map_err(|e| Error::Training(format!("epoch {} step {step}: {e}", epoch + 1)))?;
            step += 1;
        }

        let val_cer = if data.val.is_empty() {
            f64::NAN
        } else {
            evaluate(data.val, &params, model_cfg, data.vocab, &dcfg, train_cfg.workers)?
                .0
                .rate()
        };
        let row = EpochMetrics {
            epoch: epoch + 1,
            mean_train_loss: loss_sum / data.train.len() as f64,
            val_cer,
            lr,
            wall_seconds: if train_cfg.log_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        let improved = match &best {
            None => true,
            Some((_, b, _)) => val_cer < *b,
        };
        if improved {
            best = Some((epoch + 1, val_cer, params.clone()));
        }
        if let Some(dir) = &train_cfg.checkpoint_dir {
            save_checkpoint(
                &dir.join(format!("epoch_{:03}.ckpt", epoch + 1)),
                model_cfg,
                data.vocab,
                &params,
            )?;
            if improved {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), model_cfg, data.vocab, &params)?;
            }
        }
        history.push(row);
        if let Some(dir) = &train_cfg.checkpoint_dir {
            write_metrics(&dir.join(METRICS_FILE), &history)?;
        }
        on_epoch(history.last().expect("just pushed"));
    }

    let (best_epoch, best_val_cer, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_cer,
        best_params,
        final_params: params,
    })
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut text = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.mean_train_loss, r.val_cer, r.lr, r.wall_seconds
        )
        .expect("write to String");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::data(
            format!("{}:1", path.display()),
            "unexpected metrics header",
        ));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let at = format!("{}:{}", path.display(), i + 2);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::data(at, "expected 5 columns"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(at.clone(), format!("bad number {s:?}")))
            };
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| Error::data(at.clone(), "bad epoch"))?,
                mean_train_loss: num(f[1])?,
                val_cer: num(f[2])?,
                lr: num(f[3])?,
                wall_seconds: num(f[4])?,
            })
        })
        .collect()
}
