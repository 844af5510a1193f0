mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnnt_core::data::{
    load_charset, load_dataset_dir, load_manifest, preprocess, read_image, write_synthetic_dataset, Charset, Direction,
    LineSample,
};
use rnnt_core::decode::decode_image;
use rnnt_core::model::{load_checkpoint, Checkpoint};
use rnnt_core::train::{evaluate, prepare_examples, train_run, TrainData};
use rnnt_core::verify::{run_verification, VerifyOptions};

use config::{first_difference, RunConfig};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<rnnt_core::Error> for CliError {
    fn from(e: rnnt_core::Error) -> Self {
        use rnnt_core::Error::*;
        let code = match &e {
            Usage(_) => EXIT_USAGE,
            Config(_) => EXIT_CONFIG,
            Io { .. } | Data { .. } => EXIT_IO,
            Numeric(_) | Training(_) => EXIT_VERIFY_FAILED,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "rnnt", version, about = "RNN-Transducer text-line recognizer")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`, which also seeds synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the reproducibility reference.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (images, charset, train/val manifests).
    Synth,
    /// Train a model; writes per-epoch checkpoints, `best.ckpt` and `metrics.tsv`.
    Train {
        /// Dataset directory as written by `synth`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report corpus CER of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Charset expected to match the checkpoint's.
        #[arg(long)]
        charset: Option<PathBuf>,
    },
    /// Print one transcript per image.
    Decode {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "horizontal")]
        direction: String,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Verify {
        /// Random lattices per check.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Corrupt analytic gradients to confirm the checks can fail.
        #[arg(long)]
        mutate_gradient: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        cfg.train.workers = w;
    }
    let out = cli.out.clone().or_else(|| cfg.paths.out_dir.clone());
    match cli.command {
        Command::Synth => cmd_synth(&cfg, out),
        Command::Train { data, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
                cfg.train.validate()?;
            }
            cmd_train(cfg, out, data)
        }
        Command::Eval {
            checkpoint,
            manifest,
            charset,
        } => cmd_eval(&cfg, checkpoint, manifest, charset),
        Command::Decode {
            checkpoint,
            direction,
            images,
        } => cmd_decode(&cfg, checkpoint, &direction, &images),
        Command::Verify { cases, mutate_gradient } => cmd_verify(&cfg, cases, mutate_gradient),
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.ok_or_else(|| CliError::usage("an output directory is required (--out or paths.out_dir)"))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn cmd_synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<u8, CliError> {
    let out = require_out(out)?;
    create_dir(&out)?;
    let summary = with_workers(cfg.train.workers, || {
        write_synthetic_dataset(&out, &cfg.synth, cfg.train.seed)
    })??;
    println!(
        "wrote {} training and {} validation lines to {}",
        summary.train,
        summary.val,
        out.display()
    );
    Ok(0)
}

fn cmd_train(mut cfg: RunConfig, out: Option<PathBuf>, data: Option<PathBuf>) -> Result<u8, CliError> {
    let out = require_out(out.or_else(|| cfg.train.checkpoint_dir.clone()))?;
    let (charset, train, val) = match data {
        Some(dir) => {
            for f in [
                rnnt_core::data::CHARSET_FILE,
                rnnt_core::data::TRAIN_MANIFEST,
                rnnt_core::data::VAL_MANIFEST,
            ] {
                require_file(&dir.join(f), "dataset file")?;
            }
            load_dataset_dir(&dir)?
        }
        None => {
            let p = &cfg.paths;
            let (Some(tm), Some(vm), Some(cs)) = (&p.train_manifest, &p.val_manifest, &p.charset) else {
                return Err(CliError::usage(
                    "training data is required: --data DIR or paths.train_manifest, paths.val_manifest and paths.charset",
                ));
            };
            require_file(tm, "training manifest")?;
            require_file(vm, "validation manifest")?;
            require_file(cs, "charset")?;
            let charset = load_charset(cs)?;
            let train = load_manifest(tm, &charset)?;
            let val = load_manifest(vm, &charset)?;
            (charset, train, val)
        }
    };
    let model = cfg.model_or_default(charset.len());
    if model.vocab_size != charset.len() {
        return Err(CliError::config(format!(
            "model.vocab_size: {} vs charset size {}",
            model.vocab_size,
            charset.len()
        )));
    }
    let train_ex = prepare_examples(&train, &charset, model.input_height)?;
    let val_ex = prepare_examples(&val, &charset, model.input_height)?;
    create_dir(&out)?;
    cfg.model = Some(model.clone());
    cfg.train.checkpoint_dir = Some(out.clone());
    let resolved = serde_json::to_string_pretty(&cfg).expect("config serializes");
    std::fs::write(out.join("config.json"), resolved + "\n")
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", out.display())))?;

    let data = TrainData {
        train: &train_ex,
        val: &val_ex,
        vocab: &charset,
        jitter: cfg.synth.jitter,
        noise_sigma: cfg.synth.noise_sigma,
    };
    let outcome = train_run(&model, &cfg.train, &data, None, &mut |m| {
        println!(
            "epoch {:>3}  loss {:.4}  val CER {:.2}%  lr {:.3e}",
            m.epoch,
            m.mean_train_loss,
            100.0 * m.val_cer,
            m.lr
        );
    })?;
    println!(
        "best epoch {}: val CER {:.2}% ({})",
        outcome.best_epoch,
        100.0 * outcome.best_val_cer,
        out.join(rnnt_core::train::BEST_CHECKPOINT).display()
    );
    Ok(0)
}

fn load_checked_checkpoint(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<Checkpoint, CliError> {
    let path = checkpoint
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| CliError::usage("a checkpoint is required (--checkpoint or paths.checkpoint)"))?;
    require_file(&path, "checkpoint")?;
    let ck = load_checkpoint(&path)?;
    if let Some(model) = &cfg.model {
        let a = serde_json::to_value(&ck.config).expect("config serializes");
        let b = serde_json::to_value(model).expect("config serializes");
        if let Some(diff) = first_difference(&a, &b, "model") {
            return Err(CliError::config(format!(
                "checkpoint and config disagree at {diff} (checkpoint vs config)"
            )));
        }
    }
    Ok(ck)
}

fn charset_difference(checkpoint: &Charset, other: &Charset) -> Option<String> {
    let (a, b) = (checkpoint.symbols(), other.symbols());
    (0..a.len().max(b.len())).find_map(|i| match (a.get(i), b.get(i)) {
        (Some(x), Some(y)) if x == y => None,
        (x, y) => Some(format!(
            "label {}: checkpoint {} vs charset {}",
            i + 1,
            x.map_or("(absent)".into(), |c| format!("{c:?}")),
            y.map_or("(absent)".into(), |c| format!("{c:?}"))
        )),
    })
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    charset: Option<PathBuf>,
) -> Result<u8, CliError> {
    let manifest = manifest
        .or_else(|| cfg.paths.val_manifest.clone())
        .ok_or_else(|| CliError::usage("a manifest is required (--manifest or paths.val_manifest)"))?;
    require_file(&manifest, "manifest")?;
    let charset_path = charset.or_else(|| cfg.paths.charset.clone());
    if let Some(p) = &charset_path {
        require_file(p, "charset")?;
    }
    let ck = load_checked_checkpoint(cfg, checkpoint)?;
    if let Some(p) = &charset_path {
        if let Some(diff) = charset_difference(&ck.vocab, &load_charset(p)?) {
            return Err(CliError::config(format!("charset mismatch at {diff}")));
        }
    }
    let samples = load_manifest(&manifest, &ck.vocab)?;
    let examples = prepare_examples(&samples, &ck.vocab, ck.config.input_height)?;
    let (corpus, _) = evaluate(
        &examples,
        &ck.params,
        &ck.config,
        &ck.vocab,
        &cfg.decode,
        cfg.train.workers,
    )?;
    println!("CER: {:.2}%", 100.0 * corpus.rate());
    Ok(0)
}

fn cmd_decode(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    direction: &str,
    images: &[PathBuf],
) -> Result<u8, CliError> {
    let direction: Direction = direction.parse()?;
    for img in images {
        require_file(img, "image")?;
    }
    let ck = load_checked_checkpoint(cfg, checkpoint)?;
    for img in images {
        let sample = LineSample::new(read_image(img)?, "", direction)?;
        let canon = preprocess(&sample, ck.config.input_height)?;
        println!(
            "{}",
            decode_image(&canon.image, &ck.params, &ck.config, &ck.vocab, &cfg.decode)?
        );
    }
    Ok(0)
}

fn cmd_verify(cfg: &RunConfig, cases: usize, mutate_gradient: bool) -> Result<u8, CliError> {
    if cases == 0 {
        return Err(CliError::usage("--cases must be at least 1"));
    }
    let report = run_verification(&VerifyOptions {
        cases,
        seed: cfg.train.seed,
        mutate_gradient,
    })?;
    for c in &report.checks {
        println!(
            "{}  {:<56} worst {:.3e}  (tolerance {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance
        );
    }
    if report.passed() {
        println!("all checks passed");
        Ok(0)
    } else {
        println!("verification FAILED");
        Ok(EXIT_VERIFY_FAILED)
    }
}
