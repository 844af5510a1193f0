//! Self-check suite behind `rnnt verify`: runs the exact loss against
//! exhaustive enumeration, analytic gradients against central differences,
//! the per-diagonal mass law, alignment counts, and the greedy search against
//! a scripted trace. Each check reports its worst observed error.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{greedy_search, DecodeConfig, DecodeMode, StepScorer};
use crate::error::Result;
use crate::lattice::{
    brute_force_log_prob, enumerate_alignments, logits_grad, remove_blanks, rnnt_forward, rnnt_grad, rnnt_loss,
    rnnt_loss_and_grad, rnnt_loss_brute, rnnt_tables, LabelSeq, LogitLattice,
};
use crate::model::{backward_pass, forward_lattice, ConvBlock, ModelConfig, ModelParams};
use crate::numerics::RealMatrix;

const FD_STEP: f64 = 1e-5;
const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Random lattices per lattice-level check.
    pub cases: usize,
    pub seed: u64,
    /// Corrupts analytic gradients before comparison; every gradient check
    /// must then fail.
    pub mutate_gradient: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            cases: 100,
            seed: 0,
            mutate_gradient: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        worst,
        tolerance,
        passed: worst < tolerance,
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

fn central_diff(x: &mut [f64], i: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x);
    x[i] = orig - FD_STEP;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

fn mutate(grad: &mut [f64], on: bool) {
    if on {
        if let Some(g) = grad.iter_mut().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
            *g *= 1.01;
        }
    }
}

struct Case {
    lattice: LogitLattice,
    logits: Vec<f64>,
    labels: LabelSeq,
}

fn random_case(rng: &mut ChaCha8Rng, t: usize, u: usize, k: usize) -> Result<Case> {
    let n = t * (u + 1) * (k + 1);
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels = LabelSeq::new((0..u).map(|_| rng.random_range(1..=k)).collect())?;
    let lattice = LogitLattice::from_logits(t, u + 1, k + 1, logits.clone())?;
    Ok(Case {
        lattice,
        logits,
        labels,
    })
}

fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=4),
        rng.random_range(0..=3),
        rng.random_range(1..=5),
    )
}

pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    // Exact loss against enumeration.
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let (t, u, k) = random_shape(&mut rng);
        let c = random_case(&mut rng, t, u, k)?;
        let (_, lp) = rnnt_forward(&c.lattice, &c.labels)?;
        worst = worst.max((lp + rnnt_loss_brute(&c.lattice, &c.labels)?).abs());
    }
    checks.push(check("loss: |DP - brute force|", worst, 1e-9));

    // Alignment counts.
    let mut worst = 0.0f64;
    for t in 1..=6 {
        for u in 0..=5 {
            let y = LabelSeq::new(vec![1; u])?;
            let all = enumerate_alignments(t, &y)?;
            let expected = binomial(t + u - 1, u);
            let bad = all
                .iter()
                .filter(|a| remove_blanks(a, 2).ok().as_ref() != Some(&y))
                .count();
            worst = worst.max((all.len() as f64 - expected as f64).abs() + bad as f64);
        }
    }
    checks.push(check("alignments: count and blank removal mismatches", worst, 0.5));

    // Per-diagonal transition mass.
    let mut worst = 0.0f64;
    for _ in 0..opts.cases {
        let (t, u, k) = random_shape(&mut rng);
        let c = random_case(&mut rng, t, u, k)?;
        let tables = rnnt_tables(&c.lattice, &c.labels)?;
        let grad = rnnt_grad(&c.lattice, &c.labels, &tables)?;
        let classes = c.lattice.classes();
        let mut mass = vec![0.0; t + u];
        for tt in 0..t {
            for uu in 0..=u {
                let base = c.lattice.index(tt, uu, 0);
                mass[tt + uu] -= grad[base..base + classes].iter().sum::<f64>();
            }
        }
        worst = mass.iter().fold(worst, |w, m| w.max((m - 1.0).abs()));
    }
    checks.push(check("diagonals: |transition mass - 1|", worst, 1e-9));

    // Lattice gradients against central differences of the enumerated loss.
    let mut worst = 0.0f64;
    for _ in 0..opts.cases.min(20) {
        let (t, u, k) = random_shape(&mut rng);
        let mut c = random_case(&mut rng, t, u, k)?;
        let (_, grad) = rnnt_loss_and_grad(&c.lattice, &c.labels)?;
        let mut analytic = logits_grad(&c.lattice, &grad)?;
        mutate(&mut analytic, opts.mutate_gradient);
        let labels = c.labels.clone();
        let mut f = |z: &[f64]| {
            let lat = LogitLattice::from_logits(t, u + 1, k + 1, z.to_vec()).expect("finite logits");
            -brute_force_log_prob(&lat, &labels).expect("small lattice")
        };
        for i in 0..c.logits.len() {
            let numeric = central_diff(&mut c.logits, i, &mut f);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    checks.push(check(
        "lattice gradient: relative error vs finite differences",
        worst,
        1e-6,
    ));

    checks.push(check(
        "model gradient: relative error vs finite differences",
        model_gradient_error(&mut rng, opts.mutate_gradient)?,
        1e-4,
    ));

    checks.push(check(
        "greedy search: mismatches against scripted trace",
        greedy_trace_mismatches()?,
        0.5,
    ));

    Ok(VerifyReport { checks })
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k.min(n - k)).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn doll_config() -> ModelConfig {
    ModelConfig {
        conv_blocks: vec![
            ConvBlock {
                out_channels: 2,
                kernel: 3,
                pool: [2, 2],
            },
            ConvBlock {
                out_channels: 3,
                kernel: 3,
                pool: [2, 1],
            },
        ],
        recurrent_layers_visual: 1,
        recurrent_layers_linguistic: 1,
        hidden_size: 4,
        embed_size: 3,
        encoded_size: 5,
        vocab_size: 4,
        input_height: 4,
        dropout_rate: 0.0,
        layer_norm: true,
    }
}

fn model_gradient_error(rng: &mut ChaCha8Rng, mutate_on: bool) -> Result<f64> {
    let cfg = doll_config();
    let mut params = ModelParams::init(&cfg, rng.random())?;
    for t in params.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let image = RealMatrix::from_fn(4, 6, |_, _| rng.random_range(0.0..1.0));
    let y = LabelSeq::new(vec![2, 4])?;
    let (lat, cache) = forward_lattice(&image, &y, &params, &cfg)?;
    let (_, grad) = rnnt_loss_and_grad(&lat, &y)?;
    let grads = backward_pass(&grad, &cache, &params)?;
    let mut analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data.iter().copied()).collect();
    mutate(&mut analytic, mutate_on);
    let mut flat: Vec<f64> = params.tensors().iter().flat_map(|t| t.data.iter().copied()).collect();
    let mut f = |v: &[f64]| {
        let mut off = 0;
        for t in params.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        let lat = forward_lattice(&image, &y, &params, &cfg).expect("valid model").0;
        rnnt_loss(&lat, &y).expect("finite loss")
    };
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let numeric = central_diff(&mut flat, i, &mut f);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Scorer whose argmax at `(frame, emitted-so-far)` comes from a table;
/// unlisted pairs score blank.
struct Scripted {
    frames: usize,
    table: HashMap<(usize, Vec<usize>), usize>,
}

impl StepScorer for Scripted {
    type State = Vec<usize>;

    fn frames(&self) -> usize {
        self.frames
    }

    fn start(&self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn scores(&self, t: usize, state: &Vec<usize>) -> Result<Vec<f64>> {
        let mut s = vec![0.0; 5];
        s[*self.table.get(&(t, state.clone())).unwrap_or(&0)] = 1.0;
        Ok(s)
    }

    fn advance(&self, state: &Vec<usize>, label: usize) -> Result<Vec<usize>> {
        let mut next = state.clone();
        next.push(label);
        Ok(next)
    }
}

fn greedy_trace_mismatches() -> Result<f64> {
    let entries: [(usize, &[usize], usize); 5] = [
        (0, &[], 3),
        (1, &[3], 1),
        (1, &[3, 1], 4),
        (2, &[3, 1], 0),
        (2, &[3, 1, 4], 2),
    ];
    let scorer = Scripted {
        frames: 3,
        table: entries.iter().map(|&(t, c, k)| ((t, c.to_vec()), k)).collect(),
    };
    let single = greedy_search(&scorer, &DecodeConfig::default())?;
    let multi = greedy_search(
        &scorer,
        &DecodeConfig {
            mode: DecodeMode::MultiEmit,
            max_symbols_per_frame: 3,
        },
    )?;
    Ok(f64::from(u8::from(single.ids() != [3, 1])) + f64::from(u8::from(multi.ids() != [3, 1, 4, 2])))
}
