//! Test-only oracles shared by the integration suites. Nothing here calls the
//! code paths it is used to check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_core::lattice::{LabelSeq, LogitLattice};
use rnnt_core::model::{ConvBlock, ModelConfig};

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively; keeps round-off in `f(x±h)` from dominating near-zero entries.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central difference `(f(x + h) − f(x − h)) / 2h` of `f` with respect to
/// `x[i]`; restores `x[i]` afterwards.
pub fn central_diff(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x);
    x[i] = orig - FD_STEP;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Worst relative error between `analytic` and central differences of `f`
/// at every coordinate of `x`.
pub fn max_fd_error(x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = central_diff(x, i, &mut f);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, len: usize, k: usize) -> LabelSeq {
    LabelSeq::new((0..len).map(|_| rng.random_range(1..=k)).collect()).unwrap()
}

pub fn random_logits(rng: &mut ChaCha8Rng, t: usize, u: usize, k: usize) -> Vec<f64> {
    uniform_vec(rng, t * (u + 1) * (k + 1), -3.0, 3.0)
}

pub fn random_lattice(rng: &mut ChaCha8Rng, t: usize, u: usize, k: usize) -> LogitLattice {
    LogitLattice::from_logits(t, u + 1, k + 1, random_logits(rng, t, u, k)).unwrap()
}

/// `n choose k` by the multiplicative formula.
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Doll-sized model: 4-pixel-high images, two conv blocks, every size ≤ 6.
pub fn doll_config(k: usize) -> ModelConfig {
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
        vocab_size: k,
        input_height: 4,
        dropout_rate: 0.0,
        layer_norm: false,
    }
}

/// Independent edit distance: full `(m+1) × (n+1)` table, filled column-major.
pub fn edit_distance_full_table(a: &[char], b: &[char]) -> usize {
    let (m, n) = (a.len(), b.len());
    let mut d = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        d[0][j] = j;
    }
    for j in 1..=n {
        for i in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[m][n]
}
