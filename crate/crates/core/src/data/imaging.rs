use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::synth::Jitter;
use super::{Direction, LineSample};
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// Bilinear sample with zero outside the image.
fn sample_zero_fill(img: &RealMatrix, y: f64, x: f64) -> f64 {
    let (h, w) = (img.rows() as isize, img.cols() as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (dy, dx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            img.get(r as usize, c as usize)
        }
    };
    let top = at(y0, x0) * (1.0 - dx) + at(y0, x0 + 1) * dx;
    let bottom = at(y0 + 1, x0) * (1.0 - dx) + at(y0 + 1, x0 + 1) * dx;
    top * (1.0 - dy) + bottom * dy
}

/// Warps `img` by `A = R(θ) · Shear(s) · Scale(k)` about its centre, sampling
/// the inverse map bilinearly. Output has the input's size.
fn affine_warp(img: &RealMatrix, theta: f64, shear: f64, scale: f64) -> RealMatrix {
    let (c, s) = (theta.cos(), theta.sin());
    // Forward map on (x, y): [[c, -s], [s, c]] · [[1, shear], [0, 1]] · scale.
    let a = [
        [c * scale, (c * shear - s) * scale],
        [s * scale, (s * shear + c) * scale],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let cy = (img.rows() as f64 - 1.0) / 2.0;
    let cx = (img.cols() as f64 - 1.0) / 2.0;
    RealMatrix::from_fn(img.rows(), img.cols(), |r, col| {
        let (x, y) = (col as f64 - cx, r as f64 - cy);
        let sx = inv[0][0] * x + inv[0][1] * y + cx;
        let sy = inv[1][0] * x + inv[1][1] * y + cy;
        sample_zero_fill(img, sy, sx)
    })
}

/// Random affine warp drawn from `jitter × strength`, then additive Gaussian
/// noise with standard deviation `noise_sigma × strength`, clamped to
/// `[0, 1]`. Strength 0 returns the sample unchanged.
pub fn augment(sample: &LineSample, strength: f64, seed: u64, jitter: &Jitter, noise_sigma: f64) -> Result<LineSample> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::usage(format!(
            "augmentation strength must be ≥ 0, got {strength}"
        )));
    }
    if strength == 0.0 {
        return Ok(sample.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let theta = draw(-jitter.rotation_deg, jitter.rotation_deg).to_radians() * strength;
    let scale = 1.0 + (draw(jitter.scale[0], jitter.scale[1]) - 1.0) * strength;
    let shear = draw(jitter.shear[0], jitter.shear[1]) * strength;
    let mut image = if theta == 0.0 && scale == 1.0 && shear == 0.0 {
        sample.image.clone()
    } else {
        affine_warp(&sample.image, theta, shear, scale)
    };
    let sigma = noise_sigma * strength;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::usage(e.to_string()))?;
        for v in image.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in image.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(LineSample {
        image,
        transcript: sample.transcript.clone(),
        direction: sample.direction,
    })
}

/// Width after rescaling a `height × width` image to `target_height`,
/// rounded to the nearest pixel and at least 1.
pub fn scaled_width(height: usize, width: usize, target_height: usize) -> usize {
    ((width as f64 * target_height as f64 / height as f64).round() as usize).max(1)
}

/// Bilinear resize with pixel-centre alignment and edge clamping. Same-size
/// requests return an exact copy.
pub fn resize_bilinear(img: &RealMatrix, rows: usize, cols: usize) -> Result<RealMatrix> {
    if img.rows() == 0 || img.cols() == 0 || rows == 0 || cols == 0 {
        return Err(Error::usage("cannot resize to or from an empty image"));
    }
    if rows == img.rows() && cols == img.cols() {
        return Ok(img.clone());
    }
    let sy = img.rows() as f64 / rows as f64;
    let sx = img.cols() as f64 / cols as f64;
    let max_y = (img.rows() - 1) as f64;
    let max_x = (img.cols() - 1) as f64;
    let coord = |i: usize, scale: f64, max: f64| -> (usize, usize, f64) {
        let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(max as usize);
        (lo, hi, p - lo as f64)
    };
    let xs: Vec<_> = (0..cols).map(|c| coord(c, sx, max_x)).collect();
    let mut out = RealMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (y0, y1, dy) = coord(r, sy, max_y);
        let (top, bottom) = (img.row(y0), img.row(y1));
        for (c, &(x0, x1, dx)) in xs.iter().enumerate() {
            let t = top[x0] * (1.0 - dx) + top[x1] * dx;
            let b = bottom[x0] * (1.0 - dx) + bottom[x1] * dx;
            out.set(r, c, t * (1.0 - dy) + b * dy);
        }
    }
    Ok(out)
}

/// Canonical model input: vertical lines are transposed so reading runs
/// left to right, the height is rescaled to `target_height` with the aspect
/// ratio kept, and values are clamped to `[0, 1]`.
pub fn preprocess(sample: &LineSample, target_height: usize) -> Result<LineSample> {
    let img = &sample.image;
    if img.rows() == 0 || img.cols() == 0 {
        return Err(Error::data(
            format!("image {}×{}", img.rows(), img.cols()),
            "zero-area image",
        ));
    }
    if target_height == 0 {
        return Err(Error::usage("target height must be at least 1"));
    }
    let upright = match sample.direction {
        Direction::Horizontal => img.clone(),
        Direction::Vertical => img.transpose(),
    };
    let width = scaled_width(upright.rows(), upright.cols(), target_height);
    let mut image = resize_bilinear(&upright, target_height, width)?;
    for v in image.as_mut_slice() {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
    Ok(LineSample {
        image,
        transcript: sample.transcript.clone(),
        direction: Direction::Horizontal,
    })
}
