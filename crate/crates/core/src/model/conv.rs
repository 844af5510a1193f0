//! Convolution → per-channel normalization → ReLU → max-pool.
//!
//! Feature maps are channel-major: `data[(c·height + y)·width + x]`.

use super::config::ConvBlock;
use super::params::ConvParams;
use crate::numerics::{axpy, dot, standardize, standardize_backward};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvCache {
    in_channels: usize,
    in_height: usize,
    in_width: usize,
    kernel: usize,
    /// im2col patches, `(in·k·k) × (H·W)`.
    cols: Vec<f64>,
    /// Standardized conv output per channel, before gain/shift.
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    /// Post-ReLU activations, `out × (H·W)`.
    activated: Vec<f64>,
    /// Flat index into `activated` chosen by each pooled cell.
    argmax: Vec<usize>,
}

pub(crate) fn conv_block_forward(
    input: &FeatureMap,
    block: &ConvBlock,
    params: &ConvParams,
) -> (FeatureMap, ConvCache) {
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let k = block.kernel;
    let out_ch = block.out_channels;
    let cols = im2col(input, k);
    let patch = input.channels * k * k;

    let mut conv = vec![0.0; out_ch * n];
    for co in 0..out_ch {
        let out_row = &mut conv[co * n..(co + 1) * n];
        out_row.fill(params.bias[co]);
        for (p, &wv) in params.weight.row(co).iter().enumerate() {
            if wv != 0.0 {
                axpy(wv, &cols[p * n..(p + 1) * n], out_row);
            }
        }
    }

    let mut normalized = Vec::with_capacity(out_ch * n);
    let mut inv_std = Vec::with_capacity(out_ch);
    let mut activated = Vec::with_capacity(out_ch * n);
    for co in 0..out_ch {
        let (xhat, is) = standardize(&conv[co * n..(co + 1) * n]);
        let (g, s) = (params.norm_gain[co], params.norm_shift[co]);
        activated.extend(xhat.iter().map(|v| (v * g + s).max(0.0)));
        normalized.extend(xhat);
        inv_std.push(is);
    }

    let [ph, pw] = block.pool;
    let oh = h / ph;
    let ow = w.div_ceil(pw);
    let mut pooled = Vec::with_capacity(out_ch * oh * ow);
    let mut argmax = Vec::with_capacity(out_ch * oh * ow);
    for co in 0..out_ch {
        let base = co * n;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for y in oy * ph..(oy + 1) * ph {
                    for x in ox * pw..((ox + 1) * pw).min(w) {
                        let idx = base + y * w + x;
                        if activated[idx] > best {
                            best = activated[idx];
                            best_idx = idx;
                        }
                    }
                }
                pooled.push(best);
                argmax.push(best_idx);
            }
        }
    }
    debug_assert_eq!(cols.len(), patch * n);

    let out = FeatureMap {
        channels: out_ch,
        height: oh,
        width: ow,
        data: pooled,
    };
    let cache = ConvCache {
        in_channels: input.channels,
        in_height: h,
        in_width: w,
        kernel: k,
        cols,
        normalized,
        inv_std,
        activated,
        argmax,
    };
    (out, cache)
}

/// Accumulates parameter gradients into `grads`; returns `∂L/∂input` when
/// `need_input` is set.
pub(crate) fn conv_block_backward(
    grad_out: &[f64],
    cache: &ConvCache,
    params: &ConvParams,
    grads: &mut ConvParams,
    need_input: bool,
) -> Option<Vec<f64>> {
    let n = cache.in_height * cache.in_width;
    let out_ch = params.bias.len();
    let patch = cache.in_channels * cache.kernel * cache.kernel;

    // Pool and ReLU.
    let mut d_act = vec![0.0; out_ch * n];
    for (g, &idx) in grad_out.iter().zip(&cache.argmax) {
        if cache.activated[idx] > 0.0 {
            d_act[idx] += g;
        }
    }

    let mut d_conv = vec![0.0; out_ch * n];
    for co in 0..out_ch {
        let range = co * n..(co + 1) * n;
        let d = &d_act[range.clone()];
        let xhat = &cache.normalized[range.clone()];
        grads.norm_gain[co] += dot(d, xhat);
        grads.norm_shift[co] += d.iter().sum::<f64>();
        let gain = params.norm_gain[co];
        let d_norm: Vec<f64> = d.iter().map(|v| v * gain).collect();
        let dc = standardize_backward(&d_norm, xhat, cache.inv_std[co]);
        grads.bias[co] += dc.iter().sum::<f64>();
        d_conv[range].copy_from_slice(&dc);
    }

    for co in 0..out_ch {
        let dc = &d_conv[co * n..(co + 1) * n];
        let gw = grads.weight.row_mut(co);
        for p in 0..patch {
            gw[p] += dot(dc, &cache.cols[p * n..(p + 1) * n]);
        }
    }

    if !need_input {
        return None;
    }
    let mut d_cols = vec![0.0; patch * n];
    for co in 0..out_ch {
        let dc = &d_conv[co * n..(co + 1) * n];
        for (p, &wv) in params.weight.row(co).iter().enumerate() {
            if wv != 0.0 {
                axpy(wv, dc, &mut d_cols[p * n..(p + 1) * n]);
            }
        }
    }
    Some(col2im(
        &d_cols,
        cache.in_channels,
        cache.in_height,
        cache.in_width,
        cache.kernel,
    ))
}

fn im2col(input: &FeatureMap, k: usize) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; input.channels * k * k * n];
    for c in 0..input.channels {
        let plane = input.plane(c);
        for dy in 0..k {
            for dx in 0..k {
                let p = (c * k + dy) * k + dx;
                let row = &mut cols[p * n..(p + 1) * n];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    // Valid x range so that 0 ≤ x + ox < w.
                    let x0 = (-ox).max(0) as usize;
                    let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                    for x in x0..x1 {
                        dst[x] = src[(x as isize + ox) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(d_cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        for dy in 0..k {
            for dx in 0..k {
                let p = (c * k + dy) * k + dx;
                let row = &d_cols[p * n..(p + 1) * n];
                let oy = dy as isize - pad;
                let ox = dx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-ox).max(0) as usize;
                    let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                    let dst_base = c * n + sy as usize * w;
                    for x in x0..x1 {
                        out[dst_base + (x as isize + ox) as usize] += row[y * w + x];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RealMatrix;

    fn map(channels: usize, height: usize, width: usize) -> FeatureMap {
        let data = (0..channels * height * width)
            .map(|i| ((i * 37 % 23) as f64) / 23.0 - 0.4)
            .collect();
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    /// Direct nested-loop convolution, independent of im2col.
    fn naive_conv(input: &FeatureMap, weight: &RealMatrix, bias: &[f64], k: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let (h, w) = (input.height as isize, input.width as isize);
        let mut out = Vec::new();
        for (co, &b) in bias.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = b;
                    for c in 0..input.channels {
                        for dy in 0..k as isize {
                            for dx in 0..k as isize {
                                let (sy, sx) = (y + dy - pad, x + dx - pad);
                                if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                    let v = input.data[(c * input.height + sy as usize) * input.width + sx as usize];
                                    let p = (c * k + dy as usize) * k + dx as usize;
                                    acc += weight.get(co, p) * v;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let input = map(2, 4, 5);
        let k = 3;
        let weight = RealMatrix::from_fn(3, 2 * k * k, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.1 - 0.2);
        let bias = vec![0.1, -0.2, 0.3];
        let cols = im2col(&input, k);
        let n = 20;
        let expected = naive_conv(&input, &weight, &bias, k);
        for co in 0..3 {
            for j in 0..n {
                let mut acc = bias[co];
                for p in 0..2 * k * k {
                    acc += weight.get(co, p) * cols[p * n + j];
                }
                assert!((acc - expected[co * n + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let input = map(2, 3, 4);
        let k = 3;
        let cols = im2col(&input, k);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 11) % 7) as f64 - 3.0).collect();
        let back = col2im(&y, 2, 3, 4, k);
        let lhs = dot(&cols, &y);
        let rhs = dot(&input.data, &back);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_shapes_use_ceil_on_width() {
        let input = map(1, 4, 7);
        let block = ConvBlock {
            out_channels: 2,
            kernel: 3,
            pool: [2, 2],
        };
        let params = ConvParams {
            weight: RealMatrix::from_fn(2, 9, |r, c| if c == 4 { 1.0 + r as f64 } else { 0.0 }),
            bias: vec![0.0; 2],
            norm_gain: vec![1.0; 2],
            norm_shift: vec![0.0; 2],
        };
        let (out, _) = conv_block_forward(&input, &block, &params);
        assert_eq!((out.channels, out.height, out.width), (2, 2, 4));
        assert!(out.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
