//! Anti-aliased bicubic x4 downsampling, the degradation that manufactures
//! LR inputs from HR frames.
//!
//! Cubic convolution kernel with `a = -0.5`, half-pixel centres, kernel
//! support stretched by the decimation factor, taps clamped at the border and
//! normalized to sum to one.

use crate::error::{shape_err, Result};
use crate::ops::SCALE;
use crate::tensor::{Real, Shape, Tensor};

const A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized source taps `(index, weight)` for every output sample when
/// shrinking an axis of length `n` by `factor`.
pub fn downsample_taps(n: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let f = factor as f64;
    let support = 2.0 * f;
    (0..n / factor)
        .map(|o| {
            let center = (o as f64 + 0.5) * f - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = cubic_kernel((j as f64 - center) / f);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, n as i64 - 1) as usize;
                match taps.iter_mut().find(|(i, _)| *i == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            for t in taps.iter_mut() {
                t.1 /= sum;
            }
            taps
        })
        .collect()
}

pub fn bicubic_downsample_x4<T: Real>(hr: &Tensor<T>) -> Result<Tensor<T>> {
    let s = hr.shape();
    if s.height % SCALE != 0 || s.width % SCALE != 0 {
        return shape_err(
            "bicubic_downsample_x4",
            format!("{}x{} is not divisible by {SCALE}; crop first", s.height, s.width),
        );
    }
    let (h, w) = (s.height, s.width);
    let (oh, ow) = (h / SCALE, w / SCALE);
    let xt = downsample_taps(w, SCALE);
    let yt = downsample_taps(h, SCALE);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, oh, ow));
    let mut rows = vec![0.0f64; h * ow];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = hr.plane(b, c);
            for y in 0..h {
                for (ox, taps) in xt.iter().enumerate() {
                    rows[y * ow + ox] = taps
                        .iter()
                        .map(|&(i, wt)| wt * src[y * w + i].to_f64_lossy())
                        .sum();
                }
            }
            let dst = out.plane_mut(b, c);
            for (oy, taps) in yt.iter().enumerate() {
                for ox in 0..ow {
                    let v: f64 = taps.iter().map(|&(i, wt)| wt * rows[i * ow + ox]).sum();
                    dst[oy * ow + ox] = T::lit(v);
                }
            }
        }
    }
    Ok(out)
}
