//! Parameter-free x4 resampling: bilinear upsampling for the residual path
//! and depth-to-space for the learned path.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const SCALE: usize = 4;

/// Source taps along one axis: `(lo, hi, frac)` per destination index.
/// Half-pixel centres, `src = (dst + 0.5) / 4 - 0.5`, clamped to the edge.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..n * SCALE)
        .map(|d| {
            let src = ((d as f64 + 0.5) / SCALE as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp<T: Real>(a: T, b: T, f: T) -> T {
    // `a + f (b - a)` reproduces constants exactly.
    a + f * (b - a)
}

pub fn bilinear_upsample_x4<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (h, w) = (s.height, s.width);
    let (oh, ow) = (h * SCALE, w * SCALE);
    let xs: Vec<_> = bilinear_taps(w)
        .into_iter()
        .map(|(l, r, f)| (l, r, T::lit(f)))
        .collect();
    let ys: Vec<_> = bilinear_taps(h)
        .into_iter()
        .map(|(l, r, f)| (l, r, T::lit(f)))
        .collect();
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, oh, ow));
    let mut rows = vec![T::zero(); h * ow];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            for y in 0..h {
                let srow = &src[y * w..(y + 1) * w];
                let drow = &mut rows[y * ow..(y + 1) * ow];
                for (d, &(l, r, f)) in drow.iter_mut().zip(&xs) {
                    *d = lerp(srow[l], srow[r], f);
                }
            }
            let dst = out.plane_mut(b, c);
            for (oy, &(t, btm, f)) in ys.iter().enumerate() {
                let top = &rows[t * ow..(t + 1) * ow];
                let bot = &rows[btm * ow..(btm + 1) * ow];
                for ((d, &a), &bv) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(top).zip(bot) {
                    *d = lerp(a, bv, f);
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_upsample_x4`] (the operator is linear).
pub fn bilinear_upsample_x4_backward<T: Real>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = (input_shape.height, input_shape.width);
    let expected = Shape::new(input_shape.batch, input_shape.channels, h * SCALE, w * SCALE);
    if grad_out.shape() != expected {
        return shape_err(
            "bilinear_upsample_x4_backward",
            format!("grad {} vs expected {expected}", grad_out.shape()),
        );
    }
    let xs = bilinear_taps(w);
    let ys = bilinear_taps(h);
    let ow = w * SCALE;
    let mut grad = Tensor::zeros(input_shape);
    let mut rows = vec![T::zero(); h * ow];
    for b in 0..input_shape.batch {
        for c in 0..input_shape.channels {
            rows.fill(T::zero());
            let g = grad_out.plane(b, c);
            for (oy, &(t, btm, f)) in ys.iter().enumerate() {
                let f = T::lit(f);
                for ox in 0..ow {
                    let v = g[oy * ow + ox];
                    rows[t * ow + ox] += v * (T::one() - f);
                    rows[btm * ow + ox] += v * f;
                }
            }
            let dst = grad.plane_mut(b, c);
            for y in 0..h {
                for (ox, &(l, r, f)) in xs.iter().enumerate() {
                    let f = T::lit(f);
                    let v = rows[y * ow + ox];
                    dst[y * w + l] += v * (T::one() - f);
                    dst[y * w + r] += v * f;
                }
            }
        }
    }
    Ok(grad)
}

/// `out(c, 4y+dy, 4x+dx) = in(16c + 4dy + dx, y, x)`.
pub fn depth_to_space_x4<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let r2 = SCALE * SCALE;
    if s.channels % r2 != 0 {
        return shape_err(
            "depth_to_space_x4",
            format!("{} channels is not divisible by {r2}", s.channels),
        );
    }
    let oc = s.channels / r2;
    let (h, w) = (s.height, s.width);
    let ow = w * SCALE;
    let mut out = Tensor::zeros(Shape::new(s.batch, oc, h * SCALE, ow));
    for b in 0..s.batch {
        for c in 0..oc {
            let dst = out.plane_mut(b, c);
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    let src = input.plane(b, r2 * c + SCALE * dy + dx);
                    for y in 0..h {
                        let row = (SCALE * y + dy) * ow;
                        for x in 0..w {
                            dst[row + SCALE * x + dx] = src[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`depth_to_space_x4`]; also its backward pass.
pub fn space_to_depth_x4<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.height % SCALE != 0 || s.width % SCALE != 0 {
        return shape_err(
            "space_to_depth_x4",
            format!("spatial dims of {s} are not divisible by {SCALE}"),
        );
    }
    let r2 = SCALE * SCALE;
    let (h, w) = (s.height / SCALE, s.width / SCALE);
    let iw = s.width;
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels * r2, h, w));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            for dy in 0..SCALE {
                for dx in 0..SCALE {
                    let dst = out.plane_mut(b, r2 * c + SCALE * dy + dx);
                    for y in 0..h {
                        let row = (SCALE * y + dy) * iw;
                        for x in 0..w {
                            dst[y * w + x] = src[row + SCALE * x + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
