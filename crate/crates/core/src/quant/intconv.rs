use crate::error::{shape_err, Error, Result};
use crate::tensor::Shape;

/// 3x3 zero-padded cross-correlation of int8 data with int8 weights.
/// Products are summed in i64 and every output is checked against the i32
/// accumulator range.
pub(crate) fn conv_i8(
    input: &[i8],
    shape: Shape,
    weights: &[i8],
    bias: &[i32],
    out_channels: usize,
    layer: &str,
) -> Result<Vec<i32>> {
    let in_c = shape.channels;
    if weights.len() != out_channels * in_c * 9 || bias.len() != out_channels {
        return shape_err(
            "conv_i8",
            format!("layer {layer}: kernel ({out_channels}, {in_c}, 3, 3) does not match input {shape}"),
        );
    }
    let (h, w) = (shape.height, shape.width);
    let (ph, pw) = (h + 2, w + 2);
    let plane = h * w;
    let mut padded = vec![0i64; in_c * ph * pw];
    let mut out = Vec::with_capacity(shape.batch * out_channels * plane);
    let mut acc = vec![0i64; plane];
    for b in 0..shape.batch {
        for c in 0..in_c {
            let src = &input[(b * in_c + c) * plane..][..plane];
            let dst = &mut padded[c * ph * pw..][..ph * pw];
            for y in 0..h {
                for x in 0..w {
                    dst[(y + 1) * pw + x + 1] = src[y * w + x] as i64;
                }
            }
        }
        for o in 0..out_channels {
            acc.iter_mut().for_each(|a| *a = bias[o] as i64);
            for c in 0..in_c {
                let tap = &weights[(o * in_c + c) * 9..][..9];
                let src = &padded[c * ph * pw..][..ph * pw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = tap[ky * 3 + kx] as i64;
                        if k == 0 {
                            continue;
                        }
                        for y in 0..h {
                            let row = &src[(y + ky) * pw + kx..][..w];
                            let dst = &mut acc[y * w..][..w];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
            for &a in &acc {
                let v = i32::try_from(a).map_err(|_| {
                    Error::Overflow(format!(
                        "layer {layer}: accumulator value {a} exceeds the 32-bit range"
                    ))
                })?;
                out.push(v);
            }
        }
    }
    Ok(out)
}
