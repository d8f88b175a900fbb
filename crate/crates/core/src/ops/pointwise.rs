use crate::error::{shape_err, Result};
use crate::tensor::{Real, Shape, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_inplace<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Passes `grad_out` where `input > 0`. Since `relu(x) > 0` exactly when
/// `x > 0`, the post-activation tensor may be passed as `input` as well.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return shape_err(
            "relu_backward",
            format!("input {} vs grad {}", input.shape(), grad_out.shape()),
        );
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Concatenate along the channel axis in argument order.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat_channels", "no tensors to concatenate");
    };
    let s = first.shape();
    for p in parts {
        let ps = p.shape();
        if (ps.batch, ps.height, ps.width) != (s.batch, s.height, s.width) {
            return shape_err("concat_channels", format!("{s} vs {ps}"));
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape().channels).sum();
    let out_shape = s.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for b in 0..s.batch {
        for p in parts {
            let n = p.shape().channels * s.plane();
            data.extend_from_slice(&p.data()[b * n..(b + 1) * n]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Channels `[start, start + len)` of every batch item.
pub fn slice_channels<T: Real>(t: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if len == 0 || start + len > s.channels {
        return shape_err(
            "slice_channels",
            format!("channels [{start}, {}) outside {s}", start + len),
        );
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.batch * len * p);
    for b in 0..s.batch {
        let base = b * s.channels * p;
        data.extend_from_slice(&t.data()[base + start * p..base + (start + len) * p]);
    }
    Tensor::from_vec(Shape::new(s.batch, len, s.height, s.width), data)
}

/// Inverse of [`concat_channels`]: split into consecutive channel groups.
pub fn split_channels<T: Real>(t: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = sizes.iter().sum();
    if total != t.shape().channels {
        return shape_err(
            "split_channels",
            format!("sizes {sizes:?} do not sum to {} channels", t.shape().channels),
        );
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let part = slice_channels(t, start, n);
            start += n;
            part
        })
        .collect()
}
