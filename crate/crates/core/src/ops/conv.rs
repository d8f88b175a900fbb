//! 3x3 stride-1 convolution with one pixel of zero padding.
//!
//! Implemented as cross-correlation (no kernel flip). Every output plane is
//! accumulated by a single sequential loop, so results are bitwise
//! reproducible and independent of batch composition.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Weights `(out, in, 3, 3)` plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    out_channels: usize,
    in_channels: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * 9],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn from_parts(
        out_channels: usize,
        in_channels: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if weights.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            return shape_err(
                "ConvKernel::from_parts",
                format!(
                    "({out_channels}, {in_channels}, 3, 3) needs {} weights and {out_channels} biases, got {} and {}",
                    out_channels * in_channels * 9,
                    weights.len(),
                    bias.len()
                ),
            );
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            weights,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    pub fn tap(&self, o: usize, i: usize) -> &[T] {
        let start = (o * self.in_channels + i) * 9;
        &self.weights[start..start + 9]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ConvKernel<U> {
        ConvKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            weights: self.weights.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Gradients of a single convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: ConvKernel<T>,
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.channels != kernel.in_channels {
        return Err(Error::Shape {
            op: "conv2d_forward",
            detail: format!(
                "input {s} has {} channels but kernel ({}, {}, 3, 3) expects {}",
                s.channels, kernel.out_channels, kernel.in_channels, kernel.in_channels
            ),
        });
    }
    let mut out = Tensor::zeros(s.with_channels(kernel.out_channels));
    let mut padded = Padded::new(s.channels, s.height, s.width);
    for b in 0..s.batch {
        padded.load(input, b);
        for o in 0..kernel.out_channels {
            let plane = out.plane_mut(b, o);
            plane.fill(kernel.bias[o]);
            for i in 0..kernel.in_channels {
                correlate_acc(plane, &padded, i, kernel.tap(o, i));
            }
        }
    }
    Ok(out)
}

/// Analytic gradients of [`conv2d_forward`] for the cotangent `grad_out`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let expected = s.with_channels(kernel.out_channels);
    if s.channels != kernel.in_channels || grad_out.shape() != expected {
        return Err(Error::Shape {
            op: "conv2d_backward",
            detail: format!(
                "input {s}, kernel ({}, {}, 3, 3), grad_out {} (expected {expected})",
                kernel.out_channels,
                kernel.in_channels,
                grad_out.shape()
            ),
        });
    }
    Ok(ConvGrads {
        input: conv2d_backward_input(kernel, grad_out, s)?,
        kernel: conv2d_backward_kernel(input, grad_out, kernel.out_channels),
    })
}

/// Gradient with respect to the input only: correlation of `grad_out` with
/// the spatially flipped, channel-transposed kernel.
pub fn conv2d_backward_input<T: Real>(
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
    input_shape: Shape,
) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    if input_shape.channels != kernel.in_channels
        || gs != input_shape.with_channels(kernel.out_channels)
    {
        return shape_err(
            "conv2d_backward_input",
            format!("grad_out {gs} does not match input {input_shape}"),
        );
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let mut padded = Padded::new(gs.channels, gs.height, gs.width);
    let mut flipped = [T::zero(); 9];
    for b in 0..gs.batch {
        padded.load(grad_out, b);
        for i in 0..kernel.in_channels {
            let plane = grad_in.plane_mut(b, i);
            for o in 0..kernel.out_channels {
                let tap = kernel.tap(o, i);
                for k in 0..9 {
                    flipped[k] = tap[8 - k];
                }
                correlate_acc(plane, &padded, o, &flipped);
            }
        }
    }
    Ok(grad_in)
}

fn conv2d_backward_kernel<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    out_channels: usize,
) -> ConvKernel<T> {
    let s = input.shape();
    let (h, w) = (s.height, s.width);
    let pw = w + 2;
    let mut gk = ConvKernel::zeros(out_channels, s.channels);
    let mut bias_acc = vec![T::zero(); w];
    let mut padded: Vec<Padded<T>> = Vec::with_capacity(s.batch);
    for b in 0..s.batch {
        let mut p = Padded::new(s.channels, h, w);
        p.load(input, b);
        padded.push(p);
    }
    let full = w / LANES * LANES;
    for o in 0..out_channels {
        bias_acc.fill(T::zero());
        for b in 0..s.batch {
            let g = grad_out.plane(b, o);
            for y in 0..h {
                for (a, &v) in bias_acc.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                    *a += v;
                }
            }
        }
        gk.bias[o] = bias_acc.iter().fold(T::zero(), |s, &v| s + v);
        for i in 0..s.channels {
            let mut totals = [T::zero(); 9];
            // register-blocked: 9 tap accumulators per strip of LANES columns
            for x0 in (0..full).step_by(LANES) {
                let mut acc = [[T::zero(); LANES]; 9];
                for (b, pad) in padded.iter().enumerate() {
                    let g = grad_out.plane(b, o);
                    let src = pad.plane(i);
                    for y in 0..h {
                        let grow: &[T; LANES] = g[y * w + x0..y * w + x0 + LANES].try_into().unwrap();
                        for ky in 0..3 {
                            let base = (y + ky) * pw + x0;
                            for kx in 0..3 {
                                let r: &[T; LANES] = src[base + kx..base + kx + LANES].try_into().unwrap();
                                let a = &mut acc[ky * 3 + kx];
                                for l in 0..LANES {
                                    a[l] += grow[l] * r[l];
                                }
                            }
                        }
                    }
                }
                for k in 0..9 {
                    totals[k] += acc[k].iter().fold(T::zero(), |s, &v| s + v);
                }
            }
            if full < w {
                for (b, pad) in padded.iter().enumerate() {
                    let g = grad_out.plane(b, o);
                    let src = pad.plane(i);
                    for y in 0..h {
                        for x in full..w {
                            let gv = g[y * w + x];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    totals[ky * 3 + kx] += gv * src[(y + ky) * pw + x + kx];
                                }
                            }
                        }
                    }
                }
            }
            let start = (o * s.channels + i) * 9;
            gk.weights[start..start + 9].copy_from_slice(&totals);
        }
    }
    gk
}

const LANES: usize = 8;

/// Planes of one batch item copied into a buffer with a one-pixel zero border.
struct Padded<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> Padded<T> {
    fn new(channels: usize, h: usize, w: usize) -> Self {
        Padded {
            h,
            w,
            data: vec![T::zero(); channels * (h + 2) * (w + 2)],
        }
    }

    fn load(&mut self, t: &Tensor<T>, b: usize) {
        let (h, w) = (self.h, self.w);
        let pw = w + 2;
        let stride = (h + 2) * pw;
        for c in 0..t.shape().channels {
            let src = t.plane(b, c);
            let dst = &mut self.data[c * stride..(c + 1) * stride];
            for y in 0..h {
                dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }

    #[inline]
    fn plane(&self, c: usize) -> &[T] {
        let stride = (self.h + 2) * (self.w + 2);
        &self.data[c * stride..(c + 1) * stride]
    }
}

/// `out += correlate(src[c], tap)` where `src` is zero-padded.
#[inline]
fn correlate_acc<T: Real>(out: &mut [T], src: &Padded<T>, c: usize, t: &[T]) {
    let (h, w) = (src.h, src.w);
    let pw = w + 2;
    let plane = src.plane(c);
    for y in 0..h {
        let o = &mut out[y * w..(y + 1) * w];
        let r0 = &plane[y * pw..y * pw + pw];
        let r1 = &plane[(y + 1) * pw..(y + 1) * pw + pw];
        let r2 = &plane[(y + 2) * pw..(y + 2) * pw + pw];
        let (a0, b0, c0) = (&r0[..w], &r0[1..w + 1], &r0[2..w + 2]);
        let (a1, b1, c1) = (&r1[..w], &r1[1..w + 1], &r1[2..w + 2]);
        let (a2, b2, c2) = (&r2[..w], &r2[1..w + 1], &r2[2..w + 2]);
        for x in 0..w {
            o[x] += t[0] * a0[x] + t[1] * b0[x] + t[2] * c0[x] + t[3] * a1[x] + t[4] * b1[x]
                + t[5] * c1[x]
                + t[6] * a2[x]
                + t[7] * b2[x]
                + t[8] * c2[x];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force nested-loop reference, accumulated in f64.
    fn conv_oracle(input: &Tensor<f32>, k: &ConvKernel<f32>) -> Vec<f64> {
        let s = input.shape();
        let mut out = Vec::new();
        for b in 0..s.batch {
            for o in 0..k.out_channels() {
                for y in 0..s.height as isize {
                    for x in 0..s.width as isize {
                        let mut acc = k.bias[o] as f64;
                        for i in 0..s.channels {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (y + ky - 1, x + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= s.height as isize || sx >= s.width as isize {
                                        continue;
                                    }
                                    let wv = k.tap(o, i)[(ky * 3 + kx) as usize] as f64;
                                    acc += wv * input.at(b, i, sy as usize, sx as usize) as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    fn random_case(rng: &mut ChaCha8Rng, s: Shape, out_c: usize) -> (Tensor<f32>, ConvKernel<f32>) {
        let input = Tensor::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let weights = (0..out_c * s.channels * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (input, ConvKernel::from_parts(out_c, s.channels, weights, bias).unwrap())
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = Tensor::from_vec(Shape::new(1, 1, 3, 3), (1..=9).map(|v| v as f32).collect()).unwrap();
        let mut k = ConvKernel::zeros(1, 1);
        k.weights[4] = 1.0;
        assert_eq!(conv2d_forward(&input, &k).unwrap(), input);
    }

    #[test]
    fn all_ones_counts_neighbours() {
        let input = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f32);
        let k = ConvKernel::from_parts(1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d_forward(&input, &k).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn random_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (input, k) = random_case(&mut rng, Shape::new(2, 5, 6, 7), 4);
        let out = conv2d_forward(&input, &k).unwrap();
        for (a, e) in out.data().iter().zip(conv_oracle(&input, &k)) {
            assert!((*a as f64 - e).abs() <= 1e-6 * e.abs().max(1.0), "{a} vs {e}");
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let input = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let k = ConvKernel::zeros(4, 3);
        let err = conv2d_forward(&input, &k).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 3, 3)") && err.contains("(4, 3, 3, 3)"), "{err}");
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (input, k) = random_case(&mut rng, Shape::new(1, 2, 4, 4), 3);
        let g = conv2d_backward(&input, &k, &Tensor::zeros(Shape::new(1, 3, 4, 4))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.weights.iter().chain(&g.kernel.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_chain_rule() {
        let (v, w, g) = (0.7f32, -1.3f32, 2.0f32);
        let input = Tensor::full(Shape::new(1, 1, 1, 1), v);
        let mut k = ConvKernel::zeros(1, 1);
        k.weights[4] = w;
        let grads = conv2d_backward(&input, &k, &Tensor::full(Shape::new(1, 1, 1, 1), g)).unwrap();
        assert_eq!(grads.input.data(), &[w * g]);
        assert_eq!(grads.kernel.weights[4], v * g);
        assert_eq!(grads.kernel.bias[0], g);
        // off-centre taps only ever see padding
        for (t, &gw) in grads.kernel.weights.iter().enumerate() {
            if t != 4 {
                assert_eq!(gw, 0.0);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Shape::new(2, 3, 5, 4);
        let input: Tensor<f64> = Tensor::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let weights = (0..2 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = ConvKernel::from_parts(2, 3, weights, vec![0.1, -0.2]).unwrap();
        let cot: Tensor<f64> = Tensor::from_fn(s.with_channels(2), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let objective = |x: &Tensor<f64>, k: &ConvKernel<f64>| -> f64 {
            conv2d_forward(x, k).unwrap().data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        let grads = conv2d_backward(&input, &k, &cot).unwrap();
        let h = 1e-3;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for idx in 0..input.data().len() {
            let mut p = input.clone();
            p.data_mut()[idx] += h;
            let mut m = input.clone();
            m.data_mut()[idx] -= h;
            let fd = (objective(&p, &k) - objective(&m, &k)) / (2.0 * h);
            assert!(rel(grads.input.data()[idx], fd) < 1e-4);
        }
        for idx in 0..k.weights.len() {
            let mut p = k.clone();
            p.weights[idx] += h;
            let mut m = k.clone();
            m.weights[idx] -= h;
            let fd = (objective(&input, &p) - objective(&input, &m)) / (2.0 * h);
            assert!(rel(grads.kernel.weights[idx], fd) < 1e-4);
        }
        for idx in 0..2 {
            let mut p = k.clone();
            p.bias[idx] += h;
            let mut m = k.clone();
            m.bias[idx] -= h;
            let fd = (objective(&input, &p) - objective(&input, &m)) / (2.0 * h);
            assert!(rel(grads.kernel.bias[idx], fd) < 1e-4);
        }
    }

    #[test]
    fn grad_out_shape_is_checked() {
        let input = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        let k = ConvKernel::zeros(4, 2);
        assert!(conv2d_backward(&input, &k, &Tensor::zeros(Shape::new(1, 4, 3, 2))).is_err());
    }

    #[test]
    fn narrow_images_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(1, 1), (1, 5), (5, 1), (2, 2)] {
            let (input, k) = random_case(&mut rng, Shape::new(1, 2, h, w), 2);
            let out = conv2d_forward(&input, &k).unwrap();
            for (a, e) in out.data().iter().zip(conv_oracle(&input, &k)) {
                assert!((*a as f64 - e).abs() <= 1e-6 * e.abs().max(1.0));
            }
        }
    }
}
