//! Dense rank-4 tensors in (batch, channel, row, column) order.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{shape_err, Result};

/// Element type of the float path. `f32` is the production type; `f64`
/// exists so finite-difference checks can run through the same kernels.
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    /// Panics if any dimension is zero.
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        assert!(
            batch > 0 && channels > 0 && height > 0 && width > 0,
            "tensor dimensions must be >= 1, got ({batch}, {channels}, {height}, {width})"
        );
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Shape::new(self.batch, channels, self.height, self.width)
    }

    pub fn with_batch(&self, batch: usize) -> Self {
        Shape::new(batch, self.channels, self.height, self.width)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return shape_err(
                "from_vec",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            );
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((b * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// The `height * width` slice of one (batch, channel) plane.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (b * self.shape.channels + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err("add", format!("{} vs {}", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return shape_err("add_assign", format!("{} vs {}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// Copy of a single batch item as a batch-1 tensor.
    pub fn batch_item(&self, b: usize) -> Self {
        let n = self.shape.channels * self.shape.plane();
        Tensor {
            shape: self.shape.with_batch(1),
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Stack tensors along the batch axis. All parts must share (C, H, W).
    pub fn stack_batch(parts: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("stack_batch", "no tensors to stack");
        };
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * parts.len());
        let mut batch = 0;
        for p in parts {
            let ps = p.shape;
            if (ps.channels, ps.height, ps.width) != (s.channels, s.height, s.width) {
                return shape_err("stack_batch", format!("{} vs {}", s, ps));
            }
            batch += ps.batch;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: s.with_batch(batch),
            data,
        })
    }

    /// Spatial crop `[y0, y0+h) x [x0, x0+w)` of every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if y0 + h > s.height || x0 + w > s.width || h == 0 || w == 0 {
            return shape_err(
                "crop",
                format!("window ({y0}+{h}, {x0}+{w}) outside {s}"),
            );
        }
        let out_shape = Shape::new(s.batch, s.channels, h, w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for b in 0..s.batch {
            for c in 0..s.channels {
                let plane = self.plane(b, c);
                for y in y0..y0 + h {
                    data.extend_from_slice(&plane[y * s.width + x0..y * s.width + x0 + w]);
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}", self.shape, preview)?;
        if self.data.len() > 8 {
            write!(f, "...")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major() {
        let t = Tensor::<f32>::from_fn(Shape::new(2, 3, 4, 5), |b, c, y, x| {
            (((b * 3 + c) * 4 + y) * 5 + x) as f32
        });
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    #[should_panic]
    fn zero_dims_are_rejected() {
        Shape::new(1, 0, 2, 2);
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 1.0);
        let b = Tensor::<f32>::full(Shape::new(1, 2, 3, 3), 2.0);
        let s = Tensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 3, 3));
        assert_eq!(s.batch_item(0), a);
        assert_eq!(s.batch_item(1), b);
    }

    #[test]
    fn crop_picks_window() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
    }
}
