//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::RngState;

/// Extent of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    /// Validated shape: every extent at least 1 and the element count fits
    /// in `usize`.
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Shape> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("zero extent in ({n},{c},{h},{w})")));
        }
        [c, h, w]
            .iter()
            .try_fold(n, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Size(format!("({n},{c},{h},{w}) overflows the index range")))?;
        Ok(Shape { n, c, h, w })
    }

    pub const fn scalar() -> Shape {
        Shape { n: 1, c: 1, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn with_c(self, c: usize) -> Shape {
        Shape { c, ..self }
    }

    pub fn with_n(self, n: usize) -> Shape {
        Shape { n, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Shape {
        Shape { h, w, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Tensor<T> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Tensor<T> {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Tensor<T> {
        Tensor { shape, data: vec![value; shape.len()] }
    }

    pub fn scalar(value: T) -> Tensor<T> {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!("{} elements cannot fill shape {shape}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Tensor<T> {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.shape.index(n, c, h, w);
        &mut self.data[i]
    }

    /// Contiguous slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape) -> Result<Tensor<T>> {
        Tensor::from_vec(shape, self.data)
    }

    /// Scalar value of a `(1,1,1,1)` tensor.
    pub fn to_scalar(&self) -> Result<T> {
        if self.shape != Shape::scalar() {
            return Err(Error::shape(format!("expected scalar, got {}", self.shape)));
        }
        Ok(self.data[0])
    }

    fn expect_same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{op}: shapes {} and {} differ", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.expect_same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// Sum in index order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect() }
    }

    /// Channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if count == 0 || start + count > s.c {
            return Err(Error::shape(format!("channel slice [{start}, {}) outside {s}", start + count)));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * count * plane);
        for n in 0..s.n {
            let base = (n * s.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor { shape: s.with_c(count), data })
    }

    /// Batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if count == 0 || start + count > s.n {
            return Err(Error::shape(format!("batch slice [{start}, {}) outside {s}", start + count)));
        }
        let item = s.item();
        Ok(Tensor { shape: s.with_n(count), data: self.data[start * item..(start + count) * item].to_vec() })
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(Error::shape(format!("stack: {} vs {}", s, first.shape)));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: first.shape.with_n(n), data })
    }
}

/// Bound of a Glorot/Xavier uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Bound of a He (Kaiming) uniform distribution.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn uniform_tensor<T: Real>(shape: Shape, bound: f64, rng: &mut RngState) -> Tensor<T> {
    let data = (0..shape.len()).map(|_| T::from_f64_lossy(rng.uniform_in(-bound, bound))).collect();
    Tensor { shape, data }
}

/// Xavier/Glorot uniform initialization on `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Real>(shape: Shape, fan_in: usize, fan_out: usize, rng: &mut RngState) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::contract(format!("xavier_init: fan_in={fan_in}, fan_out={fan_out}")));
    }
    Ok(uniform_tensor(shape, xavier_bound(fan_in, fan_out), rng))
}

/// He uniform initialization on `±sqrt(6 / fan_in)`.
pub fn he_uniform_init<T: Real>(shape: Shape, fan_in: usize, rng: &mut RngState) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::contract("he_uniform_init: fan_in=0"));
    }
    Ok(uniform_tensor(shape, he_uniform_bound(fan_in), rng))
}
