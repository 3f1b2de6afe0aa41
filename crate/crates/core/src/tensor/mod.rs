//! Dense rank-4 tensors and the hand-written numerics built on them.
//!
//! Layout is `(batch, channel, height, width)`, row-major with width
//! innermost. Every kernel here is generic over [`Real`] so the same code
//! runs in `f32` for training and in `f64` for verification.

mod activation;
mod conv;
mod gradcheck;
mod loss;
mod optim;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use activation::{sigma_b, sigma_b_backward, Activation};
pub use conv::{
    conv2d, conv2d_backward, conv2d_bias, depthwise_backward, depthwise_forward,
    pointwise_backward, pointwise_forward, ConvSpec,
};
pub use gradcheck::grad_check;
pub use loss::softmax_xent;
pub use optim::SgdMomentum;

/// Numeric mode a computation runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Train32,
    Verify64,
}

/// Floating-point scalar usable by every kernel in the crate.
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const PRECISION: Precision;
    /// Bytes per scalar in the checkpoint encoding.
    const WIDTH: usize;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Train32;
    const WIDTH: usize = 4;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Verify64;
    const WIDTH: usize = 8;

    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Dense `(n, c, h, w)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len = checked_len(dims)?;
        if data.len() != len {
            return Err(shape_err(format!(
                "data length {} does not match dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![value; len],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for a in 0..n {
            for b in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        data.push(f([a, b, i, j]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(dims: [usize; 4], bound: f64, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Self { dims, data }
    }

    /// Glorot-uniform filter init for `(c_out, c_in, l, l)`.
    pub fn glorot<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        let [c_out, c_in, h, w] = dims;
        let fan_in = c_in * h * w;
        let fan_out = c_out * h * w;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(dims, bound, rng)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Per-sample element count `c * h * w`.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        let [_, cc, h, w] = self.dims;
        ((n * cc + c) * h + i) * w + j
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize, j: usize) -> T {
        self.data[self.offset(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: T) {
        let o = self.offset(n, c, i, j);
        self.data[o] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Samples `[start, end)` of the batch.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let len = self.sample_len();
        Self {
            dims: [end - start, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    /// Gathers the listed samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }

    /// Stacks batches along the sample axis.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let [_, c, h, w] = first.dims;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims[1..] != [c, h, w] {
                return Err(shape_err(format!(
                    "concat of {:?} with {:?}",
                    first.dims, p.dims
                )));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: [n, c, h, w],
            data,
        })
    }
}

fn checked_len(dims: [usize; 4]) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) {
        return Err(shape_err(format!("dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| shape_err(format!("dims {dims:?} overflow")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor4::<f64>::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor4::<f64>::new([1, 0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor4::<f64>::from_fn([2, 3, 4, 5], |[n, c, i, j]| {
            (1000 * n + 100 * c + 10 * i + j) as f64
        });
        assert_eq!(t.get(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.offset(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.data()[1], 1.0);
    }

    #[test]
    fn select_and_concat() {
        let t = Tensor4::<f32>::from_fn([3, 1, 1, 2], |[n, _, _, j]| (n * 2 + j) as f32);
        let s = t.select(&[2, 0]);
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
        let c = Tensor4::concat(&[&s, &t.slice_batch(1, 2)]).unwrap();
        assert_eq!(c.dims(), [3, 1, 1, 2]);
        assert_eq!(c.data()[4..], [2.0, 3.0]);
    }
}
