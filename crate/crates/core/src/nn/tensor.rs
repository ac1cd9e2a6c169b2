use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

/// Floating-point scalar used by every kernel. Implemented for `f32`
/// (inference, training) and `f64` (gradient checking).
pub trait Real:
    num_traits::Float
    + realfft::FftNum
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Time,
    Freq,
    Channel,
    Generic,
}

/// Dense row-major tensor with labelled axes.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    axes: Vec<Axis>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize], axes: &[Axis]) -> Self {
        assert_eq!(shape.len(), axes.len(), "one label per axis");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            axes: axes.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], axes: &[Axis], value: T) -> Self {
        let mut t = Self::zeros(shape, axes);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], axes: &[Axis], data: Vec<T>) -> Result<Self> {
        if shape.len() != axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} dims but {} axis labels",
                shape.len(),
                axes.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            axes: axes.to_vec(),
            data,
        })
    }

    /// Generic-axis tensor, mostly used for parameters.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::from_vec(shape, &vec![Axis::Generic; shape.len()], data)
    }

    pub fn param_zeros(shape: &[usize]) -> Self {
        Self::zeros(shape, &vec![Axis::Generic; shape.len()])
    }

    /// `[time, freq, channel]` feature map.
    pub fn tfc(t: usize, f: usize, c: usize) -> Self {
        Self::zeros(&[t, f, c], &[Axis::Time, Axis::Freq, Axis::Channel])
    }

    pub fn tfc_from(t: usize, f: usize, c: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(&[t, f, c], &[Axis::Time, Axis::Freq, Axis::Channel], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
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

    /// `(t, f, c)` of a rank-3 feature map.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a rank-3 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize], axes: &[Axis]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() != axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        self.axes = axes.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Frames `[start, end)` of a time-leading tensor.
    pub fn time_slice(&self, start: usize, end: usize) -> Self {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self {
            shape,
            axes: self.axes.clone(),
            data: self.data[start * row..end * row].to_vec(),
        }
    }

    /// Concatenate two `[t, f, c]` maps along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (ta, fa, ca) = a.dims3();
        let (tb, fb, cb) = b.dims3();
        if ta != tb || fa != fb {
            return Err(Error::ShapeMismatch(format!(
                "channel concat of {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let mut out = Vec::with_capacity(a.len() + b.len());
        for (ra, rb) in a.data.chunks_exact(ca).zip(b.data.chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        Self::from_vec(&[ta, fa, ca + cb], &a.axes, out)
    }

    /// Inverse of [`Tensor::concat_channels`]: split the last axis at `ca`.
    pub fn split_channels(&self, ca: usize) -> (Self, Self) {
        let (t, f, c) = self.dims3();
        let cb = c - ca;
        let mut a = Vec::with_capacity(t * f * ca);
        let mut b = Vec::with_capacity(t * f * cb);
        for row in self.data.chunks_exact(c) {
            a.extend_from_slice(&row[..ca]);
            b.extend_from_slice(&row[ca..]);
        }
        (
            Self::from_vec(&[t, f, ca], &self.axes, a).unwrap(),
            Self::from_vec(&[t, f, cb], &self.axes, b).unwrap(),
        )
    }
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.axes)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::param(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::param(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::<f64>::tfc_from(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::tfc_from(2, 2, 2, (0..8).map(|v| v as f64).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 3]);
        assert_eq!(&c.data()[..6], &[1.0, 0.0, 1.0, 2.0, 2.0, 3.0]);
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }
}
