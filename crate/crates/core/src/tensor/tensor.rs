use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape};

/// A dense rank-4 array in (batch, channel, height, width) order.
///
/// Tensors are immutable values; clones share storage. Gradient tracking
/// lives in [`crate::tensor::Graph`], not here.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DataLength { expected: shape.len(), got: data.len() });
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: Arc::new(vec![T::zero(); shape.len()]) }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: Arc::new(vec![value; shape.len()]) }
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> T) -> Self {
        let data = (0..shape.len()).map(f).collect();
        Tensor { shape, data: Arc::new(data) }
    }

    /// Gaussian-filled tensor; samples are drawn in f64 so that the stream
    /// is identical in 32- and 64-bit mode for a given generator state.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f64, std.max(0.0)).expect("valid std");
        Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
    }

    /// Uniform samples in [lo, hi), drawn in f64 for cross-precision parity.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(lo..hi)))
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.idx(b, c, y, x)]
    }

    /// The single element of a scalar tensor.
    pub fn scalar_value(&self) -> Result<T> {
        if !self.shape.is_scalar() {
            return Err(Error::NonScalarLoss { shape: self.shape });
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor { shape: self.shape, data: Arc::new(data) }
    }

    /// In-place elementwise accumulation (copy-on-write when shared).
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        let dst = Arc::make_mut(&mut self.data);
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    /// Replaces an element, cloning storage if shared. Used by finite
    /// differencing and the optimizer, never by graph operations.
    pub fn set(&mut self, index: usize, value: T) {
        Arc::make_mut(&mut self.data)[index] = value;
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Left-to-right sum of all elements.
    pub fn total(&self) -> T {
        let mut acc = T::zero();
        for &v in self.data.iter() {
            acc += v;
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element differs by at most `tol` relative to scale.
    pub fn approx_eq(&self, other: &Tensor<T>, tol: f64) -> bool {
        if self.shape != other.shape {
            return false;
        }
        self.data.iter().zip(other.data.iter()).all(|(&a, &b)| {
            let a = a.to_f64_lossy();
            let b = b.to_f64_lossy();
            (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.to_f64_lossy())).collect()),
        }
    }

    /// Largest absolute elementwise difference, widened to f64.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        let err = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::DataLength { expected: 4, got: 3 }));
    }

    #[test]
    fn clones_share_storage() {
        let a = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 1.5);
        let b = a.clone();
        assert!(Arc::ptr_eq(&a.data, &b.data));
    }

    #[test]
    fn add_assign_copies_on_write() {
        let a = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 1.0);
        let mut b = a.clone();
        b.add_assign(&a);
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 2.0);
    }

    #[test]
    fn scalar_value_requires_scalar_shape() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 1));
        assert!(t.scalar_value().is_err());
        assert_eq!(Tensor::<f32>::scalar(3.0).scalar_value().unwrap(), 3.0);
    }
}
