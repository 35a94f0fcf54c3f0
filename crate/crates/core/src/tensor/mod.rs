//! Dense row-major tensors of rank 1 to 4.
//!
//! Weight layouts: linear `[out_features, in_features]`, conv
//! `[out_channels, in_channels, kh, kw]`, depthwise `[channels, 1, kh, kw]`.
//! Activations are unbatched: `[features]` or `[channels, height, width]`.

mod ops;
mod view;

pub use ops::{conv2d, depthwise_conv2d, linear, Conv2dGeometry};
pub use view::{ChannelSlice, ChannelSliceMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Result<Self> {
        check_shape(&shape)?;
        let numel = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![value; numel],
        })
    }

    /// Rank-1 tensor from a non-empty vector.
    ///
    /// # Panics
    /// If `data` is empty.
    pub fn from_vec(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "rank-1 tensor needs at least one element");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        Ok(Tensor {
            shape,
            data: (0..numel).map(&mut f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of slices along `axis`.
    pub fn dim(&self, axis: usize) -> Result<usize> {
        self.shape.get(axis).copied().ok_or_else(|| {
            Error::OutOfBounds(format!("axis {axis} for rank-{} tensor", self.rank()))
        })
    }

    /// Elements per channel when the tensor is split along axis 0.
    pub fn channel_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel_slice(&self, axis: usize, index: usize) -> Result<ChannelSlice<'_, T>> {
        let (outer, dim, inner) = self.split_axis(axis, index)?;
        Ok(ChannelSlice::new(&self.data, outer, dim, inner, index))
    }

    pub fn channel_slice_mut(&mut self, axis: usize, index: usize) -> Result<ChannelSliceMut<'_, T>> {
        let (outer, dim, inner) = self.split_axis(axis, index)?;
        Ok(ChannelSliceMut::new(&mut self.data, outer, dim, inner, index))
    }

    /// Per-channel mean over all non-channel axes, for activations laid out
    /// `[channels, ...]`.
    pub fn channel_means(&self) -> Vec<f64> {
        let c = self.shape[0];
        let inner = self.channel_len();
        (0..c)
            .map(|i| {
                let s: f64 = self.data[i * inner..(i + 1) * inner]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum();
                s / inner as f64
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    fn split_axis(&self, axis: usize, index: usize) -> Result<(usize, usize, usize)> {
        let dim = self.dim(axis)?;
        if index >= dim {
            return Err(Error::OutOfBounds(format!(
                "channel {index} on axis {axis} of size {dim}"
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, dim, inner))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(())
}
