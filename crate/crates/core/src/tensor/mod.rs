//! Dense tensors, reverse-mode differentiation and the layer set used by
//! both reconstruction networks.
//!
//! Everything is generic over [`Real`] so the same kernels run in 32-bit for
//! training and in 64-bit for finite-difference verification.

mod checkpoint;
mod graph;
pub mod kernels;
mod layers;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use checkpoint::{fnv1a64, load_checkpoint, save_checkpoint, CHECKPOINT_HEADER_LEN, CHECKPOINT_MAGIC};
pub use graph::{Graph, Var};
pub use layers::{Activation, LayerKind, LayerParams, ParamSet};
pub use optim::{Algorithm, OptimizerState};

/// Scalar type usable for storage and accumulation.
pub trait Real: Float + Sum + AddAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "tensor shape must have positive extents");
        Tensor { shape: shape.to_vec(), data: vec![value; n], grad: None, requires_grad: false }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::config(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::c(v.f64())).collect()),
            requires_grad: self.requires_grad,
        }
    }
}

/// Forward-only layer application, mirroring the differentiable graph ops.
pub mod ops {
    use super::kernels::{self, ConvGeometry};
    use super::*;

    pub fn conv2d<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = g.conv2d(x, params)?;
        Ok(g.take_value(y))
    }

    pub fn conv3d<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = g.conv3d(x, params)?;
        Ok(g.take_value(y))
    }

    pub fn tconv2d<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = g.tconv2d(x, params)?;
        Ok(g.take_value(y))
    }

    pub fn max_pool<T: Real>(input: &Tensor<T>, window: usize, dims: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = g.max_pool(x, window, dims)?;
        Ok(g.take_value(y))
    }

    pub fn dense<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = g.dense(x, params)?;
        Ok(g.take_value(y))
    }

    pub fn activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
        let data = input.data.iter().map(|&v| kernels::activate(v, kind)).collect();
        Tensor { shape: input.shape.clone(), data, grad: None, requires_grad: false }
    }

    pub fn loss_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        kernels::mse(pred.data(), target.data())
    }

    pub fn loss_bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
        kernels::bce(pred.data(), target.data())
    }

    /// Closed-form spatial output extent of a convolution, or `None` when the
    /// window does not tile the padded input exactly.
    pub fn conv_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        ConvGeometry::out_extent(extent, kernel, stride, pad)
    }

    pub fn tconv_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        ConvGeometry::tconv_out_extent(extent, kernel, stride, pad)
    }
}
