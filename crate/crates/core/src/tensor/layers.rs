use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    TConv2d,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

/// Learnable weights of one layer.
///
/// Weight layouts: conv2d `[out, in, kh, kw]`, conv3d `[out, in, kd, kh, kw]`,
/// tconv2d `[in, out, kh, kw]`, dense `[out, in]`. Bias is always `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Real = f32> {
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    /// Position inside the owning [`ParamSet`], used to route gradients.
    pub(crate) slot: Option<usize>,
}

impl<T: Real> LayerParams<T> {
    pub fn new(kind: LayerKind, weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let p = LayerParams { kind, weight, bias, stride, padding, slot: None };
        p.validate()?;
        Ok(p)
    }

    /// Uniform fan-in scaled initialization with zero bias.
    pub fn init(
        kind: LayerKind,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let wshape: Vec<usize> = match kind {
            LayerKind::Conv2d => vec![out_ch, in_ch, kernel, kernel],
            LayerKind::Conv3d => vec![out_ch, in_ch, kernel, kernel, kernel],
            LayerKind::TConv2d => vec![in_ch, out_ch, kernel, kernel],
            LayerKind::Dense => vec![out_ch, in_ch],
        };
        let fan_in = match kind {
            LayerKind::Dense => in_ch,
            LayerKind::Conv2d | LayerKind::TConv2d => in_ch * kernel * kernel,
            LayerKind::Conv3d => in_ch * kernel * kernel * kernel,
        };
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = wshape.iter().product();
        let data = (0..n).map(|_| T::c(rng.random_range(-bound..bound))).collect();
        let weight = Tensor::from_vec(&wshape, data)?;
        Self::new(kind, weight, Tensor::zeros(&[out_ch]), stride, padding)
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            LayerKind::TConv2d => self.weight.shape()[0],
            _ => self.weight.shape()[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::TConv2d => self.weight.shape()[1],
            _ => self.weight.shape()[0],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weight.shape();
        let rank = match self.kind {
            LayerKind::Conv2d | LayerKind::TConv2d => 4,
            LayerKind::Conv3d => 5,
            LayerKind::Dense => 2,
        };
        if ws.len() != rank {
            return Err(Error::config(format!("{:?} weight must have rank {rank}, got {ws:?}", self.kind)));
        }
        if self.bias.shape() != [self.out_channels()] {
            return Err(Error::config(format!(
                "{:?} bias shape {:?} does not match {} output channels",
                self.kind,
                self.bias.shape(),
                self.out_channels()
            )));
        }
        if self.kind != LayerKind::Dense && self.stride == 0 {
            return Err(Error::config("convolution stride must be positive"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
            slot: self.slot,
        }
    }
}

/// Ordered collection of layers; declaration order defines checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { layers: Vec::new() }
    }

    /// Adds a layer and returns its index.
    pub fn push(&mut self, mut layer: LayerParams<T>) -> usize {
        let idx = self.layers.len();
        layer.slot = Some(idx);
        layer.weight.set_requires_grad(true);
        layer.bias.set_requires_grad(true);
        self.layers.push(layer);
        idx
    }

    pub fn layer(&self, idx: usize) -> &LayerParams<T> {
        &self.layers[idx]
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut LayerParams<T> {
        &mut self.layers[idx]
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// Every tensor in declaration order (weight then bias per layer).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }

    /// Flat copy of all parameter values in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { layers: self.layers.iter().map(LayerParams::cast).collect() }
    }
}
