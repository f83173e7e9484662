//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Values are
//! immutable once recorded; [`Graph::backward`] walks the tape in reverse and
//! fills gradients for every node that depends on a parameter or on an input
//! created with [`Graph::input_with_grad`].

use super::kernels::{self, ConvGeometry};
use super::layers::{Activation, LayerKind, LayerParams, ParamSet};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Real> {
    Input,
    Param { slot: Option<usize>, bias: bool },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeometry, in_sp: [usize; 3], out_sp: [usize; 3] },
    TConv { x: Var, w: Var, b: Var, geom: ConvGeometry, in_sp: [usize; 3], out_sp: [usize; 3] },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Var, batch: usize, k: usize, m: usize },
    Act { x: Var, kind: Activation },
    Add { a: Var, b: Var },
    ConcatCols { parts: Vec<(Var, usize)>, rows: usize },
    ConcatRows { parts: Vec<Var> },
    Sample { grid: Var, channels: usize, plane: usize, taps: Vec<[(usize, T); 8]>, ntaps: usize },
    Mse { pred: Var, target: Vec<T> },
    Bce { pred: Var, target: Vec<T> },
    WeightedSum { x: Var, weights: Vec<T> },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Conv { .. } => "conv",
            Op::TConv { .. } => "tconv",
            Op::MaxPool { .. } => "max_pool",
            Op::Dense { .. } => "dense",
            Op::Act { .. } => "activation",
            Op::Add { .. } => "add",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ConcatRows { .. } => "concat_rows",
            Op::Sample { .. } => "grid_sample",
            Op::Mse { .. } => "loss_mse",
            Op::Bce { .. } => "loss_bce",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Input, tracked: false });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is recorded by `backward`.
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Input, tracked: true });
        Var(self.nodes.len() - 1)
    }

    fn param_pair(&mut self, p: &LayerParams<T>) -> (Var, Var) {
        let mut w = p.weight.clone();
        w.set_requires_grad(false);
        let mut b = p.bias.clone();
        b.set_requires_grad(false);
        self.nodes.push(Node { value: w, op: Op::Param { slot: p.slot, bias: false }, tracked: true });
        let wv = Var(self.nodes.len() - 1);
        self.nodes.push(Node { value: b, op: Op::Param { slot: p.slot, bias: true }, tracked: true });
        (wv, Var(self.nodes.len() - 1))
    }

    fn expect_kind(p: &LayerParams<T>, kind: LayerKind) -> Result<()> {
        if p.kind != kind {
            return Err(Error::config(format!("expected {kind:?} parameters, got {:?}", p.kind)));
        }
        p.validate()
    }

    pub fn conv2d(&mut self, x: Var, p: &LayerParams<T>) -> Result<Var> {
        Self::expect_kind(p, LayerKind::Conv2d)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::config(format!("conv2d expects [C, H, W] input, got {xs:?}")));
        }
        let ws = p.weight.shape();
        let geom = ConvGeometry { kernel: [1, ws[2], ws[3]], stride: p.stride, pad: [0, p.padding, p.padding] };
        self.conv_impl(x, p, xs[0], [1, xs[1], xs[2]], geom, 3)
    }

    pub fn conv3d(&mut self, x: Var, p: &LayerParams<T>) -> Result<Var> {
        Self::expect_kind(p, LayerKind::Conv3d)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::config(format!("conv3d expects [C, D, H, W] input, got {xs:?}")));
        }
        let ws = p.weight.shape();
        let geom = ConvGeometry { kernel: [ws[2], ws[3], ws[4]], stride: p.stride, pad: [p.padding; 3] };
        self.conv_impl(x, p, xs[0], [xs[1], xs[2], xs[3]], geom, 4)
    }

    fn conv_impl(
        &mut self,
        x: Var,
        p: &LayerParams<T>,
        in_ch: usize,
        in_sp: [usize; 3],
        geom: ConvGeometry,
        rank: usize,
    ) -> Result<Var> {
        if p.in_channels() != in_ch {
            return Err(Error::config(format!("convolution expects {} input channels, got {in_ch}", p.in_channels())));
        }
        let out_sp = geom.conv_out(in_sp).ok_or_else(|| {
            Error::config(format!(
                "convolution kernel {:?} stride {} pad {:?} does not tile input {in_sp:?} exactly",
                geom.kernel, geom.stride, geom.pad
            ))
        })?;
        let out_ch = p.out_channels();
        let (w, b) = self.param_pair(p);
        let data = kernels::conv_forward(
            self.value(x).data(),
            in_ch,
            in_sp,
            self.value(w).data(),
            self.value(b).data(),
            out_ch,
            out_sp,
            &geom,
        );
        let shape: Vec<usize> =
            if rank == 3 { vec![out_ch, out_sp[1], out_sp[2]] } else { vec![out_ch, out_sp[0], out_sp[1], out_sp[2]] };
        let value = Tensor::from_vec(&shape, data)?;
        self.push(value, Op::Conv { x, w, b, geom, in_sp, out_sp }, true)
    }

    pub fn tconv2d(&mut self, x: Var, p: &LayerParams<T>) -> Result<Var> {
        Self::expect_kind(p, LayerKind::TConv2d)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::config(format!("tconv2d expects [C, H, W] input, got {xs:?}")));
        }
        if p.in_channels() != xs[0] {
            return Err(Error::config(format!("tconv2d expects {} input channels, got {}", p.in_channels(), xs[0])));
        }
        let ws = p.weight.shape();
        let geom = ConvGeometry { kernel: [1, ws[2], ws[3]], stride: p.stride, pad: [0, p.padding, p.padding] };
        let in_sp = [1, xs[1], xs[2]];
        let out_sp = geom
            .tconv_out(in_sp)
            .ok_or_else(|| Error::config(format!("tconv2d padding {} too large for input {xs:?}", p.padding)))?;
        let out_ch = p.out_channels();
        let (w, b) = self.param_pair(p);
        let data = kernels::tconv_forward(
            self.value(x).data(),
            xs[0],
            in_sp,
            self.value(w).data(),
            self.value(b).data(),
            out_ch,
            out_sp,
            &geom,
        );
        let value = Tensor::from_vec(&[out_ch, out_sp[1], out_sp[2]], data)?;
        self.push(value, Op::TConv { x, w, b, geom, in_sp, out_sp }, true)
    }

    /// Window-`window` max pooling over the trailing `dims` (2 or 3) axes.
    pub fn max_pool(&mut self, x: Var, window: usize, dims: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if !(dims == 2 || dims == 3) || xs.len() != dims + 1 || window == 0 {
            return Err(Error::config(format!("max_pool over {dims} dims cannot take input {xs:?}")));
        }
        let (sp, win) =
            if dims == 2 { ([1, xs[1], xs[2]], [1, window, window]) } else { ([xs[1], xs[2], xs[3]], [window; 3]) };
        if sp.iter().zip(&win).any(|(&e, &w)| e % w != 0) {
            return Err(Error::config(format!("max_pool window {window} does not divide extents {:?}", &xs[1..])));
        }
        let (vals, argmax) = kernels::max_pool_forward(self.value(x).data(), xs[0], sp, win);
        let mut shape = vec![xs[0]];
        shape.extend(xs[1..].iter().map(|e| e / window));
        let value = Tensor::from_vec(&shape, vals)?;
        let tracked = self.tracked(x);
        self.push(value, Op::MaxPool { x, argmax }, tracked)
    }

    /// Affine map over a `[K]` vector or a `[B, K]` batch of rows.
    pub fn dense(&mut self, x: Var, p: &LayerParams<T>) -> Result<Var> {
        Self::expect_kind(p, LayerKind::Dense)?;
        let xs = self.shape(x).to_vec();
        let (batch, k) = match xs.as_slice() {
            [k] => (1, *k),
            [b, k] => (*b, *k),
            _ => return Err(Error::config(format!("dense expects [K] or [B, K] input, got {xs:?}"))),
        };
        if p.in_channels() != k {
            return Err(Error::config(format!("dense expects input length {}, got {k}", p.in_channels())));
        }
        let m = p.out_channels();
        let (w, b) = self.param_pair(p);
        let data =
            kernels::dense_forward(self.value(x).data(), batch, k, self.value(w).data(), self.value(b).data(), m);
        let shape = if xs.len() == 1 { vec![m] } else { vec![batch, m] };
        let value = Tensor::from_vec(&shape, data)?;
        self.push(value, Op::Dense { x, w, b, batch, k, m }, true)
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| kernels::activate(a, kind)).collect();
        let value = Tensor::from_vec(v.shape(), data)?;
        let tracked = self.tracked(x);
        self.push(value, Op::Act { x, kind }, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::config(format!("add shape mismatch {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add { a, b }, tracked)
    }

    /// Joins `[P, C_i]` matrices side by side into `[P, Σ C_i]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p)[0],
            None => return Err(Error::usage("concat of zero tensors")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::config(format!("concat_cols expects [{rows}, C] parts, got {s:?}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::from_vec(&[rows, total], data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let parts = parts.iter().copied().zip(widths).collect();
        self.push(value, Op::ConcatCols { parts, rows }, tracked)
    }

    /// Stacks `[P_i, C]` matrices into `[Σ P_i, C]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.shape(p).get(1).copied().unwrap_or(0),
            None => return Err(Error::usage("concat of zero tensors")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::config(format!("concat_rows expects [P, {cols}] parts, got {s:?}")));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[rows, cols], data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::ConcatRows { parts: parts.to_vec() }, tracked)
    }

    /// Bilinear lookup of a `[C, H, W]` grid at continuous lattice
    /// coordinates `(x, y)` (x along W). Out-of-lattice queries clamp.
    /// Returns `[P, C]`.
    pub fn sample_bilinear(&mut self, grid: Var, coords: &[[f64; 2]]) -> Result<Var> {
        let gs = self.shape(grid).to_vec();
        if gs.len() != 3 {
            return Err(Error::config(format!("bilinear sampling expects [C, H, W], got {gs:?}")));
        }
        let (h, w) = (gs[1], gs[2]);
        let taps = coords
            .iter()
            .map(|&[x, y]| {
                let t = kernels::bilinear_taps::<T>(x, y, h, w);
                let mut full = [(0usize, T::zero()); 8];
                full[..4].copy_from_slice(&t);
                full
            })
            .collect();
        self.sample_impl(grid, gs[0], h * w, taps, 4)
    }

    /// Trilinear lookup of a `[C, D, H, W]` grid at `(x, y, z)` lattice
    /// coordinates (x along W, z along D). Returns `[P, C]`.
    pub fn sample_trilinear(&mut self, grid: Var, coords: &[[f64; 3]]) -> Result<Var> {
        let gs = self.shape(grid).to_vec();
        if gs.len() != 4 {
            return Err(Error::config(format!("trilinear sampling expects [C, D, H, W], got {gs:?}")));
        }
        let (d, h, w) = (gs[1], gs[2], gs[3]);
        let taps = coords.iter().map(|&[x, y, z]| kernels::trilinear_taps::<T>(x, y, z, d, h, w)).collect();
        self.sample_impl(grid, gs[0], d * h * w, taps, 8)
    }

    fn sample_impl(
        &mut self,
        grid: Var,
        channels: usize,
        plane: usize,
        taps: Vec<[(usize, T); 8]>,
        ntaps: usize,
    ) -> Result<Var> {
        if taps.is_empty() {
            return Err(Error::usage("grid sampling with zero query points"));
        }
        let g = self.value(grid).data();
        let mut data = Vec::with_capacity(taps.len() * channels);
        for t in &taps {
            for c in 0..channels {
                let base = c * plane;
                let mut acc = T::zero();
                for &(i, wt) in &t[..ntaps] {
                    acc += wt * g[base + i];
                }
                data.push(acc);
            }
        }
        let value = Tensor::from_vec(&[taps.len(), channels], data)?;
        let tracked = self.tracked(grid);
        self.push(value, Op::Sample { grid, channels, plane, taps, ntaps }, tracked)
    }

    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let loss = kernels::mse(self.value(pred).data(), target)?;
        let tracked = self.tracked(pred);
        self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.to_vec() }, tracked)
    }

    pub fn bce(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let loss = kernels::bce(self.value(pred).data(), target)?;
        let tracked = self.tracked(pred);
        self.push(Tensor::scalar(loss), Op::Bce { pred, target: target.to_vec() }, tracked)
    }

    /// `Σ w_i x_i`, a scalar probe used for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(Error::config("weighted_sum length mismatch"));
        }
        let s = v.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights: weights.to_vec() }, tracked)
    }

    fn add_grad(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!("backward needs a scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = Some(gout);
                continue;
            }
            let need = |v: Var| self.nodes[v.0].tracked;
            match &node.op {
                Op::Input | Op::Param { .. } => {}
                Op::Conv { x, w, b, geom, in_sp, out_sp } => {
                    let xv = self.value(*x);
                    let (gi, gw, gb) = kernels::conv_backward(
                        &gout,
                        xv.data(),
                        xv.shape()[0],
                        *in_sp,
                        self.value(*w).data(),
                        node.value.shape()[0],
                        *out_sp,
                        geom,
                        need(*x),
                    );
                    if let Some(gi) = gi {
                        Self::add_grad(&mut grads, *x, gi);
                    }
                    Self::add_grad(&mut grads, *w, gw);
                    Self::add_grad(&mut grads, *b, gb);
                }
                Op::TConv { x, w, b, geom, in_sp, out_sp } => {
                    let xv = self.value(*x);
                    let (gi, gw, gb) = kernels::tconv_backward(
                        &gout,
                        xv.data(),
                        xv.shape()[0],
                        *in_sp,
                        self.value(*w).data(),
                        node.value.shape()[0],
                        *out_sp,
                        geom,
                        need(*x),
                    );
                    if let Some(gi) = gi {
                        Self::add_grad(&mut grads, *x, gi);
                    }
                    Self::add_grad(&mut grads, *w, gw);
                    Self::add_grad(&mut grads, *b, gb);
                }
                Op::MaxPool { x, argmax } => {
                    if need(*x) {
                        let mut gi = vec![T::zero(); self.value(*x).len()];
                        for (&a, &g) in argmax.iter().zip(&gout) {
                            gi[a] += g;
                        }
                        Self::add_grad(&mut grads, *x, gi);
                    }
                }
                Op::Dense { x, w, b, batch, k, m } => {
                    let (gi, gw, gb) = kernels::dense_backward(
                        &gout,
                        self.value(*x).data(),
                        *batch,
                        *k,
                        self.value(*w).data(),
                        *m,
                        need(*x),
                    );
                    if let Some(gi) = gi {
                        Self::add_grad(&mut grads, *x, gi);
                    }
                    Self::add_grad(&mut grads, *w, gw);
                    Self::add_grad(&mut grads, *b, gb);
                }
                Op::Act { x, kind } => {
                    if need(*x) {
                        let gi = self
                            .value(*x)
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .zip(&gout)
                            .map(|((&xi, &yi), &g)| g * kernels::activate_grad(xi, yi, *kind))
                            .collect();
                        Self::add_grad(&mut grads, *x, gi);
                    }
                }
                Op::Add { a, b } => {
                    if need(*a) {
                        Self::add_grad(&mut grads, *a, gout.clone());
                    }
                    if need(*b) {
                        Self::add_grad(&mut grads, *b, gout.clone());
                    }
                }
                Op::ConcatCols { parts, rows } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for &(p, w) in parts {
                        if need(p) {
                            let mut gi = Vec::with_capacity(rows * w);
                            for r in 0..*rows {
                                gi.extend_from_slice(&gout[r * total + offset..r * total + offset + w]);
                            }
                            Self::add_grad(&mut grads, p, gi);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if need(p) {
                            Self::add_grad(&mut grads, p, gout[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::Sample { grid, channels, plane, taps, ntaps } => {
                    if need(*grid) {
                        let mut gi = vec![T::zero(); self.value(*grid).len()];
                        for (p, t) in taps.iter().enumerate() {
                            for c in 0..*channels {
                                let g = gout[p * channels + c];
                                let base = c * plane;
                                for &(i, wt) in &t[..*ntaps] {
                                    gi[base + i] += wt * g;
                                }
                            }
                        }
                        Self::add_grad(&mut grads, *grid, gi);
                    }
                }
                Op::Mse { pred, target } => {
                    let g = gout[0];
                    let gi = kernels::mse_grad(self.value(*pred).data(), target).into_iter().map(|v| v * g).collect();
                    Self::add_grad(&mut grads, *pred, gi);
                }
                Op::Bce { pred, target } => {
                    let g = gout[0];
                    let gi = kernels::bce_grad(self.value(*pred).data(), target).into_iter().map(|v| v * g).collect();
                    Self::add_grad(&mut grads, *pred, gi);
                }
                Op::WeightedSum { x, weights } => {
                    let g = gout[0];
                    Self::add_grad(&mut grads, *x, weights.iter().map(|&w| w * g).collect());
                }
            }
            grads[idx] = Some(gout);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", self.nodes[i].op.name())));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the parameter gradients of the last backward pass into `params`.
    /// Every parameter gets a buffer, zero-filled when it did not take part.
    pub fn accumulate_into(&self, params: &mut ParamSet<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { slot: Some(slot), bias } = node.op {
                if slot >= params.len() {
                    continue;
                }
                let layer = params.layer_mut(slot);
                let t = if bias { &mut layer.bias } else { &mut layer.weight };
                match self.grads.get(i).and_then(|g| g.as_deref()) {
                    Some(g) if g.len() == t.len() => t.accumulate_grad(g),
                    _ => {}
                }
            }
        }
        for t in params.tensors_mut() {
            if t.grad().is_none() {
                let z = vec![T::zero(); t.len()];
                t.accumulate_grad(&z);
            }
        }
    }
}
