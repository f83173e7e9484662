//! Raw forward/backward loops. Shapes are validated by the callers in
//! [`super::Graph`]; these functions index directly.
//!
//! Two-dimensional convolutions run through the volumetric loops with a
//! depth extent of one.

#![allow(clippy::too_many_arguments)]

use std::ops::Range;

use super::layers::Activation;
use super::Real;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BCE_EPS: f64 = 1e-7;

/// Kernel extents, stride and per-axis padding of a (transposed) convolution
/// over `[C, D, H, W]` volumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: usize,
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        if stride == 0 || kernel == 0 {
            return None;
        }
        let padded = extent + 2 * pad;
        if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn tconv_out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        if stride == 0 || kernel == 0 || extent == 0 {
            return None;
        }
        let full = (extent - 1) * stride + kernel;
        if full <= 2 * pad {
            return None;
        }
        Some(full - 2 * pad)
    }

    /// Output spatial extents of a convolution, if every axis divides exactly.
    pub fn conv_out(&self, spatial: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = Self::out_extent(spatial[a], self.kernel[a], self.stride, self.pad[a])?;
        }
        Some(out)
    }

    pub fn tconv_out(&self, spatial: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = Self::tconv_out_extent(spatial[a], self.kernel[a], self.stride, self.pad[a])?;
        }
        Some(out)
    }
}

/// Range of "small side" indices `o` for which `o*s + k - p` falls inside `[0, big)`.
#[inline]
fn valid(small: usize, big: usize, k: usize, s: usize, p: usize) -> Range<usize> {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    // o*s + k - p <= big - 1  <=>  o <= (big - 1 + p - k) / s
    let top = big + p;
    let hi = if top <= k { 0 } else { ((top - 1 - k) / s + 1).min(small) };
    lo.min(hi)..hi
}

/// Shapes of one cross-correlation: `big` is the (padded-away) input side,
/// `small` the output side. A unit depth axis with a unit kernel is valid
/// for any stride, which is how 2D convolutions reuse these loops.
#[derive(Clone, Copy)]
struct Dims {
    big: [usize; 3],
    small: [usize; 3],
    stride: usize,
}

impl Dims {
    fn new(geom: &ConvGeometry, big: [usize; 3], small: [usize; 3]) -> Self {
        Dims { big, small, stride: geom.stride }
    }
    fn big_len(&self) -> usize {
        self.big.iter().product()
    }
    fn small_len(&self) -> usize {
        self.small.iter().product()
    }
}

/// Visits every (small row, big row, x-range) triple for one kernel tap.
#[inline]
fn for_tap<F: FnMut(usize, usize, Range<usize>, usize)>(d: &Dims, geom: &ConvGeometry, k: [usize; 3], mut f: F) {
    let s = d.stride;
    let rz = valid(d.small[0], d.big[0], k[0], s, geom.pad[0]);
    let ry = valid(d.small[1], d.big[1], k[1], s, geom.pad[1]);
    let rx = valid(d.small[2], d.big[2], k[2], s, geom.pad[2]);
    if rx.is_empty() {
        return;
    }
    for oz in rz {
        let iz = oz * s + k[0] - geom.pad[0];
        for oy in ry.clone() {
            let iy = oy * s + k[1] - geom.pad[1];
            let small_row = (oz * d.small[1] + oy) * d.small[2];
            let big_row = (iz * d.big[1] + iy) * d.big[2];
            f(small_row, big_row, rx.clone(), k[2]);
        }
    }
}

/// `small[co] += Σ w[co,ci,k] * big[ci, o*s+k-p]`.
fn correlate<T: Real>(
    big: &[T],
    big_ch: usize,
    weight: &[T],
    small: &mut [T],
    small_ch: usize,
    d: &Dims,
    geom: &ConvGeometry,
    weight_small_major: bool,
) {
    let [kd, kh, kw] = geom.kernel;
    let ktaps = kd * kh * kw;
    let (bl, sl) = (d.big_len(), d.small_len());
    let sw = d.stride;
    let pw = geom.pad[2];
    for co in 0..small_ch {
        let out = &mut small[co * sl..(co + 1) * sl];
        for ci in 0..big_ch {
            let inp = &big[ci * bl..(ci + 1) * bl];
            let wbase = if weight_small_major { (co * big_ch + ci) * ktaps } else { (ci * small_ch + co) * ktaps };
            for tz in 0..kd {
                for ty in 0..kh {
                    for tx in 0..kw {
                        let w = weight[wbase + (tz * kh + ty) * kw + tx];
                        for_tap(d, geom, [tz, ty, tx], |srow, brow, rx, k| {
                            let orow = &mut out[srow..srow + d.small[2]];
                            let irow = &inp[brow..brow + d.big[2]];
                            if sw == 1 {
                                let off = k as isize - pw as isize;
                                for ox in rx {
                                    orow[ox] += w * irow[(ox as isize + off) as usize];
                                }
                            } else {
                                for ox in rx {
                                    orow[ox] += w * irow[ox * sw + k - pw];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

/// `big[ci, o*s+k-p] += Σ w[co,ci,k] * small[co, o]` (adjoint of [`correlate`]).
fn correlate_adjoint<T: Real>(
    small: &[T],
    small_ch: usize,
    weight: &[T],
    big: &mut [T],
    big_ch: usize,
    d: &Dims,
    geom: &ConvGeometry,
    weight_small_major: bool,
) {
    let [kd, kh, kw] = geom.kernel;
    let ktaps = kd * kh * kw;
    let (bl, sl) = (d.big_len(), d.small_len());
    let sw = d.stride;
    let pw = geom.pad[2];
    for ci in 0..big_ch {
        let gin = &mut big[ci * bl..(ci + 1) * bl];
        for co in 0..small_ch {
            let g = &small[co * sl..(co + 1) * sl];
            let wbase = if weight_small_major { (co * big_ch + ci) * ktaps } else { (ci * small_ch + co) * ktaps };
            for tz in 0..kd {
                for ty in 0..kh {
                    for tx in 0..kw {
                        let w = weight[wbase + (tz * kh + ty) * kw + tx];
                        for_tap(d, geom, [tz, ty, tx], |srow, brow, rx, k| {
                            let grow = &g[srow..srow + d.small[2]];
                            let irow = &mut gin[brow..brow + d.big[2]];
                            for ox in rx {
                                irow[ox * sw + k - pw] += w * grow[ox];
                            }
                        });
                    }
                }
            }
        }
    }
}

/// `gw[co,ci,k] += Σ_o small[co,o] * big[ci, o*s+k-p]`.
fn correlate_weight_grad<T: Real>(
    small: &[T],
    small_ch: usize,
    big: &[T],
    big_ch: usize,
    gw: &mut [T],
    d: &Dims,
    geom: &ConvGeometry,
    weight_small_major: bool,
) {
    let [kd, kh, kw] = geom.kernel;
    let ktaps = kd * kh * kw;
    let (bl, sl) = (d.big_len(), d.small_len());
    let sw = d.stride;
    let pw = geom.pad[2];
    for co in 0..small_ch {
        let g = &small[co * sl..(co + 1) * sl];
        for ci in 0..big_ch {
            let inp = &big[ci * bl..(ci + 1) * bl];
            let wbase = if weight_small_major { (co * big_ch + ci) * ktaps } else { (ci * small_ch + co) * ktaps };
            for tz in 0..kd {
                for ty in 0..kh {
                    for tx in 0..kw {
                        let mut acc = T::zero();
                        for_tap(d, geom, [tz, ty, tx], |srow, brow, rx, k| {
                            let grow = &g[srow..srow + d.small[2]];
                            let irow = &inp[brow..brow + d.big[2]];
                            for ox in rx {
                                acc += grow[ox] * irow[ox * sw + k - pw];
                            }
                        });
                        gw[wbase + (tz * kh + ty) * kw + tx] += acc;
                    }
                }
            }
        }
    }
}

/// Convolution forward on `[C_in, D, H, W]` with weight `[C_out, C_in, kd, kh, kw]`.
pub fn conv_forward<T: Real>(
    input: &[T],
    in_ch: usize,
    in_sp: [usize; 3],
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    out_sp: [usize; 3],
    geom: &ConvGeometry,
) -> Vec<T> {
    let d = Dims::new(geom, in_sp, out_sp);
    let sl = d.small_len();
    let mut out = vec![T::zero(); out_ch * sl];
    for (co, chunk) in out.chunks_mut(sl).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    correlate(input, in_ch, weight, &mut out, out_ch, &d, geom, true);
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is skipped
/// when the caller does not need it.
pub fn conv_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    in_ch: usize,
    in_sp: [usize; 3],
    weight: &[T],
    out_ch: usize,
    out_sp: [usize; 3],
    geom: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let d = Dims::new(geom, in_sp, out_sp);
    let sl = d.small_len();
    let gin = need_input.then(|| {
        let mut g = vec![T::zero(); in_ch * d.big_len()];
        correlate_adjoint(grad_out, out_ch, weight, &mut g, in_ch, &d, geom, true);
        g
    });
    let mut gw = vec![T::zero(); weight.len()];
    correlate_weight_grad(grad_out, out_ch, input, in_ch, &mut gw, &d, geom, true);
    let gb = grad_out.chunks(sl).map(|c| c.iter().copied().sum()).collect();
    (gin, gw, gb)
}

/// Transposed convolution forward; weight is `[C_in, C_out, kd, kh, kw]`.
pub fn tconv_forward<T: Real>(
    input: &[T],
    in_ch: usize,
    in_sp: [usize; 3],
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    out_sp: [usize; 3],
    geom: &ConvGeometry,
) -> Vec<T> {
    // The output is the "big" side of the equivalent correlation.
    let d = Dims::new(geom, out_sp, in_sp);
    let bl = d.big_len();
    let mut out = vec![T::zero(); out_ch * bl];
    for (co, chunk) in out.chunks_mut(bl).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[co]);
    }
    correlate_adjoint(input, in_ch, weight, &mut out, out_ch, &d, geom, false);
    out
}

pub fn tconv_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    in_ch: usize,
    in_sp: [usize; 3],
    weight: &[T],
    out_ch: usize,
    out_sp: [usize; 3],
    geom: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let d = Dims::new(geom, out_sp, in_sp);
    let bl = d.big_len();
    let gin = need_input.then(|| {
        let mut g = vec![T::zero(); in_ch * d.small_len()];
        correlate(grad_out, out_ch, weight, &mut g, in_ch, &d, geom, false);
        g
    });
    let mut gw = vec![T::zero(); weight.len()];
    correlate_weight_grad(input, in_ch, grad_out, out_ch, &mut gw, &d, geom, false);
    let gb = grad_out.chunks(bl).map(|c| c.iter().copied().sum()).collect();
    (gin, gw, gb)
}

/// Max-pool over `[C, D, H, W]` with per-axis windows. Returns values and
/// the flat input index of each window's first maximum.
pub fn max_pool_forward<T: Real>(input: &[T], ch: usize, sp: [usize; 3], win: [usize; 3]) -> (Vec<T>, Vec<usize>) {
    let out_sp = [sp[0] / win[0], sp[1] / win[1], sp[2] / win[2]];
    let ol: usize = out_sp.iter().product();
    let il: usize = sp.iter().product();
    let mut vals = Vec::with_capacity(ch * ol);
    let mut arg = Vec::with_capacity(ch * ol);
    for c in 0..ch {
        let base = c * il;
        for oz in 0..out_sp[0] {
            for oy in 0..out_sp[1] {
                for ox in 0..out_sp[2] {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for wz in 0..win[0] {
                        for wy in 0..win[1] {
                            let row = base + ((oz * win[0] + wz) * sp[1] + oy * win[1] + wy) * sp[2] + ox * win[2];
                            for wx in 0..win[2] {
                                let v = input[row + wx];
                                if best == usize::MAX || v > best_v {
                                    best = row + wx;
                                    best_v = v;
                                }
                            }
                        }
                    }
                    vals.push(best_v);
                    arg.push(best);
                }
            }
        }
    }
    (vals, arg)
}

/// `[B, K] x [M, K]^T + b -> [B, M]`
pub fn dense_forward<T: Real>(input: &[T], batch: usize, k: usize, weight: &[T], bias: &[T], m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * m);
    for b in 0..batch {
        let x = &input[b * k..(b + 1) * k];
        for j in 0..m {
            let w = &weight[j * k..(j + 1) * k];
            let mut acc = bias[j];
            for (a, c) in w.iter().zip(x) {
                acc += *a * *c;
            }
            out.push(acc);
        }
    }
    out
}

pub fn dense_backward<T: Real>(
    grad_out: &[T],
    input: &[T],
    batch: usize,
    k: usize,
    weight: &[T],
    m: usize,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); m * k];
    let mut gb = vec![T::zero(); m];
    let mut gin = need_input.then(|| vec![T::zero(); batch * k]);
    for b in 0..batch {
        let x = &input[b * k..(b + 1) * k];
        let g = &grad_out[b * m..(b + 1) * m];
        for j in 0..m {
            let gj = g[j];
            if gj == T::zero() {
                continue;
            }
            gb[j] += gj;
            let wrow = &mut gw[j * k..(j + 1) * k];
            for (w, &xv) in wrow.iter_mut().zip(x) {
                *w += gj * xv;
            }
            if let Some(gin) = gin.as_mut() {
                let grow = &mut gin[b * k..(b + 1) * k];
                for (gv, &wv) in grow.iter_mut().zip(&weight[j * k..(j + 1) * k]) {
                    *gv += gj * wv;
                }
            }
        }
    }
    (gin, gw, gb)
}

#[inline]
pub fn activate<T: Real>(x: T, kind: Activation) -> T {
    match kind {
        Activation::Relu => x.max(T::zero()),
        Activation::LeakyRelu => {
            if x > T::zero() {
                x
            } else {
                x * T::c(LEAKY_SLOPE)
            }
        }
        Activation::Sigmoid => {
            let s = if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            };
            // Keep the output strictly inside (0, 1) at any storage precision.
            s.max(T::epsilon()).min(T::one() - T::epsilon())
        }
    }
}

/// Derivative expressed through the input `x` and output `y`.
#[inline]
pub fn activate_grad<T: Real>(x: T, y: T, kind: Activation) -> T {
    match kind {
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::LeakyRelu => {
            if x > T::zero() {
                T::one()
            } else {
                T::c(LEAKY_SLOPE)
            }
        }
        Activation::Sigmoid => y * (T::one() - y),
    }
}

fn check_pair<T: Real>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::config(format!("loss length mismatch: {} vs {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::usage("loss over an empty set"));
    }
    Ok(())
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    check_pair(pred, target)?;
    let s: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(s / T::c(pred.len() as f64))
}

pub fn mse_grad<T: Real>(pred: &[T], target: &[T]) -> Vec<T> {
    let scale = T::c(2.0 / pred.len() as f64);
    pred.iter().zip(target).map(|(&p, &t)| scale * (p - t)).collect()
}

pub(crate) fn check_binary<T: Real>(target: &[T]) -> Result<()> {
    if let Some(bad) = target.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::config(format!("cross-entropy target {bad:?} is not in {{0, 1}}")));
    }
    Ok(())
}

pub fn bce<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    check_pair(pred, target)?;
    check_binary(target)?;
    let eps = T::c(BCE_EPS);
    let s: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(eps).min(T::one() - eps);
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        })
        .sum();
    Ok(s / T::c(pred.len() as f64))
}

/// Zero outside the clamp interval, matching the clamped forward.
pub fn bce_grad<T: Real>(pred: &[T], target: &[T]) -> Vec<T> {
    let eps = T::c(BCE_EPS);
    let n = T::c(pred.len() as f64);
    pred.iter()
        .zip(target)
        .map(
            |(&p, &t)| {
                if p < eps || p > T::one() - eps {
                    T::zero()
                } else {
                    (-(t / p) + (T::one() - t) / (T::one() - p)) / n
                }
            },
        )
        .collect()
}

/// Bilinear taps (flat plane offset, weight) for a continuous lattice
/// coordinate `(x, y)` on a `height x width` plane, clamped to the lattice.
#[inline]
pub fn bilinear_taps<T: Real>(x: f64, y: f64, height: usize, width: usize) -> [(usize, T); 4] {
    let (x0, x1, fx) = axis_taps(x, width);
    let (y0, y1, fy) = axis_taps(y, height);
    [
        (y0 * width + x0, T::c((1.0 - fx) * (1.0 - fy))),
        (y0 * width + x1, T::c(fx * (1.0 - fy))),
        (y1 * width + x0, T::c((1.0 - fx) * fy)),
        (y1 * width + x1, T::c(fx * fy)),
    ]
}

#[inline]
pub fn trilinear_taps<T: Real>(x: f64, y: f64, z: f64, depth: usize, height: usize, width: usize) -> [(usize, T); 8] {
    let (x0, x1, fx) = axis_taps(x, width);
    let (y0, y1, fy) = axis_taps(y, height);
    let (z0, z1, fz) = axis_taps(z, depth);
    let idx = |z: usize, y: usize, x: usize| (z * height + y) * width + x;
    [
        (idx(z0, y0, x0), T::c((1.0 - fx) * (1.0 - fy) * (1.0 - fz))),
        (idx(z0, y0, x1), T::c(fx * (1.0 - fy) * (1.0 - fz))),
        (idx(z0, y1, x0), T::c((1.0 - fx) * fy * (1.0 - fz))),
        (idx(z0, y1, x1), T::c(fx * fy * (1.0 - fz))),
        (idx(z1, y0, x0), T::c((1.0 - fx) * (1.0 - fy) * fz)),
        (idx(z1, y0, x1), T::c(fx * (1.0 - fy) * fz)),
        (idx(z1, y1, x0), T::c((1.0 - fx) * fy * fz)),
        (idx(z1, y1, x1), T::c(fx * fy * fz)),
    ]
}

/// Lower/upper lattice index and blend fraction along one axis, clamped.
#[inline]
pub fn axis_taps(c: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, max) };
    let i0 = (c.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for big in 1..9 {
            for k in 0..4 {
                for s in 1..4 {
                    for p in 0..3 {
                        for small in 1..9 {
                            let r = valid(small, big, k, s, p);
                            for o in 0..small {
                                let i = (o * s + k) as isize - p as isize;
                                let inside = i >= 0 && (i as usize) < big;
                                assert_eq!(r.contains(&o), inside, "big {big} k {k} s {s} p {p} o {o}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn axis_taps_clamp() {
        assert_eq!(axis_taps(-3.0, 4), (0, 1, 0.0));
        assert_eq!(axis_taps(7.5, 4), (3, 3, 0.0));
        let (a, b, f) = axis_taps(1.25, 4);
        assert_eq!((a, b), (1, 2));
        assert!((f - 0.25).abs() < 1e-12);
    }
}
