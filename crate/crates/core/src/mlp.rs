//! Occupancy head shared by both stages: dense layers with leaky ReLU and a
//! final sigmoid.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Graph, LayerKind, LayerParams, ParamSet, Real, Var};

pub(crate) fn check_widths(input: usize, widths: &[usize]) -> Result<()> {
    if input == 0 || widths.is_empty() || widths.contains(&0) {
        return Err(Error::config(format!("MLP widths {widths:?} over input {input} must be non-empty and positive")));
    }
    if widths.last() != Some(&1) {
        return Err(Error::config(format!("MLP must end in a single output, got widths {widths:?}")));
    }
    Ok(())
}

/// Appends the head's layers to `params`; returns their slots.
pub(crate) fn push_mlp<T: Real>(
    params: &mut ParamSet<T>,
    input: usize,
    widths: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    check_widths(input, widths)?;
    let mut slots = Vec::with_capacity(widths.len());
    let mut prev = input;
    for &w in widths {
        slots.push(params.push(LayerParams::init(LayerKind::Dense, prev, w, 1, 1, 0, rng)?));
        prev = w;
    }
    Ok(slots)
}

/// `[P, K]` features → `[P, 1]` probabilities.
pub(crate) fn mlp_forward<T: Real>(g: &mut Graph<T>, x: Var, params: &ParamSet<T>, slots: &[usize]) -> Result<Var> {
    let mut h = x;
    for (i, &s) in slots.iter().enumerate() {
        h = g.dense(h, params.layer(s))?;
        let kind = if i + 1 == slots.len() { Activation::Sigmoid } else { Activation::LeakyRelu };
        h = g.act(h, kind)?;
    }
    Ok(h)
}
