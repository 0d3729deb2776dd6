//! Sinusoidal timestep features.

use crate::autodiff::{Backend, Tensor};
use crate::error::{Error, Result};

/// Highest angular frequency used by the embeddings.
const MAX_FREQ: f64 = 100.0;

/// `dim / 2` frequencies spaced geometrically from 1 to 100 rad per unit time.
pub fn time_frequencies(dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dim {dim} must be even and positive")));
    }
    let half = dim / 2;
    if half == 1 {
        return Ok(vec![1.0]);
    }
    Ok((0..half)
        .map(|k| MAX_FREQ.powf(k as f64 / (half - 1) as f64))
        .collect())
}

/// `[sin(w_k t)..., cos(w_k t)...]` for a single time.
pub fn time_embed(t: f64, dim: usize) -> Result<Tensor> {
    let freqs = time_frequencies(dim)?;
    let mut out: Vec<f64> = freqs.iter().map(|w| (w * t).sin()).collect();
    out.extend(freqs.iter().map(|w| (w * t).cos()));
    Tensor::new(vec![dim], out)
}

/// Row-wise embedding of `t` with shape `[rows, 1]` into `[rows, dim]`.
pub fn embed_times<B: Backend>(b: &mut B, t: &B::Value, dim: usize) -> Result<B::Value> {
    let freqs = time_frequencies(dim)?;
    let half = freqs.len();
    let f = b.constant(Tensor::new(vec![1, half], freqs)?);
    let phase = b.matmul(t, &f)?;
    let s = b.sin(&phase);
    let c = b.cos(&phase);
    b.concat(&[s, c], 1)
}
