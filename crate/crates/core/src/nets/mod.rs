//! The flow-map network, the loss-weighting network, low-rank adapters and
//! the discriminator. Every network is written once against [`Backend`] so it
//! can be evaluated eagerly, differentiated forward or recorded on a tape.

mod checkpoint;
mod discriminator;
mod embed;
mod flowmap;
mod lora;
mod weightnet;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Backend, Tensor};
use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use discriminator::Discriminator;
pub use embed::{embed_times, time_embed, time_frequencies};
pub use flowmap::{FlowMapConfig, FlowMapModel, ScaledModel};
pub use lora::{lora_effective_weight, LowRankAdapter};
pub use weightnet::WeightNet;

/// Named parameter tensors.
pub type Params = BTreeMap<String, Tensor>;

/// Conditioning label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Positive,
    Negative,
    Null,
}

impl Condition {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Condition::Positive => 0,
            Condition::Negative => 1,
            Condition::Null => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Positive => "pos",
            Condition::Negative => "neg",
            Condition::Null => "null",
        }
    }

    /// `[rows, 3]` one-hot rows.
    pub fn one_hot(conds: &[Condition]) -> Result<Tensor> {
        let mut data = vec![0.0; conds.len() * Self::COUNT];
        for (i, c) in conds.iter().enumerate() {
            data[i * Self::COUNT + c.index()] = 1.0;
        }
        Tensor::new(vec![conds.len(), Self::COUNT], data)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pos" | "positive" => Ok(Condition::Positive),
            "neg" | "negative" => Ok(Condition::Negative),
            "null" | "none" => Ok(Condition::Null),
            other => Err(Error::InvalidArgument(format!("unknown condition '{other}'"))),
        }
    }
}

/// Anything that can report an average velocity `u_{s,t}(x | c)` row by row,
/// together with its directional derivative in `(x, s, t)`.
pub trait AverageVelocity {
    fn state_dim(&self) -> usize;

    fn average_velocity(&self, x: &Tensor, s: &[f64], t: &[f64], cond: &[Condition]) -> Result<Tensor>;

    /// Value and `grad_x u . dx + d_s u . ds + d_t u . dt`.
    #[allow(clippy::too_many_arguments)]
    fn average_velocity_jvp(
        &self,
        x: &Tensor,
        s: &[f64],
        t: &[f64],
        cond: &[Condition],
        dx: Option<&Tensor>,
        ds: f64,
        dt: f64,
    ) -> Result<(Tensor, Tensor)>;
}

/// Checks `[rows, d]` against per-row times and conditions.
pub(crate) fn check_inputs(x: &Tensor, dim: usize, s: &[f64], t: &[f64], cond: &[Condition]) -> Result<()> {
    if x.ndim() != 2 || x.cols() != dim {
        return Err(Error::Shape(format!("expected [rows, {dim}] state, got {:?}", x.shape())));
    }
    let rows = x.rows();
    if s.len() != rows || t.len() != rows || cond.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} rows with {} / {} times and {} conditions",
            s.len(),
            t.len(),
            cond.len()
        )));
    }
    for (&a, &b) in s.iter().zip(t) {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("times ({a}, {b}) outside [0, 1]")));
        }
        if a > b {
            return Err(Error::InvalidArgument(format!("s = {a} exceeds t = {b}")));
        }
    }
    Ok(())
}

pub(crate) fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("positive bound");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// Default dense-layer initialization: weights and bias uniform in
/// `+-1/sqrt(fan_in)`. Weights are stored `[out, in]`.
pub(crate) fn init_linear<R: Rng + ?Sized>(params: &mut Params, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) {
    let bound = 1.0 / (d_in as f64).sqrt();
    params.insert(format!("{prefix}.weight"), uniform_tensor(rng, &[d_out, d_in], bound));
    params.insert(format!("{prefix}.bias"), uniform_tensor(rng, &[1, d_out], bound));
}

pub(crate) fn zero_linear(params: &mut Params, prefix: &str, d_in: usize, d_out: usize) {
    params.insert(format!("{prefix}.weight"), Tensor::zeros(&[d_out, d_in]));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[1, d_out]));
}

pub(crate) fn get<'a>(params: &'a Params, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::Contract(format!("missing parameter '{name}'")))
}

/// `x W^T + b` for the layer stored under `prefix`.
pub(crate) fn linear<B: Backend>(b: &mut B, params: &Params, prefix: &str, x: &B::Value) -> Result<B::Value> {
    let wn = format!("{prefix}.weight");
    let bn = format!("{prefix}.bias");
    let w = b.param(&wn, get(params, &wn)?);
    let bias = b.param(&bn, get(params, &bn)?);
    let y = b.matmul_t(x, &w)?;
    b.add_broadcast(&y, &bias)
}

/// Parameters whose names start with `prefix`.
pub fn select(params: &Params, prefix: &str) -> Params {
    params
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests;
