//! The learned loss weighting `lambda_{s,t}`.

use rand::Rng;

use super::{embed_times, get, init_linear, linear, zero_linear, Params};
use crate::autodiff::{Backend, Eval, Tensor};
use crate::error::{Error, Result};

/// `Linear(2E -> 1) -> SiLU -> Linear(1 -> 1)` over the concatenated
/// embeddings of `s` and `t`. The last layer starts at zero, so
/// `lambda == 0` everywhere at initialization.
#[derive(Clone, Debug)]
pub struct WeightNet {
    embed_dim: usize,
    params: Params,
}

impl WeightNet {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Result<Self> {
        super::time_frequencies(embed_dim)?;
        let mut params = Params::new();
        init_linear(&mut params, "weightnet.l1", 2 * embed_dim, 1, rng);
        zero_linear(&mut params, "weightnet.l2", 1, 1);
        Ok(Self { embed_dim, params })
    }

    pub fn from_params(embed_dim: usize, params: Params) -> Result<Self> {
        let w1 = get(&params, "weightnet.l1.weight")?;
        get(&params, "weightnet.l2.weight")?;
        if w1.shape() != [1, 2 * embed_dim] {
            return Err(Error::Shape("weight-net input layer does not match".into()));
        }
        Ok(Self { embed_dim, params })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn update_params(&mut self, new: &Params) -> Result<()> {
        for (k, v) in new {
            match self.params.get_mut(k) {
                Some(slot) if slot.shape() == v.shape() => *slot = v.clone(),
                _ => return Err(Error::Contract(format!("bad weight-net parameter '{k}'"))),
            }
        }
        Ok(())
    }

    /// `[rows, 1]` weights for `[rows, 1]` times.
    pub fn forward<B: Backend>(&self, b: &mut B, s: &B::Value, t: &B::Value) -> Result<B::Value> {
        let es = embed_times(b, s, self.embed_dim)?;
        let et = embed_times(b, t, self.embed_dim)?;
        let e = b.concat(&[es, et], 1)?;
        let h = linear(b, &self.params, "weightnet.l1", &e)?;
        let h = b.silu(&h);
        linear(b, &self.params, "weightnet.l2", &h)
    }

    pub fn lambda(&self, s: f64, t: f64) -> Result<f64> {
        let out = self.forward(&mut Eval, &Tensor::column(&[s])?, &Tensor::column(&[t])?)?;
        Ok(out.data()[0])
    }
}
