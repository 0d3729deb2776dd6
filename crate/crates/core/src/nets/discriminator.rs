//! Scalar critic on flattened states.

use rand::Rng;

use super::{get, init_linear, linear, Params};
use crate::autodiff::{Backend, Eval, Tensor};
use crate::error::{Error, Result};

const WIDTH: usize = 128;
const LAYERS: usize = 3;

/// `d -> 128 -> 128 -> 1` MLP with SiLU activations.
#[derive(Clone, Debug)]
pub struct Discriminator {
    input_dim: usize,
    params: Params,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("discriminator input must be non-empty".into()));
        }
        let mut params = Params::new();
        let dims = [input_dim, WIDTH, WIDTH, 1];
        for i in 0..LAYERS {
            init_linear(&mut params, &format!("disc.l{i}"), dims[i], dims[i + 1], rng);
        }
        Ok(Self { input_dim, params })
    }

    pub fn from_params(input_dim: usize, params: Params) -> Result<Self> {
        let w0 = get(&params, "disc.l0.weight")?;
        if w0.shape() != [WIDTH, input_dim] {
            return Err(Error::Shape("discriminator input layer does not match".into()));
        }
        Ok(Self { input_dim, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn update_params(&mut self, new: &Params) -> Result<()> {
        for (k, v) in new {
            match self.params.get_mut(k) {
                Some(slot) if slot.shape() == v.shape() => *slot = v.clone(),
                _ => return Err(Error::Contract(format!("bad discriminator parameter '{k}'"))),
            }
        }
        Ok(())
    }

    /// `[rows, 1]` scores for `[rows, d]` inputs.
    pub fn forward<B: Backend>(&self, b: &mut B, z: &B::Value) -> Result<B::Value> {
        let shape = b.shape(z);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Shape(format!(
                "discriminator expects [rows, {}], got {shape:?}",
                self.input_dim
            )));
        }
        let mut h = z.clone();
        for i in 0..LAYERS {
            h = linear(b, &self.params, &format!("disc.l{i}"), &h)?;
            if i + 1 < LAYERS {
                h = b.silu(&h);
            }
        }
        Ok(h)
    }

    pub fn score(&self, z: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(&mut Eval, z)?.into_vec())
    }
}
