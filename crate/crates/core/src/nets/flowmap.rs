//! The average-velocity network `u_{s,t}(x | c)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::{
    check_inputs, embed_times, get, init_linear, linear, uniform_tensor, zero_linear, AverageVelocity,
    Condition, LowRankAdapter, Params,
};
use crate::autodiff::{jvp_joint, Backend, Eval, JointPoint, JointTangent, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMapConfig {
    pub state_dim: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub zero_init_final: bool,
}

impl FlowMapConfig {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            hidden: 256,
            depth: 4,
            time_embed_dim: 32,
            cond_dim: 16,
            zero_init_final: true,
        }
    }

    fn input_dim(&self) -> usize {
        self.state_dim + 2 * self.time_embed_dim + self.cond_dim
    }

    /// `(fan_in, fan_out)` of trunk layer `i`.
    fn layer_dims(&self, i: usize) -> (usize, usize) {
        let d_in = if i == 0 { self.input_dim() } else { self.hidden };
        let d_out = if i == self.depth { self.state_dim } else { self.hidden };
        (d_in, d_out)
    }
}

pub(crate) const COND_TABLE: &str = "model.cond_table";

fn layer_name(i: usize) -> String {
    format!("model.layer{i}")
}

fn lora_names(i: usize) -> (String, String) {
    (format!("model.lora.layer{i}.a"), format!("model.lora.layer{i}.b"))
}

/// Trunk MLP over `concat(x, embed(s), embed(t), cond_table[c])`, with
/// optional adapters on every linear layer.
///
/// Every call to [`FlowMapModel::forward`] counts as one evaluation,
/// whatever the backend and batch size.
#[derive(Debug)]
pub struct FlowMapModel {
    config: FlowMapConfig,
    params: Params,
    lora_rank: Option<usize>,
    evals: AtomicUsize,
}

impl Clone for FlowMapModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            lora_rank: self.lora_rank,
            evals: AtomicUsize::new(self.evaluations()),
        }
    }
}

impl FlowMapModel {
    pub fn new<R: Rng + ?Sized>(config: FlowMapConfig, rng: &mut R) -> Result<Self> {
        if config.state_dim == 0 || config.hidden == 0 || config.cond_dim == 0 {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        super::time_frequencies(config.time_embed_dim)?;
        let mut params = Params::new();
        params.insert(
            COND_TABLE.to_string(),
            uniform_tensor(rng, &[Condition::COUNT, config.cond_dim], 1.0),
        );
        for i in 0..=config.depth {
            let (d_in, d_out) = config.layer_dims(i);
            if i == config.depth && config.zero_init_final {
                zero_linear(&mut params, &layer_name(i), d_in, d_out);
            } else {
                init_linear(&mut params, &layer_name(i), d_in, d_out, rng);
            }
        }
        Ok(Self {
            config,
            params,
            lora_rank: None,
            evals: AtomicUsize::new(0),
        })
    }

    /// Rebuilds a model from stored parameters, inferring adapter rank.
    pub fn from_params(config: FlowMapConfig, params: Params) -> Result<Self> {
        let mut lora_rank = None;
        for i in 0..=config.depth {
            let (d_in, d_out) = config.layer_dims(i);
            let w = get(&params, &format!("{}.weight", layer_name(i)))?;
            let b = get(&params, &format!("{}.bias", layer_name(i)))?;
            if w.shape() != [d_out, d_in] || b.shape() != [1, d_out] {
                return Err(Error::Shape(format!("layer {i} does not match the configuration")));
            }
            let (an, bn) = lora_names(i);
            if let (Some(a), Some(bm)) = (params.get(&an), params.get(&bn)) {
                let ad = LowRankAdapter::new(a.clone(), bm.clone())?;
                if a.cols() != d_in || bm.rows() != d_out {
                    return Err(Error::Shape(format!("adapter {i} does not fit its layer")));
                }
                lora_rank = Some(ad.rank());
            }
        }
        let table = get(&params, COND_TABLE)?;
        if table.shape() != [Condition::COUNT, config.cond_dim] {
            return Err(Error::Shape("condition table does not match the configuration".into()));
        }
        Ok(Self {
            config,
            params,
            lora_rank,
            evals: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &FlowMapConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Replaces parameters by name; unknown names are rejected.
    pub fn update_params(&mut self, new: &Params) -> Result<()> {
        for (k, v) in new {
            let slot = self
                .params
                .get_mut(k)
                .ok_or_else(|| Error::Contract(format!("unknown parameter '{k}'")))?;
            if slot.shape() != v.shape() {
                return Err(Error::Shape(format!("parameter '{k}' changed shape")));
            }
            *slot = v.clone();
        }
        Ok(())
    }

    pub fn lora_rank(&self) -> Option<usize> {
        self.lora_rank
    }

    /// Adds adapters of rank `rank` to every trunk layer: `A` random, `B`
    /// zero, so the effective weights are unchanged.
    pub fn attach_lora<R: Rng + ?Sized>(&mut self, rank: usize, rng: &mut R) -> Result<()> {
        if rank == 0 {
            return Err(Error::InvalidArgument("adapter rank must be positive".into()));
        }
        if self.lora_rank.is_some() {
            return Err(Error::Contract("adapters already attached".into()));
        }
        for i in 0..=self.config.depth {
            let (d_in, d_out) = self.config.layer_dims(i);
            let (an, bn) = lora_names(i);
            self.params
                .insert(an, uniform_tensor(rng, &[rank, d_in], 1.0 / (d_in as f64).sqrt()));
            self.params.insert(bn, Tensor::zeros(&[d_out, rank]));
        }
        self.lora_rank = Some(rank);
        Ok(())
    }

    /// The adapter on trunk layer `i`, if any.
    pub fn adapter(&self, i: usize) -> Option<LowRankAdapter> {
        let (an, bn) = lora_names(i);
        let a = self.params.get(&an)?;
        let b = self.params.get(&bn)?;
        LowRankAdapter::new(a.clone(), b.clone()).ok()
    }

    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    /// Inference view with adapter scale `gamma`.
    pub fn with_lora_scale(&self, gamma: f64) -> ScaledModel<'_> {
        ScaledModel { model: self, gamma }
    }

    /// `u_{s,t}(x | c)` on any backend. `s` and `t` are `[rows, 1]` and
    /// `cond` is a `[rows, 3]` one-hot tensor. Adapters contribute with
    /// weight `lora_scale`; at zero they are skipped entirely.
    pub fn forward<B: Backend>(
        &self,
        b: &mut B,
        x: &B::Value,
        s: &B::Value,
        t: &B::Value,
        cond: &Tensor,
        lora_scale: f64,
    ) -> Result<B::Value> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let dim = self.config.time_embed_dim;
        let es = embed_times(b, s, dim)?;
        let et = embed_times(b, t, dim)?;
        let table = b.param(COND_TABLE, get(&self.params, COND_TABLE)?);
        let onehot = b.constant(cond.clone());
        let ce = b.matmul(&onehot, &table)?;
        let mut h = b.concat(&[x.clone(), es, et, ce], 1)?;
        for i in 0..=self.config.depth {
            let mut y = linear(b, &self.params, &layer_name(i), &h)?;
            if lora_scale != 0.0 && self.lora_rank.is_some() {
                let (an, bn) = lora_names(i);
                let a = b.param(&an, get(&self.params, &an)?);
                let bm = b.param(&bn, get(&self.params, &bn)?);
                let xa = b.matmul_t(&h, &a)?;
                let mut delta = b.matmul_t(&xa, &bm)?;
                if lora_scale != 1.0 {
                    delta = b.scale(&delta, lora_scale);
                }
                y = b.add(&y, &delta)?;
            }
            h = if i < self.config.depth { b.silu(&y) } else { y };
        }
        Ok(h)
    }

    fn eval_scaled(&self, x: &Tensor, s: &[f64], t: &[f64], cond: &[Condition], gamma: f64) -> Result<Tensor> {
        check_inputs(x, self.config.state_dim, s, t, cond)?;
        let (sc, tc) = (Tensor::column(s)?, Tensor::column(t)?);
        self.forward(&mut Eval, x, &sc, &tc, &Condition::one_hot(cond)?, gamma)
    }

    #[allow(clippy::too_many_arguments)]
    fn jvp_scaled(
        &self,
        x: &Tensor,
        s: &[f64],
        t: &[f64],
        cond: &[Condition],
        dx: Option<&Tensor>,
        ds: f64,
        dt: f64,
        gamma: f64,
    ) -> Result<(Tensor, Tensor)> {
        check_inputs(x, self.config.state_dim, s, t, cond)?;
        let point = JointPoint {
            x: x.clone(),
            s: Tensor::column(s)?,
            t: Tensor::column(t)?,
        };
        let tangent = JointTangent {
            dx: dx.cloned(),
            ds,
            dt,
        };
        let onehot = Condition::one_hot(cond)?;
        jvp_joint(
            |b, x, s, t| self.forward(b, x, s, t, &onehot, gamma),
            &point,
            &tangent,
        )
    }
}

/// Training-time evaluation: adapters, when present, enter with scale 1.
impl AverageVelocity for FlowMapModel {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn average_velocity(&self, x: &Tensor, s: &[f64], t: &[f64], cond: &[Condition]) -> Result<Tensor> {
        self.eval_scaled(x, s, t, cond, 1.0)
    }

    fn average_velocity_jvp(
        &self,
        x: &Tensor,
        s: &[f64],
        t: &[f64],
        cond: &[Condition],
        dx: Option<&Tensor>,
        ds: f64,
        dt: f64,
    ) -> Result<(Tensor, Tensor)> {
        self.jvp_scaled(x, s, t, cond, dx, ds, dt, 1.0)
    }
}

/// A model evaluated with a fixed adapter scale.
#[derive(Clone, Copy, Debug)]
pub struct ScaledModel<'a> {
    model: &'a FlowMapModel,
    gamma: f64,
}

impl AverageVelocity for ScaledModel<'_> {
    fn state_dim(&self) -> usize {
        self.model.config.state_dim
    }

    fn average_velocity(&self, x: &Tensor, s: &[f64], t: &[f64], cond: &[Condition]) -> Result<Tensor> {
        self.model.eval_scaled(x, s, t, cond, self.gamma)
    }

    fn average_velocity_jvp(
        &self,
        x: &Tensor,
        s: &[f64],
        t: &[f64],
        cond: &[Condition],
        dx: Option<&Tensor>,
        ds: f64,
        dt: f64,
    ) -> Result<(Tensor, Tensor)> {
        self.model.jvp_scaled(x, s, t, cond, dx, ds, dt, self.gamma)
    }
}
