//! Relativistic pairing GAN losses for the adapter fine-tuning phase.

use super::combined::{combined_loss, LossBreakdown, LossOptions, TrainBatch};
use crate::autodiff::{Backend, Tensor};
use crate::error::{Error, Result};
use crate::nets::{AverageVelocity, Condition, Discriminator, FlowMapModel, WeightNet};

pub const DEFAULT_LAMBDA_ADV: f64 = 0.1;
/// Parameters updated by the generator loss.
pub const ADAPTER_PREFIX: &str = "model.lora.";
/// Parameters updated by the discriminator loss.
pub const DISC_PREFIX: &str = "disc.";

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Batch means of `softplus(D(fake) - D(real))` and
/// `softplus(D(real) - D(fake))`.
pub fn rpgan_terms(d_fake: &[f64], d_real: &[f64]) -> Result<(f64, f64)> {
    if d_fake.len() != d_real.len() || d_fake.is_empty() {
        return Err(Error::Shape("paired scores must have equal, non-zero length".into()));
    }
    let n = d_fake.len() as f64;
    let g = d_fake.iter().zip(d_real).map(|(f, r)| softplus(f - r)).sum::<f64>() / n;
    let d = d_fake.iter().zip(d_real).map(|(f, r)| softplus(r - f)).sum::<f64>() / n;
    Ok((g, d))
}

/// `x1 - 1/2 u_{1/2,1}(x1 | c)`, evaluated without recording.
pub fn detached_midpoint(model: &FlowMapModel, x1: &Tensor, cond: Condition, lora_scale: f64) -> Result<Tensor> {
    let n = x1.rows();
    let u = model.with_lora_scale(lora_scale).average_velocity(x1, &vec![0.5; n], &vec![1.0; n], &vec![cond; n])?;
    x1.axpy(-0.5, &u)
}

/// Two-step prediction `1 -> 1/2 -> 0`; only the second step is recorded.
pub fn two_step_fake<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    x1: &Tensor,
    cond: Condition,
    lora_scale: f64,
) -> Result<B::Value> {
    let n = x1.rows();
    let mid = detached_midpoint(model, x1, cond, lora_scale)?;
    let xv = b.constant(mid);
    let sv = b.constant(Tensor::zeros(&[n, 1]));
    let tv = b.constant(Tensor::full(&[n, 1], 0.5));
    let u = model.forward(b, &xv, &sv, &tv, &Condition::one_hot(&vec![cond; n])?, lora_scale)?;
    let step = b.scale(&u, 0.5);
    b.sub(&xv, &step)
}

fn softplus_mean<B: Backend>(b: &mut B, a: &B::Value, c: &B::Value) -> Result<B::Value> {
    let diff = b.sub(a, c)?;
    let sp = b.softplus(&diff);
    Ok(b.mean(&sp))
}

#[allow(clippy::too_many_arguments)]
/// Generator objective `softplus(D(fake) - D(real)) + lambda_adv * L_w` and
/// its parts. Which parameters move is decided by the backend's trainable
/// set; the adversarial phase admits only [`ADAPTER_PREFIX`].
pub fn generator_loss<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    disc: &Discriminator,
    wn: &WeightNet,
    batch: &TrainBatch,
    opts: &LossOptions,
    lambda_adv: f64,
    fake_cond: Condition,
) -> Result<(B::Value, f64, LossBreakdown)> {
    let fake = two_step_fake(b, model, batch.x1, fake_cond, opts.lora_scale)?;
    let d_fake = disc.forward(b, &fake)?;
    let real = b.constant(batch.x0.clone());
    let d_real = disc.forward(b, &real)?;
    let adv = softplus_mean(b, &d_fake, &d_real)?;
    let adv_value = b.value(&adv).item()?;
    let (weighted, breakdown) = combined_loss(b, model, wn, batch, opts)?;
    let reg = b.scale(&weighted, lambda_adv);
    let total = b.add(&adv, &reg)?;
    Ok((total, adv_value, breakdown))
}

/// Discriminator objective `softplus(D(real) - D(sg(fake)))`. The fake is
/// computed without recording, so no gradient reaches the generator.
pub fn discriminator_loss<B: Backend>(
    b: &mut B,
    model: &FlowMapModel,
    disc: &Discriminator,
    x0: &Tensor,
    x1: &Tensor,
    fake_cond: Condition,
    lora_scale: f64,
) -> Result<B::Value> {
    let fake = two_step_fake(&mut crate::autodiff::Eval, model, x1, fake_cond, lora_scale)?;
    let fake = b.constant(fake);
    let fake = b.stop_gradient(&fake);
    let d_fake = disc.forward(b, &fake)?;
    let real = b.constant(x0.clone());
    let d_real = disc.forward(b, &real)?;
    softplus_mean(b, &d_real, &d_fake)
}
