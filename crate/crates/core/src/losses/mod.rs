//! Training objectives: flow matching, self-distillation in its three
//! characterizations, guided variants, the weighted combination with the
//! perceptual term, and the adversarial pair.

mod adversarial;
mod combined;
mod guidance;
mod perceptual;
mod targets;

pub use adversarial::{
    detached_midpoint, discriminator_loss, generator_loss, rpgan_terms, two_step_fake, ADAPTER_PREFIX,
    DEFAULT_LAMBDA_ADV, DISC_PREFIX,
};
pub use combined::{combined_loss, fm_loss, sd_loss, LossBreakdown, LossOptions, LossTag, RowLoss, TrainBatch};
pub use guidance::{GuidanceContext, DEFAULT_DROP_PROB, DEFAULT_W_MAX};
pub use perceptual::{perceptual_reg, perceptual_weight, surrogate_rows, PoolLayout};
pub use targets::{cfg_fm_target, cfg_sd_target, fm_target, sd_target, sd_target_calls, PairRows, VelocitySource};

#[cfg(test)]
mod tests;
