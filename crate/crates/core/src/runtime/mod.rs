//! Phase-structured training, few-step sampling, evaluation and
//! configuration.

mod config;
mod eval;
mod metrics;
mod optim;
mod sampler;
mod train;

pub use config::{Config, ModelConfig, PhasePlan, SamplerConfig, TaskConfig, TaskKind};
pub use eval::{bilinear_baseline, evaluate, EvalOptions, EvalReport, EVAL_S_DOWN};
pub use metrics::{
    gaussian_w2, mean_psnr, moments, psnr, sliced_w2, w2_to_isotropic, MetricsRow, METRICS_HEADER, PSNR_CAP,
};
pub use optim::AdamW;
pub use sampler::{sample, sample_endpoint};
pub use train::{train, Phase, TaskSampler, TrainReport, TrainedModel};
