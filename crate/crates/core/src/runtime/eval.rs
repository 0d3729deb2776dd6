//! Held-out evaluation of a trained model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{SamplerConfig, TaskKind};
use super::metrics::{mean_psnr, sliced_w2, w2_to_isotropic};
use super::sampler::sample_endpoint;
use super::train::TrainedModel;
use crate::data::{degrade, gen_texture, gen_toy2d, DegradeOpts, Interp};
use crate::error::{Error, Result};
use crate::nets::AverageVelocity;
use crate::autodiff::Tensor;

/// Downscale factor of the image benchmark (effective x4).
pub const EVAL_S_DOWN: f64 = 0.25;
const SLICES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub n: usize,
    pub seed: u64,
    pub s_down: f64,
}

impl EvalOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            s_down: EVAL_S_DOWN,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub n: usize,
    pub steps: usize,
    /// Flow-map calls spent on sampling.
    pub evaluations: usize,
    pub w2: Option<f64>,
    pub sliced_w2: Option<f64>,
    pub psnr: Option<f64>,
    pub psnr_baseline: Option<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "task,n,steps,evaluations,w2,sliced_w2,psnr,psnr_baseline\n{},{},{},{},{},{},{},{}\n",
            self.task,
            self.n,
            self.steps,
            self.evaluations,
            f(self.w2),
            f(self.sliced_w2),
            f(self.psnr),
            f(self.psnr_baseline)
        )
    }
}

/// Bilinear resize of `hr` to `s_down` and back, with no blur or noise.
pub fn bilinear_baseline(hr: &Tensor, s_down: f64) -> Result<Tensor> {
    let opts = DegradeOpts::resize_only(Interp::Bilinear);
    degrade(hr, s_down, &opts, &mut ChaCha8Rng::seed_from_u64(0))
}

fn generate(trained: &TrainedModel, x1: &Tensor, cfg: &SamplerConfig) -> Result<(Tensor, usize)> {
    let model = &trained.model;
    let before = model.evaluations();
    let scaled = model.with_lora_scale(cfg.lora_scale);
    let out = sample_endpoint(&scaled as &dyn AverageVelocity, x1, cfg.steps, cfg.cond)?;
    Ok((out, model.evaluations() - before))
}

/// Samples `opts.n` held-out draws with `cfg` and scores them against the
/// task target.
pub fn evaluate(trained: &TrainedModel, cfg: &SamplerConfig, opts: &EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    if opts.n == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let config = &trained.config;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = EvalReport {
        task: config.task.kind.name().into(),
        n: opts.n,
        steps: cfg.steps,
        ..Default::default()
    };
    match config.task.kind {
        TaskKind::Gaussian => {
            let task = config.task.gaussian()?;
            let x1 = task.sample_marginal(opts.n, 1.0, &mut rng)?;
            let (x0, evals) = generate(trained, &x1, cfg)?;
            report.evaluations = evals;
            report.w2 = Some(w2_to_isotropic(&x0, &task.mean_at(0.0), task.var_at(0.0).sqrt())?);
        }
        TaskKind::Toy2d(kind) => {
            let data = gen_toy2d(opts.n, kind, &config.task.toy, &mut rng)?;
            let (x0, evals) = generate(trained, &data.x1, cfg)?;
            report.evaluations = evals;
            report.sliced_w2 = Some(sliced_w2(&x0, &data.x0, SLICES, &mut rng)?);
        }
        TaskKind::Texture => {
            let size = config.task.size;
            let hr = gen_texture(opts.n, size, &mut rng)?;
            let mut lr = Vec::with_capacity(opts.n * size * size);
            let mut truth = Vec::with_capacity(opts.n * size * size);
            for img in &hr {
                lr.extend_from_slice(bilinear_baseline(img, opts.s_down)?.data());
                truth.extend_from_slice(img.data());
            }
            let x1 = Tensor::new(vec![opts.n, size * size], lr)?;
            let x0 = Tensor::new(vec![opts.n, size * size], truth)?;
            let (pred, evals) = generate(trained, &x1, cfg)?;
            report.evaluations = evals;
            report.psnr = Some(mean_psnr(&pred, &x0)?);
            report.psnr_baseline = Some(mean_psnr(&x1, &x0)?);
        }
    }
    Ok(report)
}
