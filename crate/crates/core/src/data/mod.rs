//! Paired couplings `(x0, x1)`: 2D toy tasks, procedural super-resolution
//! pairs with negative targets, and the independent Gaussian task.

mod degrade;
mod io;
mod texture;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

pub use degrade::{
    blur, degrade, low_res_side, make_negative_target, quantize, resize, DegradeOpts, Interp,
};
pub use io::{read_manifest, read_pgm, write_corpus, write_pgm, ManifestRow, MANIFEST_HEADER};
pub use texture::{gen_texture, render_texture, Edge, TextureParams, Wave, TEXTURE_SIZES};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::Condition;
use crate::oracle::GaussianTask;

/// A batch of flattened pairs. `x0` is the clean target, `x1` the source.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub cond: Vec<Condition>,
    pub s_down: Vec<f64>,
    pub x0_neg: Option<Tensor>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toy2dKind {
    /// Equal mixture of `N(+-(2, 0), 0.5^2 I)`.
    TwoGaussians,
    /// The two interleaved half circles.
    MoonsPair,
}

impl Toy2dKind {
    pub fn name(self) -> &'static str {
        match self {
            Toy2dKind::TwoGaussians => "two_gaussians",
            Toy2dKind::MoonsPair => "moons_pair",
        }
    }

    fn mean(self) -> [f64; 2] {
        match self {
            Toy2dKind::TwoGaussians => [0.0, 0.0],
            Toy2dKind::MoonsPair => [0.5, 0.25],
        }
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 2] {
        let e = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
        match self {
            Toy2dKind::TwoGaussians => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                [2.0 * sign + 0.5 * e(rng), 0.5 * e(rng)]
            }
            Toy2dKind::MoonsPair => {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if rng.random::<bool>() {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                [x + 0.05 * e(rng), y + 0.05 * e(rng)]
            }
        }
    }
}

impl fmt::Display for Toy2dKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Toy2dKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "two_gaussians" => Ok(Toy2dKind::TwoGaussians),
            "moons_pair" | "moons" => Ok(Toy2dKind::MoonsPair),
            other => Err(Error::Config(format!("unknown 2D task '{other}'"))),
        }
    }
}

/// Coupling `x1 = x0 - contraction (x0 - mean) + sigma e`; the negative
/// target is `x0` plus noise of scale `neg_noise`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Toy2dOpts {
    pub sigma: f64,
    pub contraction: f64,
    pub neg_noise: f64,
}

impl Default for Toy2dOpts {
    fn default() -> Self {
        Self {
            sigma: 0.3,
            contraction: 0.5,
            neg_noise: 0.3,
        }
    }
}

pub fn gen_toy2d<R: Rng + ?Sized>(n: usize, kind: Toy2dKind, opts: &Toy2dOpts, rng: &mut R) -> Result<PairBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mean = kind.mean();
    let mut x0 = Vec::with_capacity(2 * n);
    let mut x1 = Vec::with_capacity(2 * n);
    let mut neg = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let p = kind.sample(rng);
        for k in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            let e_neg: f64 = rng.sample(StandardNormal);
            x0.push(p[k]);
            x1.push(p[k] - opts.contraction * (p[k] - mean[k]) + opts.sigma * e);
            neg.push(p[k] + opts.neg_noise * e_neg);
        }
    }
    Ok(PairBatch {
        x0: Tensor::new(vec![n, 2], x0)?,
        x1: Tensor::new(vec![n, 2], x1)?,
        cond: vec![Condition::Positive; n],
        s_down: vec![1.0; n],
        x0_neg: Some(Tensor::new(vec![n, 2], neg)?),
    })
}

/// Independent `x0 ~ N(mu0, sigma0^2 I)` and `x1 ~ N(mu1, sigma1^2 I)`.
pub fn gaussian_pair<R: Rng + ?Sized>(n: usize, task: &GaussianTask, rng: &mut R) -> Result<PairBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let x0 = task.sample_marginal(n, 0.0, rng)?;
    let x1 = task.sample_marginal(n, 1.0, rng)?;
    Ok(PairBatch {
        x0,
        x1,
        cond: vec![Condition::Positive; n],
        s_down: vec![1.0; n],
        x0_neg: None,
    })
}

/// Range of the per-pair downscale factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleRange {
    fn default() -> Self {
        Self { min: 0.1, max: 1.0 }
    }
}

impl ScaleRange {
    pub fn fixed(s: f64) -> Self {
        Self { min: s, max: s }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if !(self.min > 0.0 && self.min <= self.max && self.max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "downscale range [{}, {}] outside (0, 1]",
                self.min, self.max
            )));
        }
        Ok(if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        })
    }
}

/// Super-resolution pairs on fresh textures: `x1` degraded with a drawn
/// factor, `x0_neg` degraded less.
pub fn gen_sr_pairs<R: Rng + ?Sized>(
    n: usize,
    size: usize,
    scale: &ScaleRange,
    opts: &DegradeOpts,
    rng: &mut R,
) -> Result<PairBatch> {
    let hr = gen_texture(n, size, rng)?;
    sr_pairs_from(&hr, scale, opts, rng)
}

/// Degrades given `[h, w]` images into a flattened batch.
pub fn sr_pairs_from<R: Rng + ?Sized>(
    hr: &[Tensor],
    scale: &ScaleRange,
    opts: &DegradeOpts,
    rng: &mut R,
) -> Result<PairBatch> {
    let n = hr.len();
    if n == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let d = hr[0].numel();
    let (mut x0, mut x1, mut neg) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d), Vec::with_capacity(n * d));
    let mut s_down = Vec::with_capacity(n);
    for img in hr {
        if img.numel() != d {
            return Err(Error::Shape("images in a batch must share a size".into()));
        }
        let s = scale.sample(rng)?;
        x0.extend_from_slice(img.data());
        x1.extend_from_slice(degrade(img, s, opts, rng)?.data());
        neg.extend_from_slice(make_negative_target(img, s, opts, rng)?.0.data());
        s_down.push(s);
    }
    Ok(PairBatch {
        x0: Tensor::new(vec![n, d], x0)?,
        x1: Tensor::new(vec![n, d], x1)?,
        cond: vec![Condition::Positive; n],
        s_down,
        x0_neg: Some(Tensor::new(vec![n, d], neg)?),
    })
}
