//! The lightened degradation pipeline on square grayscale images.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

impl Interp {
    pub fn name(self) -> &'static str {
        match self {
            Interp::Nearest => "nearest",
            Interp::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for Interp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nearest" => Ok(Interp::Nearest),
            "bilinear" => Ok(Interp::Bilinear),
            other => Err(Error::Config(format!("unknown interpolation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeOpts {
    /// Probability of each of the two blur stages.
    pub blur_prob: f64,
    /// Noise standard deviations are drawn from `U(0, noise_std_max)`.
    pub noise_std_max: f64,
    /// Probability of Gaussian rather than intensity-scaled noise.
    pub gaussian_noise_prob: f64,
    /// Quantization levels over `[-1, 1]`; zero disables the stage.
    pub quant_levels: u32,
    /// One mode is drawn uniformly per image for both resizes.
    pub interp_modes: Vec<Interp>,
}

impl Default for DegradeOpts {
    fn default() -> Self {
        Self {
            blur_prob: 0.8,
            noise_std_max: 0.02,
            gaussian_noise_prob: 0.5,
            quant_levels: 32,
            interp_modes: vec![Interp::Nearest, Interp::Bilinear],
        }
    }
}

impl DegradeOpts {
    /// Every stage disabled except the resizes.
    pub fn resize_only(mode: Interp) -> Self {
        Self {
            blur_prob: 0.0,
            noise_std_max: 0.0,
            gaussian_noise_prob: 0.5,
            quant_levels: 0,
            interp_modes: vec![mode],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blur_prob) || !(0.0..=1.0).contains(&self.gaussian_noise_prob) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_std_max >= 0.0) {
            return Err(Error::InvalidArgument("noise bound must be non-negative".into()));
        }
        if self.quant_levels == 1 {
            return Err(Error::InvalidArgument("quantization needs at least two levels".into()));
        }
        if self.interp_modes.is_empty() {
            return Err(Error::InvalidArgument("at least one interpolation mode required".into()));
        }
        Ok(())
    }
}

/// 3x3 binomial blur with replicated borders.
pub fn blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    const K: [f64; 3] = [0.25, 0.5, 0.25];
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, dx) in K.iter().zip([-1isize, 0, 1]) {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += k * img[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, dy) in K.iter().zip([-1isize, 0, 1]) {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Source coordinate of output sample `i` under half-pixel alignment.
fn source_coord(i: usize, from: usize, to: usize) -> f64 {
    (i as f64 + 0.5) * from as f64 / to as f64 - 0.5
}

fn axis_taps(i: usize, from: usize, to: usize, mode: Interp) -> [(usize, f64); 2] {
    let c = source_coord(i, from, to);
    match mode {
        Interp::Nearest => {
            let j = ((c + 0.5).floor().max(0.0) as usize).min(from - 1);
            [(j, 1.0), (j, 0.0)]
        }
        Interp::Bilinear => {
            let c = c.clamp(0.0, (from - 1) as f64);
            let j0 = c.floor() as usize;
            let j1 = (j0 + 1).min(from - 1);
            let f = c - j0 as f64;
            [(j0, 1.0 - f), (j1, f)]
        }
    }
}

/// Resizes an `h x w` image to `nh x nw`.
pub fn resize(img: &[f64], h: usize, w: usize, nh: usize, nw: usize, mode: Interp) -> Vec<f64> {
    let mut out = vec![0.0; nh * nw];
    for y in 0..nh {
        let ty = axis_taps(y, h, nh, mode);
        for x in 0..nw {
            let tx = axis_taps(x, w, nw, mode);
            let mut acc = 0.0;
            for &(yy, wy) in &ty {
                for &(xx, wx) in &tx {
                    if wy != 0.0 && wx != 0.0 {
                        acc += wy * wx * img[yy * w + xx];
                    }
                }
            }
            out[y * nw + x] = acc;
        }
    }
    out
}

/// Uniform quantization of `[-1, 1]` to `levels` values.
pub fn quantize(v: f64, levels: u32) -> f64 {
    let steps = (levels - 1) as f64;
    let q = ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * steps).round() / steps;
    q * 2.0 - 1.0
}

/// Side length after downscaling by `s_down`.
pub fn low_res_side(side: usize, s_down: f64) -> usize {
    ((side as f64 * s_down).round() as usize).clamp(1, side)
}

fn image_dims(hr: &Tensor) -> Result<(usize, usize)> {
    match *hr.shape() {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        ref s => Err(Error::Shape(format!("expected an [h, w] image, got {s:?}"))),
    }
}

fn check_factor(s_down: f64) -> Result<()> {
    if !(s_down > 0.0 && s_down <= 1.0) {
        return Err(Error::InvalidArgument(format!("downscale factor {s_down} outside (0, 1]")));
    }
    Ok(())
}

/// Blur, downscale, noise, quantize, resize back, blur, clamp.
pub fn degrade<R: Rng + ?Sized>(hr: &Tensor, s_down: f64, opts: &DegradeOpts, rng: &mut R) -> Result<Tensor> {
    check_factor(s_down)?;
    opts.validate()?;
    let (h, w) = image_dims(hr)?;
    let mode = opts.interp_modes[rng.random_range(0..opts.interp_modes.len())];
    let mut img = hr.data().to_vec();
    if rng.random::<f64>() < opts.blur_prob {
        img = blur(&img, h, w);
    }
    let (lh, lw) = (low_res_side(h, s_down), low_res_side(w, s_down));
    let mut low = resize(&img, h, w, lh, lw, mode);
    let gaussian = rng.random::<f64>() < opts.gaussian_noise_prob;
    let sigma = opts.noise_std_max * rng.random::<f64>();
    if sigma > 0.0 {
        for v in &mut low {
            let e: f64 = rng.sample(StandardNormal);
            let scale = if gaussian { 1.0 } else { ((*v + 1.0) * 0.5).clamp(0.0, 1.0).sqrt() };
            *v += sigma * scale * e;
        }
    }
    if opts.quant_levels >= 2 {
        for v in &mut low {
            *v = quantize(*v, opts.quant_levels);
        }
    }
    img = resize(&low, lh, lw, h, w, mode);
    if rng.random::<f64>() < opts.blur_prob {
        img = blur(&img, h, w);
    }
    for v in &mut img {
        *v = v.clamp(-1.0, 1.0);
    }
    Tensor::new(vec![h, w], img)
}

/// A milder degradation of the same image: `s_neg ~ U(s_down, 1)`.
/// Returns the image and the factor used.
pub fn make_negative_target<R: Rng + ?Sized>(
    hr: &Tensor,
    s_down: f64,
    opts: &DegradeOpts,
    rng: &mut R,
) -> Result<(Tensor, f64)> {
    check_factor(s_down)?;
    let s_neg = if s_down >= 1.0 { 1.0 } else { rng.random_range(s_down..=1.0) };
    Ok((degrade(hr, s_neg, opts, rng)?, s_neg))
}
