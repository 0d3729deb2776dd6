//! Procedural grayscale textures: oriented sinusoids plus a step edge.

use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const TEXTURE_SIZES: [usize; 3] = [8, 16, 32];

/// `amplitude * sin(2 pi (fx u + fy v) + phase)` over unit coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
}

/// Adds `height` on the side of the line `u cos(angle) + v sin(angle) > offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub angle: f64,
    pub offset: f64,
    pub height: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextureParams {
    pub waves: Vec<Wave>,
    pub edge: Option<Edge>,
}

impl TextureParams {
    /// Two to four waves with up to three cycles per image and one edge.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let count = rng.random_range(2..=4);
        let waves = (0..count)
            .map(|_| {
                let freq: f64 = rng.random_range(0.5..3.0);
                let angle: f64 = rng.random_range(0.0..PI);
                Wave {
                    amplitude: rng.random_range(0.3..1.0),
                    fx: freq * angle.cos(),
                    fy: freq * angle.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        let edge = Edge {
            angle: rng.random_range(0.0..2.0 * PI),
            offset: rng.random_range(-0.3..0.3),
            height: rng.random_range(0.5..1.5),
        };
        Self {
            waves,
            edge: Some(edge),
        }
    }
}

/// Renders `params` on a `size x size` grid and rescales to `[-1, 1]`.
/// A flat field is returned clamped instead of rescaled.
pub fn render_texture(params: &TextureParams, size: usize) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::InvalidArgument("texture size must be positive".into()));
    }
    let mut img = Vec::with_capacity(size * size);
    for y in 0..size {
        let v = (y as f64 + 0.5) / size as f64 - 0.5;
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64 - 0.5;
            let mut val: f64 = params
                .waves
                .iter()
                .map(|w| w.amplitude * (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin())
                .sum();
            if let Some(e) = params.edge {
                if u * e.angle.cos() + v * e.angle.sin() > e.offset {
                    val += e.height;
                }
            }
            img.push(val);
        }
    }
    let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        img.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    } else {
        img.iter_mut().for_each(|v| *v = (2.0 * (*v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0));
    }
    Tensor::new(vec![size, size], img)
}

/// `n` random textures as `[size, size]` images.
pub fn gen_texture<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Result<Vec<Tensor>> {
    if !TEXTURE_SIZES.contains(&size) {
        return Err(Error::InvalidArgument(format!("texture size {size} not in {TEXTURE_SIZES:?}")));
    }
    (0..n)
        .map(|_| render_texture(&TextureParams::random(rng), size))
        .collect()
}
