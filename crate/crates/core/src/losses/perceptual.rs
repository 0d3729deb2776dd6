//! Time-weighted low-pass regularizer on the exact clean-state prediction.

use crate::autodiff::{Backend, Eval, Tensor};
use crate::error::{Error, Result};

/// How a flat state is pooled before the squared-error term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolLayout {
    /// Row-major `height x width` image pooled over 2x2 blocks.
    Image { height: usize, width: usize },
    /// Adjacent coordinate pairs averaged; an odd last coordinate is kept.
    Pairs,
}

/// `5 exp(-4 s)`.
pub fn perceptual_weight(s: f64) -> f64 {
    5.0 * (-4.0 * s).exp()
}

impl PoolLayout {
    /// `[d, m]` averaging matrix for `d`-dimensional states.
    pub fn matrix(self, d: usize) -> Result<Tensor> {
        match self {
            PoolLayout::Image { height, width } => {
                if height * width != d || height % 2 != 0 || width % 2 != 0 {
                    return Err(Error::Shape(format!(
                        "cannot 2x2-pool a {height}x{width} image stored in {d} values"
                    )));
                }
                let (ph, pw) = (height / 2, width / 2);
                let m = ph * pw;
                let mut data = vec![0.0; d * m];
                for y in 0..height {
                    for x in 0..width {
                        let out = (y / 2) * pw + x / 2;
                        data[(y * width + x) * m + out] = 0.25;
                    }
                }
                Tensor::new(vec![d, m], data)
            }
            PoolLayout::Pairs => {
                if d == 0 {
                    return Err(Error::Shape("empty state".into()));
                }
                let m = d.div_ceil(2);
                let mut data = vec![0.0; d * m];
                for i in 0..d {
                    let w = if i / 2 * 2 + 1 < d { 0.5 } else { 1.0 };
                    data[i * m + i / 2] = w;
                }
                Tensor::new(vec![d, m], data)
            }
        }
    }
}

/// Per-row `R(x0_hat, x0) = (pooled MSE + MAE) / 2` as a `[rows, 1]` value.
pub fn surrogate_rows<B: Backend>(b: &mut B, diff: &B::Value, pool: &Tensor) -> Result<B::Value> {
    let shape = b.shape(diff);
    if shape.len() != 2 || pool.rows() != shape[1] {
        return Err(Error::Shape(format!("pooling {:?} does not fit {shape:?}", pool.shape())));
    }
    let p = b.constant(pool.clone());
    let pooled = b.matmul(diff, &p)?;
    let sq = b.square(&pooled);
    let mse = b.sum_axis(&sq, 1)?;
    let mse = b.scale(&mse, 1.0 / pool.cols() as f64);
    let abs = b.abs(diff);
    let mae = b.sum_axis(&abs, 1)?;
    let mae = b.scale(&mae, 1.0 / shape[1] as f64);
    let r = b.add(&mse, &mae)?;
    Ok(b.scale(&r, 0.5))
}

/// `5 exp(-4 s) R(x0_hat, x0)` averaged over rows.
pub fn perceptual_reg(x0_hat: &Tensor, x0: &Tensor, s: &[f64], layout: PoolLayout) -> Result<f64> {
    let diff = x0_hat.sub(x0)?;
    if s.len() != diff.rows() {
        return Err(Error::Shape("one time per row required".into()));
    }
    let pool = layout.matrix(diff.cols())?;
    let r = surrogate_rows(&mut Eval, &diff, &pool)?;
    let total: f64 = r.data().iter().zip(s).map(|(r, &s)| perceptual_weight(s) * r).sum();
    Ok(total / s.len() as f64)
}
