//! Low-rank additive weight adapters.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// The factor pair of an adapter on a `[m, n]` weight: `A` is `[r, n]`,
/// `B` is `[m, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankAdapter {
    a: Tensor,
    b: Tensor,
}

impl LowRankAdapter {
    pub fn new(a: Tensor, b: Tensor) -> Result<Self> {
        if a.ndim() != 2 || b.ndim() != 2 || b.cols() != a.rows() {
            return Err(Error::Shape(format!(
                "adapter factors {:?} and {:?} disagree on rank",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    /// `B A`, shape `[m, n]`.
    pub fn delta(&self) -> Result<Tensor> {
        self.b.matmul(&self.a)
    }
}

/// `W + gamma B A`. `gamma == 0` returns `W` unchanged.
pub fn lora_effective_weight(w: &Tensor, adapter: &LowRankAdapter, gamma: f64) -> Result<Tensor> {
    if w.ndim() != 2 || w.rows() != adapter.b.rows() || w.cols() != adapter.a.cols() {
        return Err(Error::Shape(format!(
            "adapter of rank {} ({:?}, {:?}) does not fit weight {:?}",
            adapter.rank(),
            adapter.b.shape(),
            adapter.a.shape(),
            w.shape()
        )));
    }
    if gamma == 0.0 {
        return Ok(w.clone());
    }
    w.axpy(gamma, &adapter.delta()?)
}
