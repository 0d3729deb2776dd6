//! Forward-mode differentiation: values carry a tangent alongside the primal.

use super::backend::Backend;
use super::ops::{self, Binary, Unary};
use super::tensor::{matmul_impl, Tensor};
use crate::error::{Error, Result};

/// A primal value with its directional derivative. A missing tangent is zero.
#[derive(Clone, Debug)]
pub struct DualTensor {
    primal: Tensor,
    tangent: Option<Tensor>,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        primal.expect_same_shape(&tangent)?;
        Ok(Self {
            primal,
            tangent: Some(tangent),
        })
    }

    pub fn constant(primal: Tensor) -> Self {
        Self {
            primal,
            tangent: None,
        }
    }

    pub fn primal(&self) -> &Tensor {
        &self.primal
    }

    pub fn tangent(&self) -> Tensor {
        self.tangent
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.primal.shape()))
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        let t = self.tangent();
        (self.primal, t)
    }
}

/// Forward-mode backend. Parameters are constants (zero tangent); nothing is
/// recorded, so results carry no gradient history.
#[derive(Debug, Default, Clone, Copy)]
pub struct Forward;

fn map_tangent(t: &Option<Tensor>, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Option<Tensor>> {
    t.as_ref().map(f).transpose()
}

impl Backend for Forward {
    type Value = DualTensor;

    fn constant(&mut self, t: Tensor) -> DualTensor {
        DualTensor::constant(t)
    }

    fn param(&mut self, _name: &str, t: &Tensor) -> DualTensor {
        DualTensor::constant(t.clone())
    }

    fn value(&self, v: &DualTensor) -> Tensor {
        v.primal.clone()
    }

    fn shape(&self, v: &DualTensor) -> Vec<usize> {
        v.primal.shape().to_vec()
    }

    fn unary(&mut self, op: Unary, a: &DualTensor) -> DualTensor {
        DualTensor {
            primal: ops::unary(op, &a.primal),
            tangent: a
                .tangent
                .as_ref()
                .map(|t| ops::unary_backward(op, &a.primal, t)),
        }
    }

    fn binary(&mut self, op: Binary, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let primal = ops::binary(op, &a.primal, &b.primal)?;
        let tangent = match op {
            Binary::Add | Binary::Sub => {
                let sign = if op == Binary::Add { 1.0 } else { -1.0 };
                match (&a.tangent, &b.tangent) {
                    (None, None) => None,
                    (Some(ta), None) => Some(ta.clone()),
                    (None, Some(tb)) => Some(tb.scale(sign)),
                    (Some(ta), Some(tb)) => Some(ta.axpy(sign, tb)?),
                }
            }
            Binary::Mul => {
                let l = map_tangent(&a.tangent, |ta| ta.mul(&b.primal))?;
                let r = map_tangent(&b.tangent, |tb| a.primal.mul(tb))?;
                match (l, r) {
                    (None, r) => r,
                    (l, None) => l,
                    (Some(l), Some(r)) => Some(l.add(&r)?),
                }
            }
        };
        Ok(DualTensor { primal, tangent })
    }

    fn matmul_ex(&mut self, a: &DualTensor, ta: bool, b: &DualTensor, tb: bool) -> Result<DualTensor> {
        let primal = matmul_impl(&a.primal, ta, &b.primal, tb)?;
        let l = map_tangent(&a.tangent, |da| matmul_impl(da, ta, &b.primal, tb))?;
        let r = map_tangent(&b.tangent, |db| matmul_impl(&a.primal, ta, db, tb))?;
        let tangent = match (l, r) {
            (None, r) => r,
            (l, None) => l,
            (Some(l), Some(r)) => Some(l.add(&r)?),
        };
        Ok(DualTensor { primal, tangent })
    }

    fn sum(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor {
            primal: Tensor::scalar(a.primal.sum()),
            tangent: a.tangent.as_ref().map(|t| Tensor::scalar(t.sum())),
        }
    }

    fn sum_axis(&mut self, a: &DualTensor, axis: usize) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: ops::sum_axis(&a.primal, axis)?,
            tangent: map_tangent(&a.tangent, |t| ops::sum_axis(t, axis))?,
        })
    }

    fn concat(&mut self, parts: &[DualTensor], axis: usize) -> Result<DualTensor> {
        let primals: Vec<&Tensor> = parts.iter().map(|p| &p.primal).collect();
        let primal = ops::concat(&primals, axis)?;
        let tangent = if parts.iter().all(|p| p.tangent.is_none()) {
            None
        } else {
            let ts: Vec<Tensor> = parts.iter().map(DualTensor::tangent).collect();
            let refs: Vec<&Tensor> = ts.iter().collect();
            Some(ops::concat(&refs, axis)?)
        };
        Ok(DualTensor { primal, tangent })
    }

    fn slice(&mut self, a: &DualTensor, axis: usize, start: usize, len: usize) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: ops::slice(&a.primal, axis, start, len)?,
            tangent: map_tangent(&a.tangent, |t| ops::slice(t, axis, start, len))?,
        })
    }

    fn broadcast(&mut self, a: &DualTensor, shape: &[usize]) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: ops::broadcast(&a.primal, shape)?,
            tangent: map_tangent(&a.tangent, |t| ops::broadcast(t, shape))?,
        })
    }

    /// Matches the usual convention: the tangent through `sg` is zero.
    fn stop_gradient(&mut self, a: &DualTensor) -> DualTensor {
        DualTensor::constant(a.primal.clone())
    }

    fn scale(&mut self, a: &DualTensor, c: f64) -> DualTensor {
        DualTensor {
            primal: a.primal.scale(c),
            tangent: a.tangent.as_ref().map(|t| t.scale(c)),
        }
    }
}

/// Evaluates `f` at `x` and its directional derivative along `v`.
///
/// Nothing is recorded for reverse mode: the outputs are plain tensors.
pub fn jvp<F>(f: F, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)>
where
    F: FnOnce(&mut Forward, &DualTensor) -> Result<DualTensor>,
{
    if x.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "jvp tangent shape {:?} differs from point shape {:?}",
            v.shape(),
            x.shape()
        )));
    }
    let input = DualTensor::new(x.clone(), v.clone())?;
    Ok(f(&mut Forward, &input)?.into_parts())
}

/// A point `(x, s, t)` of a function of state and two times.
#[derive(Clone, Debug)]
pub struct JointPoint {
    pub x: Tensor,
    /// Per-row times, shape `[rows, 1]`.
    pub s: Tensor,
    pub t: Tensor,
}

/// Tangent `(dx, ds, dt)`; the time components are shared by every row.
#[derive(Clone, Debug)]
pub struct JointTangent {
    pub dx: Option<Tensor>,
    pub ds: f64,
    pub dt: f64,
}

/// Total directional derivative `grad_x f . dx + d_s f . ds + d_t f . dt`.
pub fn jvp_joint<F>(f: F, point: &JointPoint, tangent: &JointTangent) -> Result<(Tensor, Tensor)>
where
    F: FnOnce(&mut Forward, &DualTensor, &DualTensor, &DualTensor) -> Result<DualTensor>,
{
    let x = match &tangent.dx {
        Some(dx) => {
            if dx.shape() != point.x.shape() {
                return Err(Error::Shape(format!(
                    "jvp tangent shape {:?} differs from point shape {:?}",
                    dx.shape(),
                    point.x.shape()
                )));
            }
            DualTensor::new(point.x.clone(), dx.clone())?
        }
        None => DualTensor::constant(point.x.clone()),
    };
    let time = |t: &Tensor, d: f64| {
        if d == 0.0 {
            DualTensor::constant(t.clone())
        } else {
            DualTensor {
                primal: t.clone(),
                tangent: Some(Tensor::full(t.shape(), d)),
            }
        }
    };
    let s = time(&point.s, tangent.ds);
    let t = time(&point.t, tangent.dt);
    Ok(f(&mut Forward, &x, &s, &t)?.into_parts())
}
