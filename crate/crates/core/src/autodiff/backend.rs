//! The backend abstraction every network and loss is written against.
//!
//! Three implementations exist: [`Eval`] computes plain values,
//! [`Forward`](super::Forward) carries tangents for Jacobian-vector products,
//! and [`Graph`](super::Graph) records a tape for reverse-mode gradients.

use super::ops::{self, Binary, Unary};
use super::tensor::{matmul_impl, Tensor};
use crate::error::Result;

pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// A named model parameter. Whether it is trainable is up to the backend.
    fn param(&mut self, name: &str, t: &Tensor) -> Self::Value;
    /// The primal value.
    fn value(&self, v: &Self::Value) -> Tensor;
    fn shape(&self, v: &Self::Value) -> Vec<usize>;

    fn unary(&mut self, op: Unary, a: &Self::Value) -> Self::Value;
    fn binary(&mut self, op: Binary, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `op(a) x op(b)` with optional transposes.
    fn matmul_ex(
        &mut self,
        a: &Self::Value,
        ta: bool,
        b: &Self::Value,
        tb: bool,
    ) -> Result<Self::Value>;
    /// Sum of all elements, as a scalar.
    fn sum(&mut self, a: &Self::Value) -> Self::Value;
    /// Sum along `axis`, keeping it with extent 1.
    fn sum_axis(&mut self, a: &Self::Value, axis: usize) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[Self::Value], axis: usize) -> Result<Self::Value>;
    fn slice(&mut self, a: &Self::Value, axis: usize, start: usize, len: usize)
        -> Result<Self::Value>;
    fn broadcast(&mut self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn stop_gradient(&mut self, a: &Self::Value) -> Self::Value;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Add, a, b)
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(Binary::Mul, a, b)
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a x b^T`.
    fn matmul_t(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.matmul_ex(a, false, b, true)
    }

    fn mean(&mut self, a: &Self::Value) -> Self::Value {
        let n = self.shape(a).iter().product::<usize>() as f64;
        let s = self.sum(a);
        self.scale(&s, 1.0 / n)
    }

    fn square(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Square, a)
    }

    fn exp(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Exp, a)
    }

    fn log(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Log, a)
    }

    fn softplus(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Softplus, a)
    }

    fn silu(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Silu, a)
    }

    fn sin(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Sin, a)
    }

    fn cos(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Cos, a)
    }

    fn abs(&mut self, a: &Self::Value) -> Self::Value {
        self.unary(Unary::Abs, a)
    }

    /// `c * a` for a constant `c`.
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value {
        let shape = self.shape(a);
        let k = self.constant(Tensor::full(&shape, c));
        self.mul(a, &k).expect("same shape by construction")
    }

    /// Adds `b` broadcast to the shape of `a`.
    fn add_broadcast(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let shape = self.shape(a);
        let bb = self.broadcast(b, &shape)?;
        self.add(a, &bb)
    }

    /// Multiplies by `b` broadcast to the shape of `a`.
    fn mul_broadcast(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let shape = self.shape(a);
        let bb = self.broadcast(b, &shape)?;
        self.mul(a, &bb)
    }
}

/// Eager evaluation with no derivative bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Backend for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn value(&self, v: &Tensor) -> Tensor {
        v.clone()
    }

    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn unary(&mut self, op: Unary, a: &Tensor) -> Tensor {
        ops::unary(op, a)
    }

    fn binary(&mut self, op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::binary(op, a, b)
    }

    fn matmul_ex(&mut self, a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
        matmul_impl(a, ta, b, tb)
    }

    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.sum())
    }

    fn sum_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        ops::sum_axis(a, axis)
    }

    fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        ops::concat(&refs, axis)
    }

    fn slice(&mut self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        ops::slice(a, axis, start, len)
    }

    fn broadcast(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        ops::broadcast(a, shape)
    }

    fn stop_gradient(&mut self, a: &Tensor) -> Tensor {
        a.clone()
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.scale(c)
    }
}
