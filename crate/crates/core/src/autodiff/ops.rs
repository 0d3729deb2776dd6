//! Elementary operation kernels shared by the eager, forward-mode and
//! recording backends.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pointwise unary operations with their derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Square,
    Exp,
    Log,
    Softplus,
    Silu,
    Sin,
    Cos,
    Abs,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Abs => x.abs(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Unary::Square => 2.0 * x,
            Unary::Exp => x.exp(),
            Unary::Log => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub const ALL: [Unary; 8] = [
        Unary::Square,
        Unary::Exp,
        Unary::Log,
        Unary::Softplus,
        Unary::Silu,
        Unary::Sin,
        Unary::Cos,
        Unary::Abs,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn unary(op: Unary, a: &Tensor) -> Tensor {
    a.map(|v| op.apply(v))
}

/// `g * f'(a)` elementwise.
pub fn unary_backward(op: Unary, a: &Tensor, g: &Tensor) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(g.data())
            .map(|(&x, &gv)| gv * op.derivative(x))
            .collect(),
    )
}

pub fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| op.apply(x, y))
}

pub fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = a.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    let data = a.data();
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, &v) in dst.iter_mut().zip(&data[base..base + inner]) {
                *d += v;
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = 1;
    Ok(Tensor::from_parts(new_shape, out))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let nd = first.ndim();
    if axis >= nd {
        return Err(Error::Shape(format!("concat axis {axis} for rank {nd}")));
    }
    for p in parts {
        let ok = p.ndim() == nd
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::Shape(format!(
                "concat shapes {:?} and {:?} differ off axis {axis}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice(a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = a.shape();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::Shape(format!(
            "slice [{start}, {}) on axis {axis} of {shape:?}",
            start + len
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis] * inner;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full + start * inner;
        out.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = len;
    Ok(Tensor::from_parts(new_shape, out))
}

/// Adjoint of `slice`: embeds `g` into zeros of `full_shape`.
pub fn slice_backward(g: &Tensor, full_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let full = full_shape[axis] * inner;
    let len = g.shape()[axis];
    let mut out = vec![0.0; full_shape.iter().product()];
    for o in 0..outer {
        let base = o * full + start * inner;
        out[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

fn check_broadcast(from: &[usize], to: &[usize]) -> Result<()> {
    if from.len() > to.len() {
        return Err(Error::Shape(format!("cannot broadcast {from:?} to {to:?}")));
    }
    let pad = to.len() - from.len();
    for (i, &d) in from.iter().enumerate() {
        if d != 1 && d != to[pad + i] {
            return Err(Error::Shape(format!("cannot broadcast {from:?} to {to:?}")));
        }
    }
    Ok(())
}

/// Source offset of every destination element under right-aligned broadcasting.
fn broadcast_index(from: &[usize], to: &[usize]) -> Vec<usize> {
    let pad = to.len() - from.len();
    let mut src_strides = vec![0usize; to.len()];
    let mut stride = 1;
    for i in (0..from.len()).rev() {
        src_strides[pad + i] = if from[i] == 1 { 0 } else { stride };
        stride *= from[i];
    }
    let n: usize = to.iter().product();
    let mut idx = vec![0usize; to.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(idx.iter().zip(&src_strides).map(|(a, b)| a * b).sum());
        for d in (0..to.len()).rev() {
            idx[d] += 1;
            if idx[d] < to[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub fn broadcast(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    check_broadcast(a.shape(), shape)?;
    if a.shape() == shape {
        return Ok(a.clone());
    }
    if a.numel() == 1 {
        return Ok(Tensor::full(shape, a.data()[0]));
    }
    let data = a.data();
    let out = broadcast_index(a.shape(), shape)
        .into_iter()
        .map(|i| data[i])
        .collect();
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Adjoint of `broadcast`: sums `g` back down to `shape`.
pub fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = g.sum();
    } else {
        for (gv, i) in g.data().iter().zip(broadcast_index(shape, g.shape())) {
            out[i] += gv;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}
