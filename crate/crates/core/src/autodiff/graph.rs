//! Tape-recording backend with reverse-mode accumulation.

use std::collections::BTreeMap;

use super::backend::Backend;
use super::ops::{self, Binary, Unary};
use super::tensor::{matmul_impl, Tensor};
use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Sum(Var),
    SumAxis(Var),
    Concat(Vec<Var>, usize),
    Slice { a: Var, axis: usize, start: usize },
    Broadcast(Var),
    /// Value-identical, blocks gradient flow.
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any trainable leaf is upstream of this node.
    needs_grad: bool,
}

/// Which named parameters become trainable leaves.
#[derive(Clone, Debug, Default)]
pub enum Trainable {
    /// Every parameter.
    #[default]
    All,
    /// Only names starting with one of these prefixes.
    Prefixes(Vec<String>),
    /// No parameter; everything is a constant.
    None,
}

impl Trainable {
    fn admits(&self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Prefixes(ps) => ps.iter().any(|p| name.starts_with(p.as_str())),
            Trainable::None => false,
        }
    }
}

/// A recorded computation. Nodes are appended in evaluation order, so every
/// node's inputs precede it and the tape is acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    trainable: Trainable,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trainable(trainable: Trainable) -> Self {
        Self {
            trainable,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Names registered as trainable leaves so far.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf | Op::StopGradient => false,
            Op::Unary(_, a) | Op::Sum(a) | Op::SumAxis(a) | Op::Broadcast(a) => self.needs(*a),
            Op::Slice { a, .. } => self.needs(*a),
            Op::Binary(_, a, b) | Op::MatMul { a, b, .. } => self.needs(*a) || self.needs(*b),
            Op::Concat(parts, _) => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to each name.
    /// Names that are unknown, frozen or unreachable map to zeros of the
    /// shape given in `params`.
    pub fn grad<'a, I>(&self, loss: Var, params: I) -> Result<BTreeMap<String, Tensor>>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor)>,
    {
        let adj = self.backward(loss)?;
        Ok(params
            .into_iter()
            .map(|(name, like)| {
                let g = self
                    .params
                    .get(name)
                    .and_then(|v| adj[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(like.shape()));
                (name.to_string(), g)
            })
            .collect())
    }

    /// Gradient of `loss` with respect to a recorded node. Nodes with no
    /// trainable ancestor report zeros.
    pub fn grad_of_node(&self, loss: Var, wrt: Var) -> Result<Tensor> {
        let adj = self.backward(loss)?;
        Ok(adj[wrt.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.get(wrt).shape())))
    }

    fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let lv = self.get(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "gradient of non-scalar node with shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                // Parameter leaves keep their accumulated adjoint.
                adj[i] = Some(g);
                continue;
            }
            let send = |adj: &mut Vec<Option<Tensor>>, v: Var, d: Tensor| -> Result<()> {
                let slot = &mut adj[v.0];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(&d)?,
                    None => d,
                });
                Ok(())
            };
            match &node.op {
                Op::Leaf | Op::StopGradient => adj[i] = Some(g),
                Op::Unary(u, a) => {
                    send(&mut adj, *a, ops::unary_backward(*u, self.get(*a), &g))?;
                }
                Op::Binary(b, x, y) => {
                    let (nx, ny) = (self.needs(*x), self.needs(*y));
                    match b {
                        Binary::Add => {
                            if nx {
                                send(&mut adj, *x, g.clone())?;
                            }
                            if ny {
                                send(&mut adj, *y, g)?;
                            }
                        }
                        Binary::Sub => {
                            if nx {
                                send(&mut adj, *x, g.clone())?;
                            }
                            if ny {
                                send(&mut adj, *y, g.scale(-1.0))?;
                            }
                        }
                        Binary::Mul => {
                            if nx {
                                send(&mut adj, *x, g.mul(self.get(*y))?)?;
                            }
                            if ny {
                                send(&mut adj, *y, g.mul(self.get(*x))?)?;
                            }
                        }
                    }
                }
                Op::MatMul { a, ta, b, tb } => {
                    let (av, bv) = (self.get(*a), self.get(*b));
                    // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
                    if self.needs(*a) {
                        let da = if *ta {
                            matmul_impl(bv, *tb, &g, true)?
                        } else {
                            matmul_impl(&g, false, bv, !*tb)?
                        };
                        send(&mut adj, *a, da)?;
                    }
                    if self.needs(*b) {
                        let db = if *tb {
                            matmul_impl(&g, true, av, *ta)?
                        } else {
                            matmul_impl(av, !*ta, &g, false)?
                        };
                        send(&mut adj, *b, db)?;
                    }
                }
                Op::Sum(a) => {
                    let shape = self.get(*a).shape().to_vec();
                    send(&mut adj, *a, Tensor::full(&shape, g.item()?))?;
                }
                Op::SumAxis(a) => {
                    let shape = self.get(*a).shape().to_vec();
                    send(&mut adj, *a, ops::broadcast(&g, &shape)?)?;
                }
                Op::Broadcast(a) => {
                    let shape = self.get(*a).shape().to_vec();
                    send(&mut adj, *a, ops::reduce_to(&g, &shape))?;
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for p in parts {
                        let len = self.get(*p).shape()[*axis];
                        if self.needs(*p) {
                            send(&mut adj, *p, ops::slice(&g, *axis, start, len)?)?;
                        }
                        start += len;
                    }
                }
                Op::Slice { a, axis, start } => {
                    let shape = self.get(*a).shape().to_vec();
                    send(&mut adj, *a, ops::slice_backward(&g, &shape, *axis, *start))?;
                }
            }
        }
        Ok(adj)
    }
}

impl Backend for Graph {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if !self.trainable.admits(name) {
            return self.constant(t.clone());
        }
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push_param(t.clone());
        self.params.insert(name.to_string(), v);
        v
    }

    fn value(&self, v: &Var) -> Tensor {
        self.get(*v).clone()
    }

    fn shape(&self, v: &Var) -> Vec<usize> {
        self.get(*v).shape().to_vec()
    }

    fn unary(&mut self, op: Unary, a: &Var) -> Var {
        let value = ops::unary(op, self.get(*a));
        self.push(value, Op::Unary(op, *a))
    }

    fn binary(&mut self, op: Binary, a: &Var, b: &Var) -> Result<Var> {
        let value = ops::binary(op, self.get(*a), self.get(*b))?;
        Ok(self.push(value, Op::Binary(op, *a, *b)))
    }

    fn matmul_ex(&mut self, a: &Var, ta: bool, b: &Var, tb: bool) -> Result<Var> {
        let value = matmul_impl(self.get(*a), ta, self.get(*b), tb)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a: *a,
                ta,
                b: *b,
                tb,
            },
        ))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let value = Tensor::scalar(self.get(*a).sum());
        self.push(value, Op::Sum(*a))
    }

    fn sum_axis(&mut self, a: &Var, axis: usize) -> Result<Var> {
        let value = ops::sum_axis(self.get(*a), axis)?;
        Ok(self.push(value, Op::SumAxis(*a)))
    }

    fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.get(*p)).collect();
        let value = ops::concat(&refs, axis)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    fn slice(&mut self, a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = ops::slice(self.get(*a), axis, start, len)?;
        Ok(self.push(value, Op::Slice { a: *a, axis, start }))
    }

    fn broadcast(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        if self.get(*a).shape() == shape {
            return Ok(*a);
        }
        let value = ops::broadcast(self.get(*a), shape)?;
        Ok(self.push(value, Op::Broadcast(*a)))
    }

    fn stop_gradient(&mut self, a: &Var) -> Var {
        let value = self.get(*a).clone();
        self.push(value, Op::StopGradient)
    }
}
