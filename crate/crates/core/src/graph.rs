//! Single-use reverse-mode tape.
//!
//! A [`Graph`] is built by an eager forward pass (each op records its inputs
//! and caches its activation), then consumed by one [`Graph::backward`] call
//! that walks the records in reverse topological order exactly once. Nodes
//! are appended in dependency order, so reverse insertion order *is* reverse
//! topological order.

use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::real::Real;
use crate::tensor::{check_same_shape, Tensor};

/// Handle to a node in one specific graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum OpRecord<R: Real> {
    Leaf { requires_grad: bool },
    Conv2d { input: NodeId, kernel: NodeId, stride: usize },
    Dense { input: NodeId, weights: NodeId, bias: NodeId },
    Activation { input: NodeId, kind: Activation },
    Flatten { input: NodeId },
    Scale { input: NodeId, factor: R },
    LinComb { a: R, x: NodeId, b: R, y: NodeId },
}

#[derive(Debug)]
struct Node<R: Real> {
    op: OpRecord<R>,
    value: Tensor<R>,
}

/// Computation tape. Forward ops append nodes; `backward` runs once.
#[derive(Debug, Default)]
pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    backward_done: bool,
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, op: OpRecord<R>, value: Tensor<R>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "node id {} out of range for this graph",
                id.0
            )));
        }
        Ok(())
    }

    /// Register an input tensor. Leaves flagged `requires_grad` receive a
    /// gradient buffer after `backward`.
    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> NodeId {
        self.push(OpRecord::Leaf { requires_grad }, value)
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize) -> Result<NodeId> {
        self.check(input)?;
        self.check(kernel)?;
        let value = ops::conv2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            stride,
        )?;
        Ok(self.push(
            OpRecord::Conv2d {
                input,
                kernel,
                stride,
            },
            value,
        ))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check(weights)?;
        self.check(bias)?;
        let value = ops::dense_forward(
            &self.nodes[input.0].value,
            &self.nodes[weights.0].value,
            &self.nodes[bias.0].value,
        )?;
        Ok(self.push(
            OpRecord::Dense {
                input,
                weights,
                bias,
            },
            value,
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        self.check(input)?;
        let value = ops::activation_forward(&self.nodes[input.0].value, kind);
        Ok(self.push(OpRecord::Activation { input, kind }, value))
    }

    /// Reshape to rank 1 (no data movement beyond the copy into the node).
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let src = &self.nodes[input.0].value;
        let value = Tensor::new(vec![src.numel()], src.data().to_vec())?;
        Ok(self.push(OpRecord::Flatten { input }, value))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, input: NodeId, factor: R) -> Result<NodeId> {
        self.check(input)?;
        let src = &self.nodes[input.0].value;
        let data = src.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(OpRecord::Scale { input, factor }, value))
    }

    /// Elementwise `a*x + b*y` over equally shaped nodes.
    pub fn lin_comb(&mut self, a: R, x: NodeId, b: R, y: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(y)?;
        let (tx, ty) = (&self.nodes[x.0].value, &self.nodes[y.0].value);
        check_same_shape("lin_comb", tx.shape(), ty.shape())?;
        let data = tx
            .data()
            .iter()
            .zip(ty.data())
            .map(|(&vx, &vy)| a * vx + b * vy)
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(OpRecord::LinComb { a, x, b, y }, value))
    }

    /// Cached activation of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    /// Gradient of a node populated by `backward`, as a tensor.
    pub fn grad(&self, id: NodeId) -> Result<Tensor<R>> {
        let node = &self.nodes[id.0];
        match node.value.grad() {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.to_vec()),
            None => Err(Error::State(format!(
                "node {} has no gradient (backward not run, or leaf not flagged)",
                id.0
            ))),
        }
    }

    /// Sign pattern (`> 0`) of every ReLU pre-activation in forward order.
    /// Two forward passes that share this pattern lie in the same locally
    /// linear region, so finite differences between them are valid.
    pub fn relu_sign_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let OpRecord::Activation {
                input,
                kind: Activation::Relu,
            } = node.op
            {
                pattern.extend(
                    self.nodes[input.0]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v > R::zero()),
                );
            }
        }
        pattern
    }

    /// Reverse pass seeded with the cotangent of `output`. Fills gradients of
    /// every node reachable backwards from `output`; leaves flagged
    /// `requires_grad` keep theirs accessible via [`Graph::grad`].
    pub fn backward(&mut self, output: NodeId, seed: &Tensor<R>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward on an empty graph".into()));
        }
        if self.backward_done {
            return Err(Error::State(
                "backward already ran; graphs cache one forward pass only".into(),
            ));
        }
        self.check(output)?;
        check_same_shape("backward seed", seed.shape(), self.nodes[output.0].value.shape())?;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<R>>> = vec![None; n];
        grads[output.0] = Some(seed.data().to_vec());

        let add_into = |slot: &mut Option<Vec<R>>, contrib: &[R]| {
            match slot {
                Some(buf) => {
                    for (b, &c) in buf.iter_mut().zip(contrib) {
                        *b += c;
                    }
                }
                None => *slot = Some(contrib.to_vec()),
            }
        };

        // Single reverse sweep: node inputs always precede the node, so each
        // node's cotangent is complete when visited.
        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let grad_t = Tensor::new(self.nodes[idx].value.shape().to_vec(), grad.clone())?;
            match self.nodes[idx].op {
                OpRecord::Leaf { .. } => {}
                OpRecord::Conv2d {
                    input,
                    kernel,
                    stride,
                } => {
                    let (d_in, d_k) = ops::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        stride,
                        &grad_t,
                    )?;
                    add_into(&mut grads[input.0], d_in.data());
                    add_into(&mut grads[kernel.0], d_k.data());
                }
                OpRecord::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let (d_in, d_w, d_b) = ops::dense_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weights.0].value,
                        &grad_t,
                    )?;
                    add_into(&mut grads[input.0], d_in.data());
                    add_into(&mut grads[weights.0], d_w.data());
                    add_into(&mut grads[bias.0], d_b.data());
                }
                OpRecord::Activation { input, kind } => {
                    let d_in =
                        ops::activation_backward(&self.nodes[input.0].value, kind, &grad_t)?;
                    add_into(&mut grads[input.0], d_in.data());
                }
                OpRecord::Flatten { input } => {
                    add_into(&mut grads[input.0], &grad);
                }
                OpRecord::Scale { input, factor } => {
                    let scaled: Vec<R> = grad.iter().map(|&g| g * factor).collect();
                    add_into(&mut grads[input.0], &scaled);
                }
                OpRecord::LinComb { a, x, b, y } => {
                    let ga: Vec<R> = grad.iter().map(|&g| g * a).collect();
                    let gb: Vec<R> = grad.iter().map(|&g| g * b).collect();
                    add_into(&mut grads[x.0], &ga);
                    add_into(&mut grads[y.0], &gb);
                }
            }
            // Keep the cotangent on the node itself so callers can inspect it.
            self.nodes[idx].value.set_grad(grad);
        }

        // Leaves not reachable from the output still get a (zero) gradient
        // when they asked for one.
        for idx in 0..n {
            if let OpRecord::Leaf {
                requires_grad: true,
            } = self.nodes[idx].op
            {
                if self.nodes[idx].value.grad().is_none() {
                    let zeros = vec![R::zero(); self.nodes[idx].value.numel()];
                    self.nodes[idx].value.set_grad(zeros);
                }
            }
        }

        self.backward_done = true;
        Ok(())
    }
}
