//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to it in execution order.
//! Nodes are addressed by [`Var`] handles, and each node owns a [`Value`]
//! holding its data and accumulated gradient. Calling [`Graph::backward`]
//! walks the tape once in reverse and adds `d loss / d node` into the
//! gradient of every node that requires one. Gradient storage is allocated
//! the first time a backward pass reaches a node; before that
//! [`Graph::grad`] is empty and [`Graph::grad_tensor`] reads as zeros.
//!
//! ```
//! use cardiospike::graph::Graph;
//! use cardiospike::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x), &[2.0, -4.0, 1.0]);
//! ```

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Data and accumulated gradient of one graph node.
#[derive(Clone, Debug)]
pub struct Value {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl Value {
    fn new(tensor: Tensor, requires_grad: bool) -> Self {
        let shape = tensor.shape().to_vec();
        let data = tensor.into_data();
        Self {
            shape,
            data,
            grad: Vec::new(),
            requires_grad,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Accumulated gradient; empty until a backward pass reaches the node.
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the operation's inputs, its output, and the adjoint
/// of the output. It returns one entry per input: the adjoint contribution
/// for that input, or `None` where `needs[i]` is false.
pub trait Function {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Value],
        output: &Value,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Value,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function>>,
}

/// Recording tape. Confined to one thread; not `Send`.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(Value::new(tensor, requires_grad), Vec::new(), None)
    }

    /// Trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, true)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, false)
    }

    /// Records an operation output. `requires_grad` is inherited from the
    /// inputs. Custom operations outside this crate go through here.
    pub fn apply(&mut self, func: Box<dyn Function>, inputs: &[Var], output: Tensor) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        self.push(
            Value::new(output, requires_grad),
            inputs.to_vec(),
            Some(func),
        )
    }

    fn push(&mut self, value: Value, inputs: Vec<Var>, func: Option<Box<dyn Function>>) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            inputs,
            func,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Value {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].value.shape
    }

    pub fn data(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value.data
    }

    pub fn grad(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value.grad
    }

    /// Snapshot of a node's data.
    pub fn tensor(&self, var: Var) -> Tensor {
        let v = &self.nodes[var.0].value;
        Tensor::new(v.shape.clone(), v.data.clone()).expect("node shape is consistent")
    }

    /// Snapshot of a node's gradient, zeros if none has been accumulated.
    pub fn grad_tensor(&self, var: Var) -> Tensor {
        let v = &self.nodes[var.0].value;
        let grad = if v.grad.is_empty() { vec![0.0; v.data.len()] } else { v.grad.clone() };
        Tensor::new(v.shape.clone(), grad).expect("node shape is consistent")
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = Vec::new();
        }
    }

    /// Accumulates `d loss / d v` into every reachable node that requires a
    /// gradient. Repeated calls add up until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].value.requires_grad {
            return Ok(());
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(func) = &node.func {
                let inputs: Vec<&Value> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| v.requires_grad).collect();
                let grads = func.backward(&inputs, &node.value, &adj, &needs);
                debug_assert_eq!(grads.len(), inputs.len(), "{}", func.name());
                for (input, grad) in node.inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !self.nodes[input.0].value.requires_grad {
                        continue;
                    }
                    match &mut adjoints[input.0] {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        slot @ None => *slot = Some(grad),
                    }
                }
            }
            let value = &mut self.nodes[idx].value;
            if value.grad.is_empty() {
                value.grad = adj;
            } else {
                value.grad.iter_mut().zip(&adj).for_each(|(g, a)| *g += a);
            }
        }
        Ok(())
    }
}
