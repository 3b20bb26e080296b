//! Dense row-major tensors with eager evaluation and reverse-mode differentiation.
//!
//! Every primitive computes its value immediately. When at least one input
//! requires gradients the output records the producing primitive and keeps
//! its inputs alive, forming an acyclic graph rooted at the loss. Calling
//! [`Tensor::backward`] walks that graph in reverse topological order and
//! accumulates `∂loss/∂leaf` into each gradient-requiring leaf.

mod adam;
mod float;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use float::Float;
pub(crate) use float::gemm;
pub use ops::{apply_primitive, Primitive};
pub(crate) use ops::log_softmax;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node<T: Float> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    op: Option<Op<T>>,
    grad: Mutex<Option<Vec<T>>>,
}

/// Cheaply clonable handle to an immutable tensor value and its graph node.
#[derive(Clone)]
pub struct Tensor<T: Float> {
    node: Arc<Node<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn build(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                op,
                grad: Mutex::new(None),
            }),
        }
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("tensor shape {shape:?} has a zero dimension")));
        }
        if numel(shape) != len {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {} elements, got {len}",
                numel(shape)
            )));
        }
        Ok(())
    }

    /// A constant tensor (never receives gradients).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::build(Arc::new(data), shape.to_vec(), false, None))
    }

    /// A leaf that accumulates gradients on [`backward`](Self::backward).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::build(Arc::new(data), shape.to_vec(), true, None))
    }

    /// A leaf sharing an existing buffer; used to bind model parameters into a graph without copying.
    pub fn shared(data: Arc<Vec<T>>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::build(data, shape.to_vec(), requires_grad, None))
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Arc::new(vec![value]), vec![1], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::from_vec(vec![T::zero(); numel(shape)], shape)
    }

    /// Output of a primitive; the graph node is kept only if an input requires gradients.
    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Self {
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        let op = requires_grad.then_some(op);
        Self::build(Arc::new(data), shape, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.node.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// True if this tensor was produced by a recorded primitive.
    pub fn has_node(&self) -> bool {
        self.node.op.is_some()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Reverse-mode pass from a scalar loss.
    ///
    /// Gradients are added to any existing leaf gradient, so repeated calls
    /// without [`zero_grad`](Self::zero_grad) accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else { continue };
            match &t.node.op {
                Some(op) => {
                    for (input, ig) in op.backward(t, &g)? {
                        if !input.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over gradient-requiring nodes reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.node.op {
                for input in op.inputs().into_iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
