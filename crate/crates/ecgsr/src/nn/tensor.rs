//! Reverse-mode tensors.
//!
//! A tensor owns a value buffer and, when it participates in a graph, a
//! node recording its parents and how to push a gradient back to them.
//! Graphs are built per training step and dropped after `backward`, so
//! memory stays bounded at batch size 1. Tensors are single-thread objects;
//! raw numeric kernels underneath parallelize internally.

use super::NnError;
use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

/// Computes gradients of each tracked parent given the output gradient.
/// Entries are `None` for parents that do not need a gradient.
pub(super) type BackpropFn = Box<dyn Fn(&[Tensor], &[f64]) -> Vec<Option<Vec<f64>>>>;

pub(super) struct Node {
    pub parents: Vec<Tensor>,
    pub backprop: BackpropFn,
}

pub(super) struct TensorInner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    track: bool,
    node: Option<Node>,
}

/// An n-dimensional double-precision array, optionally part of a
/// differentiable computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("tracked", &self.inner.track)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                context: format!("tensor of shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A gradient-carrying leaf (a parameter).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch {
                context: format!("tensor of shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; shape.iter().product()], false, None)
    }

    pub(super) fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Tensor {
        let track = requires_grad
            || node.as_ref().is_some_and(|n| n.parents.iter().any(|p| p.tracked()));
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                track,
                node,
            }),
        }
    }

    pub(super) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backprop: BackpropFn) -> Tensor {
        let any_tracked = parents.iter().any(|p| p.tracked());
        let node = any_tracked.then(|| Node { parents, backprop });
        Self::build(shape, data, false, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(super) fn tracked(&self) -> bool {
        self.inner.track
    }

    /// Stored gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place parameter update; used by the optimizer.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(self.inner.data.borrow_mut().as_mut_slice());
    }

    fn ptr(&self) -> *const TensorInner {
        Rc::as_ptr(&self.inner)
    }

    fn accumulate_leaf_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }
}

/// Reverse topological traversal from a scalar loss. Gradients of
/// `requires_grad` leaves accumulate into their `grad` buffers; repeated
/// calls accumulate unless the leaves are cleared.
pub fn backward(loss: &Tensor) -> Result<(), NnError> {
    if !loss.is_scalar() {
        return Err(NnError::NotScalar { shape: loss.shape().to_vec() });
    }
    if loss.inner.node.is_none() && !loss.inner.requires_grad {
        return Err(NnError::NoGraph);
    }

    // iterative post-order DFS over tracked ancestors
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<*const TensorInner> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.ptr()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = &t.inner.node {
            for p in &node.parents {
                if p.tracked() && !visited.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }

    let mut grads: HashMap<*const TensorInner, Vec<f64>> = HashMap::new();
    grads.insert(loss.ptr(), vec![1.0]);
    for t in order.iter().rev() {
        let Some(g) = grads.remove(&t.ptr()) else { continue };
        if t.inner.requires_grad && t.inner.node.is_none() {
            t.accumulate_leaf_grad(&g);
        }
        if let Some(node) = &t.inner.node {
            let parent_grads = (node.backprop)(&node.parents, &g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.tracked() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.len());
                match grads.entry(p.ptr()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&pg) {
                            *a += b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
        }
    }
    Ok(())
}
