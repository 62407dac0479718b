use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Records operations for one forward pass. Dropped after the backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node { value: Rc::new(value), requires_grad, backward: None })
    }

    pub fn leaf_rc(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node { value, requires_grad, backward: None })
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Appends the result of a differentiable operation.
    ///
    /// `backward` receives the gradient of the output and accumulates parent
    /// gradients through the [`GradSink`]. It is only stored when at least one
    /// parent requires a gradient.
    pub fn op<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: impl Fn(&[T], &mut GradSink<T>) + 'static,
    ) -> Var<'t, T> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let backward: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push(Node { value: Rc::new(value), requires_grad, backward })
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. Gradients are retained for leaves.
    pub fn backward(&self, loss: Var<'_, T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward() needs a scalar loss");
        let mut sink = GradSink {
            grads: (0..nodes.len()).map(|_| None).collect(),
            sizes: nodes.iter().map(|n| n.value.numel()).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        if nodes[loss.id].requires_grad {
            sink.grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(bw) = &nodes[id].backward else { continue };
            let Some(g) = sink.grads[id].take() else { continue };
            bw(&g, &mut sink);
        }
        Grads { grads: sink.grads, shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect() }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn from_id(tape: &'t Tape<T>, id: usize) -> Self {
        Self { tape, id }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
    requires: Vec<bool>,
}

impl<T: Scalar> GradSink<T> {
    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }

    /// Mutable gradient buffer of node `id`, zero-initialised on first use.
    /// `None` when the node does not require a gradient.
    pub fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.requires[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(self.grads[id].get_or_insert_with(|| vec![T::zero(); size]).as_mut_slice())
    }

    pub fn accumulate(&mut self, id: usize, g: &[T]) {
        if let Some(slot) = self.slot(id) {
            for (s, v) in slot.iter_mut().zip(g) {
                *s += *v;
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to leaf `v`; `None` when `v` does
    /// not require a gradient or did not influence the loss.
    pub fn get(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.get_id(v.id())
    }

    pub fn get_id(&self, id: usize) -> Option<Tensor<T>> {
        let shape = self.shapes.get(id)?.clone();
        self.grads[id].as_ref().map(|g| Tensor::from_parts(shape, g.clone()))
    }

    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}
