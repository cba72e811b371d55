//! Reverse-mode autodiff tape.
//!
//! Nodes are appended in evaluation order, so the node index order is a
//! topological order and backward is a single reverse sweep. A tape lives on
//! one thread; parameters are read from a shared [`ParamStore`] and gradients
//! are handed back as [`ParamGrads`], never written into the store.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Real, Tensor};

pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<(u64, ParamId), usize>>,
    frozen: RefCell<Vec<u64>>,
    grad_enabled: bool,
    training: bool,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Gradient-tracking tape in training mode.
    pub fn new() -> Self {
        Self::with_mode(true, true)
    }

    /// Tape that records no backward closures; parameters enter as constants.
    pub fn no_grad(training: bool) -> Self {
        Self::with_mode(false, training)
    }

    pub fn with_mode(grad_enabled: bool, training: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            frozen: RefCell::new(Vec::new()),
            grad_enabled,
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Rc<Tensor<T>>, requires_grad: bool, parents: Vec<usize>, backward: Option<BackwardFn<T>>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, requires_grad, parents, backward });
        Var { tape: self, id }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), false, Vec::new(), None)
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), self.grad_enabled, Vec::new(), None)
    }

    /// Leaf holding the masked value of a stored parameter. Repeated calls
    /// return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let key = (store.tag(), id);
        if let Some(&node) = self.params.borrow().get(&key) {
            return Var { tape: self, id: node };
        }
        let value = store.get(id).effective();
        let v = if self.frozen.borrow().contains(&store.tag()) { self.constant(value) } else { self.leaf(value) };
        self.params.borrow_mut().insert(key, v.id);
        v
    }

    /// Parameters of `store` read after this call enter as constants: no
    /// gradients are computed for them, though gradients still flow through
    /// the ops that use them.
    pub fn freeze(&self, store: &ParamStore<T>) {
        self.frozen.borrow_mut().push(store.tag());
    }

    /// Records an op output. `backward` maps the output gradient to one
    /// optional gradient per parent; it is dropped when no parent needs grads.
    pub fn record<F>(&self, value: impl Into<Rc<Tensor<T>>>, parents: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let value = value.into();
        let needs = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        if needs {
            self.push(value, true, parents.iter().map(|p| p.id).collect(), Some(Box::new(backward)))
        } else {
            self.push(value, false, Vec::new(), None)
        }
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss. Clears the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let params = std::mem::take(&mut *self.params.borrow_mut());
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut keep = vec![false; nodes.len()];
        for &n in params.values() {
            keep[n] = true;
        }
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        }
        for i in (0..=loss.id).rev() {
            let node = &mut nodes[i];
            if node.backward.is_none() {
                // leaf: keep its gradient for the caller
                keep[i] = keep[i] || node.requires_grad;
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let f = node.backward.take().expect("checked");
            let parents = std::mem::take(&mut node.parents);
            node.value = Rc::new(Tensor::scalar(T::zero()));
            let parent_grads = f(&g);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (p, pg) in parents.into_iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for (g, k) in grads.iter_mut().zip(&keep) {
            if !k {
                *g = None;
            }
        }
        Ok(Gradients { by_node: grads, params })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Single-element value as f64.
    pub fn scalar(&self) -> f64 {
        self.value().item().as_f64()
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: HashMap<(u64, ParamId), usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a differentiable leaf.
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&(store.tag(), id)).and_then(|&n| self.by_node[n].as_ref())
    }

    /// Per-parameter gradients with masked entries zeroed.
    pub fn into_param_grads(mut self, store: &ParamStore<T>) -> ParamGrads<T> {
        self.take_param_grads(store)
    }

    /// Moves out the gradients of `store`'s parameters, leaving those of
    /// other stores in place.
    pub fn take_param_grads(&mut self, store: &ParamStore<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::zeros_like(store);
        let mine: Vec<_> = self.params.keys().filter(|k| k.0 == store.tag()).copied().collect();
        for key in mine {
            let (id, node) = (key.1, self.params.remove(&key).expect("listed"));
            if let Some(g) = self.by_node[node].take() {
                let mut g = g.into_data();
                if let Some(mask) = &store.get(id).mask {
                    for (v, &m) in g.iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                out.grads[id.0] = g;
            }
        }
        out
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { grads: store.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect() }
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            *g *= s;
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().map(|&g| g * g).sum::<T>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }
}
