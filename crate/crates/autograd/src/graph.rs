use std::cell::RefCell;
use std::collections::HashMap;

use crate::params::{ParamId, ParamKind, ParamStore};
use crate::parallel::Exec;
use crate::real::Real;
use crate::tensor::Tensor;

/// Maps the upstream gradient of a node to gradients for each parent, in
/// parent order. `None` means "no contribution".
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// A single forward pass recorded as a tape. Build one per step and drop it
/// after the backward pass.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    exec: Exec,
}

/// Handle to a value on a [`Graph`].
pub struct Var<'g, T> {
    pub(crate) g: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::with_exec(Exec::auto())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
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
        Var {
            g: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    /// A differentiable input whose gradient is kept by [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        })
    }

    /// Brings a stored parameter onto the tape; repeated calls reuse one node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { g: self, id: node };
        }
        let var = match store.kind(id) {
            ParamKind::Trainable => self.leaf(store.get(id).clone()),
            ParamKind::Buffer => self.constant(store.get(id).clone()),
        };
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Records an op. The backward closure is dropped when no parent needs a
    /// gradient.
    pub fn push_op(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: BackwardFn<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    pub fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `root` (seeded with 1).
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let seed = {
            let nodes = self.nodes.borrow();
            let v = &nodes[root.id].value;
            assert_eq!(v.numel(), 1, "backward root must be scalar, got {:?}", v.shape());
            Tensor::full(v.shape().to_vec(), T::one())
        };
        self.backward_with(root, seed)
    }

    /// Reverse-mode sweep from `root` seeded with an explicit upstream gradient.
    pub fn backward_with(&self, root: Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.shape(), seed.shape(), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.id + 1];
        grads[root.id] = Some(seed);
        let mut kept = HashMap::new();
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                None => {
                    kept.insert(id, g);
                }
                Some(f) => {
                    let parent_grads = f(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        assert_eq!(
                            pg.shape(),
                            nodes[p].value.shape(),
                            "gradient shape mismatch flowing into node {p}"
                        );
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Gradients {
            leaves: kept,
            params: self.params.borrow().clone(),
        }
    }
}

/// Gradients of the leaves and parameters reached by a backward sweep.
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|n| self.leaves.get(n))
    }

    /// Squared L2 norm of a parameter's gradient; zero when none flowed.
    pub fn param_sq_norm(&self, id: ParamId) -> T {
        self.param(id).map_or(T::zero(), |g| g.sq_norm())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params
            .iter()
            .filter(|(_, n)| self.leaves.contains_key(n))
            .map(|(&id, _)| id)
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.g
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.g.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.g.nodes.borrow()[self.id].value.dim(axis)
    }

    pub fn rank(&self) -> usize {
        self.g.nodes.borrow()[self.id].value.rank()
    }

    pub fn item(&self) -> T {
        self.g.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.g.requires_grad(self.id)
    }

    pub(crate) fn exec(&self) -> Exec {
        self.g.exec
    }

    /// Records a unary op on `self`.
    pub(crate) fn op1(
        self,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>) -> Option<Tensor<T>> + 'static,
    ) -> Var<'g, T> {
        self.g
            .push_op(value, &[self], Box::new(move |g| vec![backward(g)]))
    }
}
