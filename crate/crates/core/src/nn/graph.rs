//! Tape-based reverse-mode differentiation over n-dimensional arrays.
//!
//! Every operation appends a node holding its value and a closure that maps
//! the output gradient to gradients of its parents. `Graph::backward` walks
//! the tape in reverse once.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub type Tensor = ArrayD<f64>;

/// Maps the output gradient to one optional gradient per parent. The flag
/// slice says which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, usize, bool)>,
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

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Named parameter. Frozen parameters behave as constants but still
    /// report an all-zero gradient.
    pub fn param(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        let v = self.push_leaf(value.clone(), trainable);
        self.params.push((name.to_string(), v.0, trainable));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn value_rc(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "expected a single-element tensor, got shape {:?}", t.shape());
        t.iter().next().copied().unwrap_or(0.0)
    }

    /// Records an operation. Nodes whose parents need no gradient drop
    /// their backward closure.
    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = ArrayD::from_elem(self.value(loss).raw_dim(), 1.0);
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match grads[p].as_mut() {
                    Some(acc) => *acc += &pg,
                    // Kernels index gradients by row-major slices, so
                    // transposed products are normalised here once.
                    None if pg.is_standard_layout() => grads[p] = Some(pg),
                    None => grads[p] = Some(pg.as_standard_layout().into_owned()),
                }
            }
        }
        let param_index = self
            .params
            .iter()
            .map(|(name, idx, trainable)| (name.clone(), (*idx, *trainable)))
            .collect();
        let shapes = self
            .params
            .iter()
            .map(|(name, idx, _)| (name.clone(), self.nodes[*idx].value.raw_dim()))
            .collect();
        Gradients {
            grads,
            param_index,
            shapes,
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_index: BTreeMap<String, (usize, bool)>,
    shapes: BTreeMap<String, IxDyn>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if it received none.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros where nothing flowed.
    pub fn of_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.of(v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(IxDyn(shape)))
    }

    /// Gradients keyed by parameter name. Frozen parameters and parameters
    /// that did not influence the loss map to zeros. A non-finite entry is
    /// an error naming the parameter.
    pub fn params(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (name, &(idx, trainable)) in &self.param_index {
            let g = match (trainable, self.grads[idx].as_ref()) {
                (true, Some(g)) => g.clone(),
                _ => ArrayD::zeros(self.shapes[name].clone()),
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient for parameter `{name}`")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}
