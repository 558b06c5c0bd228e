//! The recording tape and reverse pass.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::ArrayD;

use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward closure: given the gradient at this node and a per-parent
/// "is needed" mask, produce the gradient contribution for each parent
/// (aligned with the node's parent list).
pub(crate) type BackFn<T> = Box<dyn Fn(&ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

pub(crate) struct Node<T: Scalar> {
    pub value: Rc<ArrayD<T>>,
    pub parents: Vec<Var>,
    pub requires: bool,
    pub back: Option<BackFn<T>>,
}

/// Forward recording. Dropped and rebuilt every optimization step.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    /// Trainable parameter bindings, memoized by name so a module
    /// applied twice in one step shares its leaves (gradients then
    /// accumulate across uses).
    bindings: BTreeMap<String, Var>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: BTreeMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; backward closures are skipped.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: BTreeMap::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a rank-0 or single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        *val.iter().next().unwrap()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<T>,
        parents: Vec<Var>,
        back: Option<BackFn<T>>,
    ) -> Var {
        let requires =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires);
        let node = Node {
            value: Rc::new(value),
            parents,
            requires,
            back: if requires { back } else { None },
        };
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn value_rc(&self, v: Var) -> Rc<ArrayD<T>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, vec![], None)
    }

    /// Leaf that participates in differentiation (an input whose
    /// gradient is wanted, without being a named parameter).
    pub fn leaf_grad(&mut self, value: ArrayD<T>) -> Var {
        let var = self.push(value, vec![], None);
        if self.grad_enabled {
            self.nodes[var.0].requires = true;
        }
        var
    }

    /// Binds a named trainable parameter. Repeated bindings of the same
    /// name return the same leaf.
    pub fn param(&mut self, name: &str, value: &ArrayD<T>) -> Var {
        if let Some(&v) = self.bindings.get(name) {
            debug_assert_eq!(
                self.nodes[v.0].value.shape(),
                value.shape(),
                "rebinding {name} with a different shape"
            );
            return v;
        }
        let var = self.leaf_grad(value.clone());
        self.bindings.insert(name.to_string(), var);
        var
    }

    /// Binds a parameter either trainably or as a frozen constant.
    /// Frozen parameters still propagate gradients through themselves
    /// to upstream nodes; they just never receive gradients.
    pub fn bind(&mut self, name: &str, value: &ArrayD<T>, trainable: bool) -> Var {
        if trainable {
            self.param(name, value)
        } else {
            self.constant(value.clone())
        }
    }

    /// Stops gradient flow: a fresh constant leaf sharing the value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value_rc(v);
        self.nodes.push(Node {
            value,
            parents: vec![],
            requires: false,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar root. Returns gradients for every
    /// node that required them.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), T::one()));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires {
                grads[id] = None;
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[id].back {
                let parents = &self.nodes[id].parents;
                let needs: Vec<bool> =
                    parents.iter().map(|p| self.nodes[p.0].requires).collect();
                let contribs = back(&gout, &needs);
                debug_assert_eq!(contribs.len(), parents.len());
                for (parent, contrib) in parents.iter().zip(contribs) {
                    if let Some(c) = contrib {
                        match &mut grads[parent.0] {
                            Some(acc) => *acc += &c,
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
            grads[id] = Some(gout);
        }
        Gradients { grads }
    }

    /// Gradients of all bound trainable parameters, keyed by name.
    /// Parameters that did not participate in the loss get no entry.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, ArrayD<T>> {
        self.bindings
            .iter()
            .filter_map(|(name, &var)| grads.of(var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// Result of a reverse pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
