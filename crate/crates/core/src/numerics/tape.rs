//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every primitive op appends one node holding its value, its parent ids and a
//! backward rule. Node ids grow monotonically, so reverse id order is a valid
//! reverse topological order. Backward rules are written in terms of ops on
//! [`Var`]s; when gradients are requested with `create_graph`, those ops are
//! themselves recorded and the resulting gradients can be differentiated again.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Backward rule: `(upstream gradient, inputs, output) -> per-input gradient`.
pub(crate) type BackwardFn = Rc<dyn Fn(&Var, &[Var], &Var) -> Result<Vec<Option<Var>>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    op: &'static str,
}

struct TapeInner {
    nodes: Vec<Node>,
    /// Whether new ops record differentiable nodes right now.
    recording: bool,
    /// Fixed at construction; a no-grad tape can never record.
    grad_enabled: bool,
}

#[derive(Clone)]
pub struct Tape(Rc<RefCell<TapeInner>>);

/// A tensor value living on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    value: Rc<Tensor>,
    requires_grad: bool,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), recording: true, grad_enabled: true })))
    }

    /// A tape on which nothing is ever differentiable (inference only).
    pub fn no_grad() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), recording: false, grad_enabled: false })))
    }

    pub fn grad_enabled(&self) -> bool {
        self.0.borrow().grad_enabled
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn push(&self, node: Node) -> Var {
        let mut inner = self.0.borrow_mut();
        let id = inner.nodes.len();
        let var = Var { tape: self.clone(), id, value: node.value.clone(), requires_grad: node.requires_grad };
        inner.nodes.push(node);
        var
    }

    /// A leaf; `requires_grad` is ignored on a no-grad tape.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled();
        self.push(Node { value: Rc::new(value), requires_grad: rg, inputs: vec![], backward: None, op: "leaf" })
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Append the result of a primitive op.
    pub(crate) fn record(&self, op: &'static str, inputs: &[&Var], value: Tensor, backward: BackwardFn) -> Result<Var> {
        for v in inputs {
            if !v.tape.same(self) {
                return Err(Error::contract(format!("`{op}` mixes vars from different tapes")));
            }
        }
        if !value.is_finite() {
            return Err(Error::Numeric { op, detail: format!("non-finite value in output of shape {:?}", value.shape()) });
        }
        let recording = self.0.borrow().recording;
        let rg = recording && inputs.iter().any(|v| v.requires_grad);
        let node = if rg {
            Node {
                value: Rc::new(value),
                requires_grad: true,
                inputs: inputs.iter().map(|v| v.id).collect(),
                backward: Some(backward),
                op,
            }
        } else {
            Node { value: Rc::new(value), requires_grad: false, inputs: vec![], backward: None, op }
        };
        Ok(self.push(node))
    }

    fn var_at(&self, id: usize) -> Var {
        let inner = self.0.borrow();
        let n = &inner.nodes[id];
        Var { tape: self.clone(), id, value: n.value.clone(), requires_grad: n.requires_grad }
    }

    /// Gradients of a scalar `loss` with respect to `wrt`.
    ///
    /// With `create_graph` the returned vars are differentiable functions of
    /// the tape's leaves; otherwise they are constants. The tape is left
    /// intact either way and may be differentiated again.
    pub fn grad(&self, loss: &Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if !loss.tape.same(self) || wrt.iter().any(|w| !w.tape.same(self)) {
            return Err(Error::contract("grad: vars belong to a different tape"));
        }
        if loss.value.shape() != [1] {
            return Err(Error::contract(format!("grad needs a scalar loss of shape [1], got {:?}", loss.value.shape())));
        }
        if !self.grad_enabled() {
            return Err(Error::contract("grad requested on a tape built with gradient recording disabled"));
        }
        let previous = {
            let mut inner = self.0.borrow_mut();
            std::mem::replace(&mut inner.recording, create_graph)
        };
        let result = self.grad_inner(loss, wrt);
        self.0.borrow_mut().recording = previous;
        result
    }

    fn grad_inner(&self, loss: &Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let mut grads: Vec<Option<Var>> = vec![None; loss.id + 1];
        if loss.requires_grad {
            grads[loss.id] = Some(self.constant(Tensor::ones(&[1])));
        }
        // Nodes older than every requested var cannot lie on a path from them.
        let stop = wrt.iter().map(|w| w.id).min().unwrap_or(loss.id + 1);
        let wanted: HashSet<usize> = wrt.iter().map(|w| w.id).collect();
        let mut kept: HashMap<usize, Var> = HashMap::new();
        for id in (stop..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if wanted.contains(&id) {
                kept.insert(id, g.clone());
            }
            let (backward, inputs) = {
                let inner = self.0.borrow();
                let node = &inner.nodes[id];
                (node.backward.clone(), node.inputs.clone())
            };
            let Some(backward) = backward else { continue };
            let input_vars: Vec<Var> = inputs.iter().map(|&i| self.var_at(i)).collect();
            let out = self.var_at(id);
            let input_grads = backward(&g, &input_vars, &out)?;
            for (input, gi) in input_vars.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if !input.requires_grad {
                    continue;
                }
                if gi.value.shape() != input.value.shape() {
                    let op = self.0.borrow().nodes[id].op;
                    return Err(Error::contract(format!(
                        "backward of `{op}` produced gradient {:?} for input {:?}",
                        gi.value.shape(),
                        input.value.shape()
                    )));
                }
                grads[input.id] = Some(match grads[input.id].take() {
                    None => gi,
                    Some(acc) => acc.add(&gi)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match kept.get(&w.id).cloned() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(w.value.shape())),
            })
            .collect())
    }

    /// Gradients of `loss` for every grad-enabled leaf recorded before it.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        let leaves: Vec<Var> = {
            let inner = self.0.borrow();
            (0..=loss.id.min(inner.nodes.len().saturating_sub(1)))
                .filter(|&i| inner.nodes[i].requires_grad && inner.nodes[i].backward.is_none())
                .map(|i| Var { tape: self.clone(), id: i, value: inner.nodes[i].value.clone(), requires_grad: true })
                .collect()
        };
        let grads = self.grad(loss, &leaves, false)?;
        Ok(Gradients {
            by_id: leaves.iter().zip(grads).map(|(l, g)| (l.id, g.value.as_ref().clone())).collect(),
        })
    }
}

/// Leaf gradients keyed by the leaf they belong to.
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        self.by_id.get(&leaf.id)
    }

    /// Gradient for `leaf`, or zeros when the loss does not depend on it.
    pub fn get_or_zero(&self, leaf: &Var) -> Tensor {
        self.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Exact derivative of an objective that itself differentiates through an
/// inner update, e.g. adapt-then-evaluate meta objectives.
///
/// `build` receives the initial parameters and must return a scalar loss; it
/// is expected to call [`Tape::grad`] with `create_graph = true` internally so
/// that the dependence of the inner gradients on the parameters is kept.
pub fn higher_order_grad<F>(tape: &Tape, params: &[Var], build: F) -> Result<Vec<Tensor>>
where
    F: FnOnce(&[Var]) -> Result<Var>,
{
    if !tape.grad_enabled() {
        return Err(Error::contract("higher_order_grad on a tape with gradient recording disabled"));
    }
    let outer = build(params)?;
    let grads = tape.grad(&outer, params, false)?;
    Ok(grads.into_iter().map(|g| g.value.as_ref().clone()).collect())
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    /// Same value as a constant on the same tape.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value.as_ref().clone())
    }
}
