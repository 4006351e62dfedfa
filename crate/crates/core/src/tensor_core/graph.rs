//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value, its parent handles and a
//! closure computing vector-Jacobian products. Node ids are allocated in execution order,
//! so parents always precede children and the reverse id order is a valid topological
//! order for the backward sweep.

use std::fmt;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.0)
    }
}

/// Inputs handed to a backward closure.
pub(crate) struct BackwardCtx<'a> {
    /// Gradient of the scalar objective with respect to this node's output.
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    /// Whether each parent needs a gradient; closures may skip work when false.
    pub needs: Vec<bool>,
}

/// Returns one entry per parent; `None` means "no contribution".
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    is_leaf: bool,
    /// Input value at which a piecewise op switches branches.
    breakpoint: Option<f64>,
}

/// Recording of a forward computation.
///
/// A graph is single-threaded and append-only; build a fresh one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_source("leaf", value, true)
    }

    /// Registers a tensor that is held fixed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_source("constant", value, false)
    }

    fn push_source(&mut self, op: &'static str, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            is_leaf: true,
            breakpoint: None,
        });
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Smallest distance between the input of a piecewise op on the tape and its
    /// breakpoint, or infinity if there is none. A finite-difference step larger than this
    /// can straddle a kink.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| {
                let at = n.breakpoint?;
                let input = &self.nodes[n.parents[0].0].value;
                Some(input.data().iter().fold(f64::INFINITY, |m, &x| m.min((x - at).abs())))
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn mark_breakpoint(&mut self, v: Var, at: f64) {
        self.nodes[v.0].breakpoint = Some(at);
    }

    /// Appends an operation node. Rejects non-finite outputs.
    pub(crate) fn record(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.to_string() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            is_leaf: false,
            breakpoint: None,
        });
        Ok(Var(id))
    }

    /// Reverse sweep from a single-element output.
    ///
    /// Contributions from every path are summed. Leaves the output does not depend on
    /// receive zero gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "output must be a single element, got shape {}",
                    out.value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(out.value.shape()));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if node.is_leaf || !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.value,
                inputs: node.parents.iter().map(|p| self.value(*p)).collect(),
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    self.shape(*parent),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut leaves = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves.push((Var(id), g));
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradients of a scalar objective with respect to every leaf of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` if `leaf` is not a gradient-tracking leaf.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.leaves
            .binary_search_by_key(&leaf, |(v, _)| *v)
            .ok()
            .map(|i| &self.leaves[i].1)
    }

    /// Gradient for `leaf`; panics if `leaf` is not a gradient-tracking leaf.
    pub fn wrt(&self, leaf: Var) -> &Tensor {
        self.get(leaf)
            .unwrap_or_else(|| panic!("{leaf:?} is not a gradient-tracking leaf"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.leaves.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn sum_has_unit_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, -2.0, 3.0]));
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient_is_twice_x() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.5, -2.0, 0.25]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn diamond_graph_sums_paths() {
        // f(x) = sum((x + x) * x) -> 4x
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, -0.5, 2.0]));
        let d = g.add(x, x).unwrap();
        let p = g.mul(d, x).unwrap();
        let s = g.sum_all(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[4.0, -2.0, 8.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zeros() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, 2.0]));
        let y = g.leaf(t(&[5.0, 6.0, 7.0]));
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(y).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1.0, 2.0]));
        let err = g.backward(x).unwrap_err();
        assert!(err.to_string().contains("single element"));
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = Graph::new();
        let c = g.constant(t(&[3.0]));
        let x = g.leaf(t(&[2.0]));
        let p = g.mul(c, x).unwrap();
        let grads = g.backward(p).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x).data(), &[3.0]);
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[-1.0]));
        let err = g.ln(x).unwrap_err();
        assert!(err.is_numerical());
    }
}
