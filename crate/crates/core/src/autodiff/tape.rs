//! Wengert-list tape and reverse sweep.

use indexmap::IndexMap;

use super::exec::Exec;
use super::op::{Op, Saved};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Option<Op<T>>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    saved: Saved,
    requires_grad: bool,
    param: Option<String>,
}

/// Nodes are appended in evaluation order, so the list is already a
/// topological order of the graph.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of the loss with respect to each named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMap<T = f32> {
    grads: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> GradMap<T> {
    pub fn new() -> Self {
        GradMap { grads: IndexMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: String, g: Tensor<T>) {
        self.grads.insert(name, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &GradMap<T>) -> Result<()> {
        for (k, g) in &other.grads {
            match self.grads.get_mut(k) {
                Some(acc) => *acc = acc.zip_map(g, "accumulate", |a, b| a + b)?,
                None => {
                    self.grads.insert(k.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.values_mut() {
            *g = g.map(|v| v * c);
        }
    }
}

impl<T: Scalar> Default for GradMap<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the
    /// output). Every parameter registered on the tape gets an entry, zero
    /// if the output does not depend on it.
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<GradMap<T>> {
        let out = &self.nodes[output.0];
        if out.value.shape() != seed.shape() {
            return Err(Error::shape("backward", out.value.shape(), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let dxs = op.backward(&inputs, &node.value, &node.saved, &dy, &needs)?;
            for ((&j, dx), need) in node.inputs.iter().zip(dxs).zip(needs) {
                let (Some(dx), true) = (dx, need) else { continue };
                grads[j] = Some(match grads[j].take() {
                    Some(acc) => acc.zip_map(&dx, "accumulate", |a, b| a + b)?,
                    None => dx,
                });
            }
        }
        let mut map = GradMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let g = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match map.grads.get_mut(name) {
                Some(acc) => *acc = acc.zip_map(&g, "accumulate", |a, b| a + b)?,
                None => {
                    map.grads.insert(name.clone(), g);
                }
            }
        }
        Ok(map)
    }
}

impl<T: Scalar> Exec<T> for Tape<T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value: t,
            saved: Saved::None,
            requires_grad: false,
            param: None,
        })
    }

    fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        self.push(Node {
            op: None,
            inputs: Vec::new(),
            value: t.clone(),
            saved: Saved::None,
            requires_grad: true,
            param: Some(name.to_string()),
        })
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Op<T>, inputs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = op.forward(&values)?;
        let upstream = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if upstream && !op.differentiable() {
            return Err(Error::NonDifferentiable(op.name()));
        }
        let requires_grad = upstream && !matches!(op, Op::StopGradient);
        Ok(self.push(Node {
            op: Some(op),
            inputs: inputs.iter().map(|v| v.0).collect(),
            value,
            saved,
            requires_grad,
            param: None,
        }))
    }
}

/// Runs `f` on a fresh tape, returning the output value and the tape.
pub fn forward_traced<T, F>(f: F) -> Result<(Tensor<T>, Tape<T>, Var)>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok((tape.value(&out).clone(), tape, out))
}
