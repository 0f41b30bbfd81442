//! One forward definition, two executors.
//!
//! Model code is written once against [`Exec`]. [`Eager`] evaluates it
//! directly; [`Tape`](super::Tape) evaluates the same ops while recording
//! them for reverse-mode differentiation.

use super::op::Op;
use crate::error::Result;
use crate::ops::norm::batch_moments;
use crate::ops::{Activation, Padding};
use crate::tensor::{Scalar, Tensor};

pub trait Exec<T: Scalar> {
    type Value: Clone;

    /// A value that never receives gradient.
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;

    /// A named trainable parameter.
    fn param(&mut self, name: &str, t: &Tensor<T>) -> Self::Value;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn apply(&mut self, op: Op<T>, inputs: &[&Self::Value]) -> Result<Self::Value>;

    fn shape(&self, v: &Self::Value) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, stride: usize, padding: Padding) -> Result<Self::Value> {
        self.apply(Op::Conv2d { stride, padding }, &[x, w])
    }

    fn depthwise(&mut self, x: &Self::Value, w: &Self::Value, stride: usize, padding: Padding) -> Result<Self::Value> {
        self.apply(Op::Depthwise { stride, padding }, &[x, w])
    }

    fn pointwise(&mut self, x: &Self::Value, w: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Pointwise, &[x, w])
    }

    fn bias_add(&mut self, x: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::BiasAdd, &[x, b])
    }

    fn maxpool2(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::MaxPool2, &[x])
    }

    fn act(&mut self, kind: Activation, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Act(kind), &[x])
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.act(Activation::Sigmoid, x)
    }

    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.act(Activation::Tanh, x)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Mul, &[a, b])
    }

    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Concat, &[a, b])
    }

    fn gather(&mut self, x: &Self::Value, rows: Vec<usize>) -> Result<Self::Value> {
        self.apply(Op::Gather(rows), &[x])
    }

    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value> {
        self.apply(Op::Reshape(shape.to_vec()), &[x])
    }

    fn batchnorm_infer(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mean: Tensor<T>,
        var: Tensor<T>,
        eps: f64,
    ) -> Result<Self::Value> {
        self.apply(Op::BatchNormInfer { mean, var, eps }, &[x, gamma, beta])
    }

    /// Training-mode batch norm. Also returns the batch mean and variance
    /// for the caller's running-average update.
    fn batchnorm_train(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        eps: f64,
    ) -> Result<(Self::Value, Tensor<T>, Tensor<T>)> {
        let (mean, var) = batch_moments(self.value(x));
        let y = self.apply(Op::BatchNormTrain { eps }, &[x, gamma, beta])?;
        Ok((y, mean, var))
    }

    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Sum, &[x])
    }

    fn mean(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.apply(Op::Mean, &[x])
    }

    fn bce_with_logits(&mut self, logits: &Self::Value, labels: Tensor<T>) -> Result<Self::Value> {
        self.apply(Op::BceWithLogits { labels }, &[logits])
    }
}

/// Plain evaluation, nothing recorded.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Scalar> Exec<T> for Eager {
    type Value = Tensor<T>;

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor<T>) -> Tensor<T> {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn apply(&mut self, op: Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        op.forward(inputs).map(|(y, _)| y)
    }
}
