//! The closed set of graph operations and their forward/backward rules.

use crate::error::{Error, Result};
use crate::ops::conv::{
    bias_add, bias_grad, conv2d_backward, conv2d_raw, depthwise_backward, depthwise_raw, pointwise_backward,
    pointwise_raw,
};
use crate::ops::elementwise::{activate, activation_backward, concat_channels, sigmoid, split_channels, Activation};
use crate::ops::norm::{batchnorm_infer, batchnorm_infer_backward, batchnorm_train, batchnorm_train_backward};
use crate::ops::pool::{maxpool2d_backward, maxpool2d_with_indices};
use crate::ops::Padding;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub enum Op<T> {
    /// `[x, w]`, w is `K×K×C_in×C_out`.
    Conv2d {
        stride: usize,
        padding: Padding,
    },
    /// `[x, w]`, w is `K×K×C`.
    Depthwise {
        stride: usize,
        padding: Padding,
    },
    /// `[x, w]`, w is `C_in×C_out`; also serves as the dense-layer matmul.
    Pointwise,
    /// `[x, b]`
    BiasAdd,
    MaxPool2,
    Act(Activation),
    Add,
    Sub,
    Mul,
    Abs,
    Scale(f64),
    /// `[a, b]` along the last axis.
    Concat,
    /// Picks entries of the leading axis.
    Gather(Vec<usize>),
    Reshape(Vec<usize>),
    /// `[x, gamma, beta]` with fixed statistics.
    BatchNormInfer {
        mean: Tensor<T>,
        var: Tensor<T>,
        eps: f64,
    },
    /// `[x, gamma, beta]` with the batch's statistics.
    BatchNormTrain {
        eps: f64,
    },
    Sum,
    Mean,
    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
    BceWithLogits {
        labels: Tensor<T>,
    },
    StopGradient,
    /// Heaviside step `x >= 0`. Not differentiable.
    Step,
}

/// Forward-pass byproducts some backward rules need.
#[derive(Debug, Clone, Default)]
pub enum Saved {
    #[default]
    None,
    Indices(Vec<usize>),
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::Pointwise => "pointwise_conv2d",
            Op::BiasAdd => "bias_add",
            Op::MaxPool2 => "maxpool2d",
            Op::Act(a) => a.name(),
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "hadamard",
            Op::Abs => "abs",
            Op::Scale(_) => "scale",
            Op::Concat => "concat_channels",
            Op::Gather(_) => "gather",
            Op::Reshape(_) => "reshape",
            Op::BatchNormInfer { .. } => "batchnorm_infer",
            Op::BatchNormTrain { .. } => "batchnorm_train",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::StopGradient => "stop_gradient",
            Op::Step => "step",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Conv2d { .. }
            | Op::Depthwise { .. }
            | Op::Pointwise
            | Op::BiasAdd
            | Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Concat => 2,
            Op::BatchNormInfer { .. } | Op::BatchNormTrain { .. } => 3,
            _ => 1,
        }
    }

    pub fn differentiable(&self) -> bool {
        !matches!(self, Op::Step)
    }

    pub fn forward(&self, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Saved)> {
        if inputs.len() != self.arity() {
            return Err(Error::invalid(
                self.name(),
                format!("expected {} inputs, got {}", self.arity(), inputs.len()),
            ));
        }
        let x = inputs[0];
        let out = match self {
            Op::Conv2d { stride, padding } => conv2d_raw(x, inputs[1], *stride, *padding)?,
            Op::Depthwise { stride, padding } => depthwise_raw(x, inputs[1], *stride, *padding)?,
            Op::Pointwise => pointwise_raw(x, inputs[1])?,
            Op::BiasAdd => bias_add(x, inputs[1])?,
            Op::MaxPool2 => {
                let (y, idx) = maxpool2d_with_indices(x)?;
                return Ok((y, Saved::Indices(idx)));
            }
            Op::Act(kind) => x.map(|v| activate(*kind, v)),
            Op::Add => x.zip_map(inputs[1], "add", |a, b| a + b)?,
            Op::Sub => x.zip_map(inputs[1], "sub", |a, b| a - b)?,
            Op::Mul => x.zip_map(inputs[1], "hadamard", |a, b| a * b)?,
            Op::Abs => x.map(|v| v.abs()),
            Op::Scale(c) => {
                let c = T::of(*c);
                x.map(|v| v * c)
            }
            Op::Concat => concat_channels(x, inputs[1])?,
            Op::Gather(rows) => gather(x, rows)?,
            Op::Reshape(shape) => x.reshape(shape)?,
            Op::BatchNormInfer { mean, var, eps } => batchnorm_infer(x, mean, var, inputs[1], inputs[2], *eps)?,
            Op::BatchNormTrain { eps } => batchnorm_train(x, inputs[1], inputs[2], *eps)?,
            Op::Sum => Tensor::scalar(x.sum()),
            Op::Mean => Tensor::scalar(x.sum() / T::of(x.len() as f64)),
            Op::BceWithLogits { labels } => {
                if labels.len() != x.len() {
                    return Err(Error::shape("bce_with_logits", x.shape(), labels.shape()));
                }
                let total: T = x.data().iter().zip(labels.data()).map(|(&z, &y)| bce_logit(z, y)).sum();
                Tensor::scalar(total / T::of(x.len() as f64))
            }
            Op::StopGradient => x.clone(),
            Op::Step => x.map(|v| if v >= T::zero() { T::one() } else { T::zero() }),
        };
        Ok((out, Saved::None))
    }

    /// Input gradients given the output gradient `dy`. Entries are `None`
    /// where `needs[i]` is false.
    pub fn backward(
        &self,
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        saved: &Saved,
        dy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let one = |t: Tensor<T>| Ok(vec![Some(t)]);
        match self {
            Op::Conv2d { stride, padding } => {
                let (dx, dw) = conv2d_backward(x, inputs[1], dy, *stride, *padding)?;
                Ok(vec![Some(dx), Some(dw)])
            }
            Op::Depthwise { stride, padding } => {
                let (dx, dw) = depthwise_backward(x, inputs[1], dy, *stride, *padding)?;
                Ok(vec![Some(dx), Some(dw)])
            }
            Op::Pointwise => {
                let (dx, dw) = pointwise_backward(x, inputs[1], dy)?;
                Ok(vec![Some(dx), Some(dw)])
            }
            Op::BiasAdd => Ok(vec![Some(dy.clone()), needs[1].then(|| bias_grad(dy))]),
            Op::MaxPool2 => match saved {
                Saved::Indices(idx) => one(maxpool2d_backward(x.shape(), idx, dy)?),
                Saved::None => Err(Error::invalid("maxpool2d", "missing saved indices")),
            },
            Op::Act(kind) => one(activation_backward(*kind, x, out, dy)),
            Op::Add => Ok(vec![Some(dy.clone()), Some(dy.clone())]),
            Op::Sub => Ok(vec![Some(dy.clone()), Some(dy.map(|v| -v))]),
            Op::Mul => Ok(vec![
                needs[0]
                    .then(|| dy.zip_map(inputs[1], "hadamard", |g, b| g * b))
                    .transpose()?,
                needs[1].then(|| dy.zip_map(x, "hadamard", |g, a| g * a)).transpose()?,
            ]),
            // d|x|/dx taken as 0 at x = 0
            Op::Abs => one(x.zip_map(dy, "abs", |v, g| {
                if v > T::zero() {
                    g
                } else if v < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })?),
            Op::Scale(c) => {
                let c = T::of(*c);
                one(dy.map(|g| g * c))
            }
            Op::Concat => {
                let (a, b) = split_channels(dy, x.channels())?;
                Ok(vec![Some(a), Some(b)])
            }
            Op::Gather(rows) => one(scatter(x.shape(), rows, dy)?),
            Op::Reshape(_) => one(dy.reshape(x.shape())?),
            Op::BatchNormInfer { mean, var, eps } => {
                let (dx, dg, db) = batchnorm_infer_backward(x, mean, var, inputs[1], dy, *eps);
                Ok(vec![Some(dx), Some(dg), Some(db)])
            }
            Op::BatchNormTrain { eps } => {
                let (dx, dg, db) = batchnorm_train_backward(x, inputs[1], dy, *eps);
                Ok(vec![Some(dx), Some(dg), Some(db)])
            }
            Op::Sum => one(Tensor::full(x.shape(), dy.item())),
            Op::Mean => one(Tensor::full(x.shape(), dy.item() / T::of(x.len() as f64))),
            Op::BceWithLogits { labels } => {
                let scale = dy.item() / T::of(x.len() as f64);
                let g = x
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                one(Tensor::new(x.shape(), g)?)
            }
            Op::StopGradient => Ok(vec![None]),
            Op::Step => Err(Error::NonDifferentiable("step")),
        }
    }
}

/// `−[y·log σ(z) + (1−y)·log(1−σ(z))]` in the overflow-free form
/// `max(z, 0) − z·y + log(1 + e^{−|z|})`.
pub fn bce_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

fn gather<T: Scalar>(x: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let outer = x.shape()[0];
    let inner = x.len() / outer.max(1);
    let mut data = Vec::with_capacity(rows.len() * inner);
    for &r in rows {
        if r >= outer {
            return Err(Error::invalid("gather", format!("row {r} out of 0..{outer}")));
        }
        data.extend_from_slice(&x.data()[r * inner..(r + 1) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(&shape, data)
}

fn scatter<T: Scalar>(shape: &[usize], rows: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::<T>::zeros(shape).into_data();
    let inner = dx.len() / shape[0].max(1);
    for (j, &r) in rows.iter().enumerate() {
        for (d, &g) in dx[r * inner..(r + 1) * inner]
            .iter_mut()
            .zip(&dy.data()[j * inner..(j + 1) * inner])
        {
            *d += g;
        }
    }
    Tensor::new(shape, dx)
}
