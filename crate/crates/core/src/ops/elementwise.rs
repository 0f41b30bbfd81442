//! Activations, elementwise algebra and channel concatenation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Sigmoid,
    Tanh,
    LeakyRelu { slope: f64 },
    Relu6,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Relu6 => "relu6",
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn activate<T: Scalar>(kind: Activation, v: T) -> T {
    match kind {
        Activation::Sigmoid => sigmoid(v),
        Activation::Tanh => v.tanh(),
        Activation::LeakyRelu { slope } => {
            if v > T::zero() {
                v
            } else {
                v * T::of(slope)
            }
        }
        Activation::Relu6 => v.max(T::zero()).min(T::of(6.0)),
    }
}

/// Derivative given the pre-activation `x` and the output `y`.
/// leaky_relu at exactly 0 takes the negative-side slope; relu6 has zero
/// derivative at both kinks.
pub fn activate_grad<T: Scalar>(kind: Activation, x: T, y: T) -> T {
    match kind {
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Tanh => T::one() - y * y,
        Activation::LeakyRelu { slope } => {
            if x > T::zero() {
                T::one()
            } else {
                T::of(slope)
            }
        }
        Activation::Relu6 => {
            if x > T::zero() && x < T::of(6.0) {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

pub fn activation<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| activate(kind, v))
}

pub fn activation_backward<T: Scalar>(kind: Activation, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xv, &yv), &g)| g * activate_grad(kind, xv, yv))
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
    Abs,
}

pub fn elementwise<T: Scalar>(kind: Elementwise, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let binary = |f: fn(T, T) -> T, op| {
        let b = b.ok_or_else(|| Error::invalid(op, "binary op needs two operands"))?;
        a.zip_map(b, op, f)
    };
    match kind {
        Elementwise::Add => binary(|x, y| x + y, "add"),
        Elementwise::Sub => binary(|x, y| x - y, "sub"),
        Elementwise::Hadamard => binary(|x, y| x * y, "hadamard"),
        Elementwise::Abs => match b {
            None => Ok(a.map(|v| v.abs())),
            Some(_) => Err(Error::invalid("abs", "abs takes one operand")),
        },
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Add, a, Some(b))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Sub, a, Some(b))
}

pub fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Hadamard, a, Some(b))
}

/// Concatenates along the last (channel) axis. Leading axes must agree.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(Error::shape("concat_channels", sa, sb));
    }
    let (c1, c2) = (a.channels(), b.channels());
    let pixels = a.len().checked_div(c1).unwrap_or_else(|| b.len() / c2.max(1));
    let mut data = Vec::with_capacity(a.len() + b.len());
    for p in 0..pixels {
        data.extend_from_slice(&a.data()[p * c1..(p + 1) * c1]);
        data.extend_from_slice(&b.data()[p * c2..(p + 1) * c2]);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().expect("rank >= 1") = c1 + c2;
    Tensor::new(&shape, data)
}

/// Inverse of [`concat_channels`]: the first `c1` channels and the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c1: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = x.channels();
    if c1 > c {
        return Err(Error::invalid("split_channels", format!("split {c1} > channels {c}")));
    }
    let c2 = c - c1;
    let mut a = Vec::with_capacity(x.len() / c.max(1) * c1);
    let mut b = Vec::with_capacity(x.len() / c.max(1) * c2);
    for px in x.data().chunks(c.max(1)) {
        a.extend_from_slice(&px[..c1]);
        b.extend_from_slice(&px[c1..]);
    }
    let mut sa = x.shape().to_vec();
    let mut sb = sa.clone();
    *sa.last_mut().expect("rank") = c1;
    *sb.last_mut().expect("rank") = c2;
    Ok((Tensor::new(&sa, a)?, Tensor::new(&sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(activate(Activation::Sigmoid, 0.0f64), 0.5);
        assert_eq!(activate(Activation::Tanh, 0.0f64), 0.0);
        assert!((activate(Activation::LeakyRelu { slope: 0.1 }, -1.0f64) + 0.1).abs() < 1e-15);
        assert_eq!(activate(Activation::Relu6, 7.5f64), 6.0);
        assert_eq!(activate(Activation::Relu6, -2.0f64), 0.0);
        // no overflow in the tails
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }

    #[test]
    fn kink_conventions() {
        assert_eq!(activate_grad(Activation::LeakyRelu { slope: 0.1 }, 0.0f64, 0.0), 0.1);
        assert_eq!(activate_grad(Activation::Relu6, 0.0f64, 0.0), 0.0);
        assert_eq!(activate_grad(Activation::Relu6, 6.0f64, 6.0), 0.0);
    }

    #[test]
    fn hadamard_ones_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 - 2.0);
        assert_eq!(hadamard(&x, &Tensor::ones(&[3, 2])).unwrap(), x);
        assert!(hadamard(&x, &Tensor::ones(&[2, 3])).is_err());
        assert!(elementwise(Elementwise::Abs, &x, Some(&x)).is_err());
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f32>::zeros(&[3, 3, 64]);
        let b = Tensor::<f32>::ones(&[3, 3, 64]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 3, 128]);
        assert!(concat_channels(&a, &Tensor::zeros(&[2, 3, 64])).is_err());
    }

    #[test]
    fn concat_with_empty_channels_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64);
        let empty = Tensor::<f64>::zeros(&[2, 2, 0]);
        assert_eq!(concat_channels(&x, &empty).unwrap(), x);
        assert_eq!(concat_channels(&empty, &x).unwrap(), x);
    }
}
