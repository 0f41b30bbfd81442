//! Dense row-major tensors, channels-last.
//!
//! Clips are `T×H×W×C`, feature maps `H×W×C`, and batched feature maps
//! `N×H×W×C`. Every public operation returns a fresh tensor; nothing is
//! mutated in place behind the caller's back.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]. `f32` is the compute type, `f64` is used
/// for gradient verification.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static {
    const NAME: &'static str;

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::invalid(
            "tensor",
            format!("rank must be 1..=4, got shape {shape:?}"),
        ));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "buffer of {} elements does not fill shape {shape:?} ({len})",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Last-axis extent, the channel count in channels-last layout.
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            acc * d + i
        })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Views a rank-3 `H×W×C` or rank-4 `N×H×W×C` tensor as `(n, h, w, c)`.
    pub fn nhwc(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((1, h, w, c)),
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::invalid(
                op,
                format!("expected H×W×C or N×H×W×C, got {:?}", self.shape),
            )),
        }
    }

    /// Slices `count` entries of the leading axis starting at `start`.
    pub fn slice_outer(&self, start: usize, count: usize) -> Result<Self> {
        let outer = self.shape[0];
        if start + count > outer || count == 0 {
            return Err(Error::invalid(
                "slice_outer",
                format!("range {start}..{} outside 0..{outer}", start + count),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..(start + count) * inner].to_vec(),
        })
    }

    /// Stacks equally-shaped tensors along the leading axis. Rank-3 inputs
    /// gain a new leading axis; rank-4 inputs are concatenated.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        if first.rank() < 3 {
            return Err(Error::invalid("stack", "expects rank-3 or rank-4 tensors"));
        }
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        if first.rank() == 4 {
            shape[0] *= parts.len();
        } else {
            shape.insert(0, parts.len());
        }
        Tensor::new(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_must_fill_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::new(&[], vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
    }

    #[test]
    fn stack_and_slice() {
        let a = Tensor::<f32>::full(&[2, 2, 1], 1.0);
        let b = Tensor::<f32>::full(&[2, 2, 1], 2.0);
        let s = Tensor::stack(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 1]);
        assert_eq!(s.slice_outer(0, 1).unwrap().data(), a.data());
    }
}
