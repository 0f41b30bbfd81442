//! 2×2 max pooling, stride 2, floor semantics (7 → 3).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pooled tensor plus, for each output, the flat input index it came from.
/// Ties go to the first maximum in scan order.
pub fn maxpool2d_with_indices<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.nhwc("maxpool2d")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::invalid(
            "maxpool2d",
            format!("input {h}×{w} is smaller than the 2×2 window"),
        ));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut idx = Vec::with_capacity(out.capacity());
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if best == usize::MAX || xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    idx.push(best);
                }
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![oh, ow, c]
    } else {
        vec![n, oh, ow, c]
    };
    Ok((Tensor::new(&shape, out)?, idx))
}

pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2d_with_indices(x).map(|(y, _)| y)
}

pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], indices: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape).into_data();
    for (&i, &g) in indices.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Tensor::new(input_shape, dx)
}
