//! Per-channel batch normalization, inference and training forms.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_param<T: Scalar>(op: &'static str, c: usize, p: &Tensor<T>) -> Result<()> {
    if p.shape() != [c] {
        return Err(Error::shape(op, &[c], p.shape()));
    }
    Ok(())
}

/// `gamma · (x − mean) / sqrt(var + eps) + beta`, per channel.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = x.channels();
    for p in [mean, var, gamma, beta] {
        check_param("batchnorm", c, p)?;
    }
    let (scale, shift): (Vec<T>, Vec<T>) = (0..c)
        .map(|i| {
            let s = gamma.data()[i] / (var.data()[i] + T::of(eps)).sqrt();
            (s, beta.data()[i] - mean.data()[i] * s)
        })
        .unzip();
    let data = x
        .data()
        .chunks(c)
        .flat_map(|px| px.iter().zip(&scale).zip(&shift).map(|((&v, &s), &b)| v * s + b))
        .collect();
    Tensor::new(x.shape(), data)
}

/// Scale applied to the incoming gradient by the inference form.
pub fn batchnorm_infer_backward<T: Scalar>(
    x: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.channels();
    let inv: Vec<T> = var.data().iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
    let mut dx = Vec::with_capacity(x.len());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (px, gpx) in x.data().chunks(c).zip(dy.data().chunks(c)) {
        for i in 0..c {
            let xhat = (px[i] - mean.data()[i]) * inv[i];
            dgamma[i] += gpx[i] * xhat;
            dbeta[i] += gpx[i];
            dx.push(gpx[i] * gamma.data()[i] * inv[i]);
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(&[c], dgamma).expect("shape"),
        Tensor::new(&[c], dbeta).expect("shape"),
    )
}

/// Biased per-channel mean and variance over every axis but the last.
pub fn batch_moments<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let c = x.channels();
    let m = T::of((x.len() / c.max(1)) as f64);
    let mut mean = vec![T::zero(); c];
    for px in x.data().chunks(c) {
        for (a, &v) in mean.iter_mut().zip(px) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / m);
    let mut var = vec![T::zero(); c];
    for px in x.data().chunks(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v = *v / m);
    (
        Tensor::new(&[c], mean).expect("shape"),
        Tensor::new(&[c], var).expect("shape"),
    )
}

/// Training-mode normalization with the batch's own statistics.
pub fn batchnorm_train<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (mean, var) = batch_moments(x);
    batchnorm_infer(x, &mean, &var, gamma, beta, eps)
}

/// Gradients of [`batchnorm_train`] w.r.t. `x`, `gamma`, `beta`.
pub fn batchnorm_train_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.channels();
    let m = T::of((x.len() / c.max(1)) as f64);
    let (mean, var) = batch_moments(x);
    let inv: Vec<T> = var.data().iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
    let xhat: Vec<T> = x
        .data()
        .chunks(c)
        .flat_map(|px| (0..c).map(|i| (px[i] - mean.data()[i]) * inv[i]).collect::<Vec<_>>())
        .collect();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (xh, g) in xhat.chunks(c).zip(dy.data().chunks(c)) {
        for i in 0..c {
            sum_g[i] += g[i];
            sum_gx[i] += g[i] * xh[i];
        }
    }
    let mut dx = Vec::with_capacity(x.len());
    for (xh, g) in xhat.chunks(c).zip(dy.data().chunks(c)) {
        for i in 0..c {
            let k = gamma.data()[i] * inv[i] / m;
            dx.push(k * (m * g[i] - sum_g[i] - xh[i] * sum_gx[i]));
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(&[c], sum_gx).expect("shape"),
        Tensor::new(&[c], sum_g).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_stats_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 3, 2], |i| i as f64 / 7.0 - 1.0);
        let (z, o) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
        let y = batchnorm_infer(&x, &z, &o, &o, &z, 1e-12).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn beta_only() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2], |i| i as f64);
        let beta = Tensor::from_f64(&[2], &[0.25, -3.0]).unwrap();
        let y = batchnorm_infer(
            &x,
            &Tensor::zeros(&[2]),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &beta,
            1e-3,
        )
        .unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.25, -3.0]);
        }
    }

    #[test]
    fn train_mode_normalizes() {
        let x = Tensor::<f64>::from_fn(&[4, 3, 2], |i| ((i * 13) % 7) as f64);
        let y = batchnorm_train(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-9).unwrap();
        let (m, v) = batch_moments(&y);
        assert!(m.data().iter().all(|v| v.abs() < 1e-9));
        assert!(v.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn param_shape_checked() {
        let x = Tensor::<f64>::zeros(&[2, 2, 3]);
        let p = Tensor::zeros(&[2]);
        assert!(batchnorm_infer(&x, &p, &p, &p, &p, 1e-3).is_err());
    }
}
