//! AMSGrad and the step-decay learning-rate schedule.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::GradMap;
use crate::error::{Error, Result};
use crate::store::WeightStore;
use crate::tensor::{Scalar, Tensor};

/// `base · 0.5^⌊epoch / period⌋`, floored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub lr_floor: f64,
    pub halving_period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 4e-4,
            lr_floor: 5e-5,
            halving_period: 5,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > self.lr_floor && self.lr_floor > 0.0) || self.halving_period == 0 {
            return Err(Error::invalid(
                "lr_schedule",
                format!("need base_lr > lr_floor > 0 and a nonzero period, got {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.halving_period).min(1074) as i32;
        (self.base_lr * 0.5f64.powi(halvings)).max(self.lr_floor)
    }
}

/// Learning rate for `epoch` under `cfg`'s schedule.
pub fn lr_at_epoch(epoch: usize, schedule: &LrSchedule) -> f64 {
    schedule.at(epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmsgradConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsgradConfig {
    fn default() -> Self {
        AmsgradConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub v_hat: Tensor<T>,
}

/// Optimizer state, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T = f32> {
    pub cfg: AmsgradConfig,
    pub step: u64,
    pub moments: IndexMap<String, Moments<T>>,
}

impl<T: Scalar> OptState<T> {
    pub fn new(cfg: AmsgradConfig) -> Self {
        OptState {
            cfg,
            step: 0,
            moments: IndexMap::new(),
        }
    }
}

/// One AMSGrad update of every trainable parameter that has a gradient:
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// v ← β2·v + (1−β2)·g²
/// v̂ ← max(v̂, v)
/// p ← p − lr · (m / (1 − β1^t)) / (√v̂ + eps)
/// ```
pub fn amsgrad_step<T: Scalar>(
    params: &mut WeightStore<T>,
    grads: &GradMap<T>,
    state: &mut OptState<T>,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let AmsgradConfig { beta1, beta2, eps } = state.cfg;
    let (b1, b2, e) = (T::of(beta1), T::of(beta2), T::of(eps));
    let correction = T::of(1.0 - beta1.powi(state.step.min(i32::MAX as u64) as i32));
    let lr = T::of(lr);
    for name in params.trainable_names() {
        let Some(g) = grads.get(&name) else { continue };
        let p = params.get(&name)?;
        if g.shape() != p.shape() {
            return Err(Error::shape("amsgrad_step", p.shape(), g.shape()));
        }
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(p.shape()),
            v: Tensor::zeros(p.shape()),
            v_hat: Tensor::zeros(p.shape()),
        });
        let n = p.len();
        let (mut m, mut v, mut vh) = (mom.m.data().to_vec(), mom.v.data().to_vec(), mom.v_hat.data().to_vec());
        let mut out = p.data().to_vec();
        for i in 0..n {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            vh[i] = vh[i].max(v[i]);
            out[i] -= lr * (m[i] / correction) / (vh[i].sqrt() + e);
        }
        let shape = p.shape().to_vec();
        *mom = Moments {
            m: Tensor::new(&shape, m)?,
            v: Tensor::new(&shape, v)?,
            v_hat: Tensor::new(&shape, vh)?,
        };
        params.set(&name, Tensor::new(&shape, out)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> WeightStore<f64> {
        let mut s = WeightStore::default();
        s.insert("w", Tensor::full(&[3], v), true).unwrap();
        s
    }

    fn grad(v: &[f64]) -> GradMap<f64> {
        let mut g = GradMap::new();
        g.insert("w".into(), Tensor::from_f64(&[3], v).unwrap());
        g
    }

    #[test]
    fn schedule_points() {
        let s = LrSchedule::default();
        assert_eq!(lr_at_epoch(0, &s), 4e-4);
        assert_eq!(lr_at_epoch(4, &s), 4e-4);
        assert_eq!(lr_at_epoch(5, &s), 2e-4);
        assert_eq!(lr_at_epoch(10, &s), 1e-4);
        assert_eq!(lr_at_epoch(15, &s), 5e-5);
        assert_eq!(lr_at_epoch(1000, &s), 5e-5);
        assert_eq!(lr_at_epoch(usize::MAX, &s), 5e-5);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one_param(1.5);
        let mut st = OptState::new(AmsgradConfig::default());
        amsgrad_step(&mut p, &grad(&[0.0; 3]), &mut st, 1e-3).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5; 3]);
        assert!(st.moments["w"].v_hat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = (1−β2)·g², so the step is lr·g/(√(1−β2)|g| + eps).
        let mut p = one_param(0.0);
        let mut st = OptState::new(AmsgradConfig::default());
        amsgrad_step(&mut p, &grad(&[2.0, -0.5, 1e-3]), &mut st, 0.01).unwrap();
        let w = p.get("w").unwrap().data().to_vec();
        let expect = |g: f64| -0.01 * g / ((0.001f64).sqrt() * g.abs() + 1e-7);
        for (got, g) in w.iter().zip([2.0, -0.5, 1e-3]) {
            assert!((got - expect(g)).abs() < 1e-12, "{got} vs {}", expect(g));
        }
        assert!(w[0] < 0.0 && w[1] > 0.0);
    }
}
