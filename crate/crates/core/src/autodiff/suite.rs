//! Gradient checks of every differentiable op on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::{gradcheck, GradcheckConfig, GradcheckReport};
use super::exec::Exec;
use super::op::Op;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::ops::{Activation, Padding};
use crate::store::WeightStore;
use crate::tensor::Tensor;

type Build = Box<dyn Fn(&mut Tape<f64>, &WeightStore<f64>) -> Result<Var>>;

struct Case {
    label: String,
    params: WeightStore<f64>,
    build: Build,
}

fn store(inputs: Vec<(&str, Tensor<f64>)>) -> WeightStore<f64> {
    let mut s = WeightStore::default();
    for (name, t) in inputs {
        s.insert(name, t, true).expect("distinct names");
    }
    s
}

fn p(t: &mut Tape<f64>, s: &WeightStore<f64>, name: &str) -> Result<Var> {
    Ok(t.param(name, s.get(name)?))
}

fn unary(label: impl Into<String>, x: Tensor<f64>, op: Op<f64>) -> Case {
    Case {
        label: label.into(),
        params: store(vec![("x", x)]),
        build: Box::new(move |t, s| {
            let x = p(t, s, "x")?;
            t.apply(op.clone(), &[&x])
        }),
    }
}

fn binary(label: impl Into<String>, a: Tensor<f64>, b: Tensor<f64>, op: Op<f64>) -> Case {
    Case {
        label: label.into(),
        params: store(vec![("a", a), ("b", b)]),
        build: Box::new(move |t, s| {
            let a = p(t, s, "a")?;
            let b = p(t, s, "b")?;
            t.apply(op.clone(), &[&a, &b])
        }),
    }
}

/// Names of the cases [`op_suite`] runs, in order.
pub fn op_suite_labels() -> Vec<String> {
    cases(0).into_iter().map(|c| c.label).collect()
}

/// Gradient-checks every differentiable op. `stop_gradient` is left out on
/// purpose: its analytic gradient is zero by definition.
pub fn op_suite(cfg: &GradcheckConfig) -> Result<Vec<GradcheckReport>> {
    cases(cfg.seed)
        .into_iter()
        .map(|c| gradcheck(&c.label, c.build, &c.params, cfg))
        .collect()
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
    let mut out = Vec::new();

    for (stride, padding) in [
        (1, Padding::Same),
        (2, Padding::Same),
        (1, Padding::Valid),
        (2, Padding::Valid),
    ] {
        let tag = format!("s{stride}_{}", if padding == Padding::Same { "same" } else { "valid" });
        out.push(binary(
            format!("conv2d_{tag}"),
            rand(&[2, 5, 6, 3], -1.0, 1.0),
            rand(&[3, 3, 3, 2], -1.0, 1.0),
            Op::Conv2d { stride, padding },
        ));
        out.push(binary(
            format!("depthwise_conv2d_{tag}"),
            rand(&[2, 5, 6, 3], -1.0, 1.0),
            rand(&[3, 3, 3], -1.0, 1.0),
            Op::Depthwise { stride, padding },
        ));
    }
    out.push(binary(
        "pointwise_conv2d",
        rand(&[2, 3, 4, 3], -1.0, 1.0),
        rand(&[3, 5], -1.0, 1.0),
        Op::Pointwise,
    ));
    out.push(binary(
        "dense",
        rand(&[4, 6], -1.0, 1.0),
        rand(&[6, 3], -1.0, 1.0),
        Op::Pointwise,
    ));
    out.push(binary(
        "bias_add",
        rand(&[2, 3, 3, 4], -1.0, 1.0),
        rand(&[4], -1.0, 1.0),
        Op::BiasAdd,
    ));
    out.push(unary("maxpool2d", rand(&[2, 5, 4, 3], -1.0, 1.0), Op::MaxPool2));
    for (act, lo, hi) in [
        (Activation::Sigmoid, -4.0, 4.0),
        (Activation::Tanh, -3.0, 3.0),
        (Activation::LeakyRelu { slope: 0.1 }, -1.0, 1.0),
        (Activation::Relu6, -2.0, 8.0),
    ] {
        out.push(unary(act.name(), rand(&[3, 4, 5], lo, hi), Op::Act(act)));
    }
    out.push(binary(
        "add",
        rand(&[3, 4], -1.0, 1.0),
        rand(&[3, 4], -1.0, 1.0),
        Op::Add,
    ));
    out.push(binary(
        "sub",
        rand(&[3, 4], -1.0, 1.0),
        rand(&[3, 4], -1.0, 1.0),
        Op::Sub,
    ));
    out.push(binary(
        "hadamard",
        rand(&[3, 4], -1.0, 1.0),
        rand(&[3, 4], -1.0, 1.0),
        Op::Mul,
    ));
    out.push(unary("abs", rand(&[3, 4], -1.0, 1.0), Op::Abs));
    out.push(unary("scale", rand(&[3, 4], -1.0, 1.0), Op::Scale(-1.7)));
    out.push(binary(
        "concat_channels",
        rand(&[2, 3, 2], -1.0, 1.0),
        rand(&[2, 3, 4], -1.0, 1.0),
        Op::Concat,
    ));
    out.push(unary(
        "gather",
        rand(&[4, 2, 3], -1.0, 1.0),
        Op::Gather(vec![3, 0, 3, 1]),
    ));
    out.push(unary("reshape", rand(&[2, 3, 4], -1.0, 1.0), Op::Reshape(vec![6, 4])));
    out.push(unary("sum", rand(&[2, 3, 4], -1.0, 1.0), Op::Sum));
    out.push(unary("mean", rand(&[2, 3, 4], -1.0, 1.0), Op::Mean));
    let labels = Tensor::from_f64(&[4, 1], &[1.0, 0.0, 0.0, 1.0]).expect("sized");
    out.push(unary(
        "bce_with_logits",
        rand(&[4, 1], -3.0, 3.0),
        Op::BceWithLogits { labels },
    ));

    let (mean, var) = (rand(&[3], -0.5, 0.5), rand(&[3], 0.5, 2.0));
    for (label, op) in [
        ("batchnorm_infer", Op::BatchNormInfer { mean, var, eps: 1e-3 }),
        ("batchnorm_train", Op::BatchNormTrain { eps: 1e-3 }),
    ] {
        let params = store(vec![
            ("x", rand(&[3, 2, 2, 3], -1.0, 1.0)),
            ("gamma", rand(&[3], 0.5, 1.5)),
            ("beta", rand(&[3], -0.5, 0.5)),
        ]);
        out.push(Case {
            label: label.into(),
            params,
            build: Box::new(move |t, s| {
                let x = p(t, s, "x")?;
                let g = p(t, s, "gamma")?;
                let b = p(t, s, "beta")?;
                t.apply(op.clone(), &[&x, &g, &b])
            }),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        let reports = op_suite(&GradcheckConfig::default()).unwrap();
        for r in &reports {
            assert!(r.pass(), "{r}");
        }
        assert_eq!(reports.len(), op_suite_labels().len());
    }
}
