//! Convolutional LSTM cells: the separable cell and the dense reference.
//!
//! Per gate `g ∈ {i, f, c, o}` the pre-activation is
//! `conv_x(g)(x_t) + conv_h(g)(h_{t−1}) + b_g`, where each `conv` is a
//! depthwise `K×K` filter followed by a `1×1` pointwise mix (separable) or a
//! full `K×K` convolution (dense). Then
//!
//! ```text
//! c_t = σ(f) ⊗ c_{t−1} + σ(i) ⊗ tanh(c̃)
//! h_t = σ(o) ⊗ tanh(c_t)
//! ```
//!
//! Convolutions use `same` zero padding and stride 1. The pointwise kernels
//! carry no bias of their own; the single `b_g` is added after both paths
//! are summed.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Exec};
use crate::error::{Error, Result};
use crate::init::xavier_for;
use crate::ops::Padding;
use crate::store::WeightStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Separable,
    Dense,
}

pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

#[derive(Debug, Clone, PartialEq)]
pub enum GateKernels<W> {
    Separable { dw_x: W, pw_x: W, dw_h: W, pw_h: W },
    Dense { w_x: W, w_h: W },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate<W> {
    pub kernels: GateKernels<W>,
    pub bias: W,
}

/// Kernels and biases of one cell, gates in `i, f, c̃, o` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T = f32> {
    pub kind: CellKind,
    pub k: usize,
    pub c_x: usize,
    pub c_h: usize,
    pub gates: Vec<Gate<Tensor<T>>>,
}

/// Per-gate parameter count, closed form.
pub fn gate_param_count(kind: CellKind, k: usize, c_x: usize, c_h: usize) -> usize {
    match kind {
        CellKind::Separable => k * k * c_x + c_x * c_h + k * k * c_h + c_h * c_h + c_h,
        CellKind::Dense => k * k * c_x * c_h + k * k * c_h * c_h + c_h,
    }
}

pub fn cell_param_count(kind: CellKind, k: usize, c_x: usize, c_h: usize) -> usize {
    4 * gate_param_count(kind, k, c_x, c_h)
}

fn kernel_shapes(kind: CellKind, k: usize, c_x: usize, c_h: usize) -> Vec<(&'static str, Vec<usize>)> {
    match kind {
        CellKind::Separable => vec![
            ("dw_x", vec![k, k, c_x]),
            ("pw_x", vec![c_x, c_h]),
            ("dw_h", vec![k, k, c_h]),
            ("pw_h", vec![c_h, c_h]),
        ],
        CellKind::Dense => vec![("w_x", vec![k, k, c_x, c_h]), ("w_h", vec![k, k, c_h, c_h])],
    }
}

impl<T: Scalar> CellParams<T> {
    /// Xavier-uniform kernels, zero biases.
    pub fn init<R: Rng>(kind: CellKind, k: usize, c_x: usize, c_h: usize, rng: &mut R) -> Self {
        let gates = (0..4)
            .map(|_| {
                let mut ks = kernel_shapes(kind, k, c_x, c_h)
                    .into_iter()
                    .map(|(_, s)| xavier_for(rng, &s));
                let mut next = || ks.next().expect("kernel");
                let kernels = match kind {
                    CellKind::Separable => GateKernels::Separable {
                        dw_x: next(),
                        pw_x: next(),
                        dw_h: next(),
                        pw_h: next(),
                    },
                    CellKind::Dense => GateKernels::Dense {
                        w_x: next(),
                        w_h: next(),
                    },
                };
                Gate {
                    kernels,
                    bias: Tensor::zeros(&[c_h]),
                }
            })
            .collect();
        CellParams {
            kind,
            k,
            c_x,
            c_h,
            gates,
        }
    }

    pub fn zeros(kind: CellKind, k: usize, c_x: usize, c_h: usize) -> Self {
        let mut p = Self::init(kind, k, c_x, c_h, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        p.map_tensors(|t| Tensor::zeros(t.shape()));
        p
    }

    fn map_tensors(&mut self, f: impl Fn(&Tensor<T>) -> Tensor<T>) {
        for g in &mut self.gates {
            match &mut g.kernels {
                GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => {
                    for t in [dw_x, pw_x, dw_h, pw_h] {
                        *t = f(t);
                    }
                }
                GateKernels::Dense { w_x, w_h } => {
                    for t in [w_x, w_h] {
                        *t = f(t);
                    }
                }
            }
            g.bias = f(&g.bias);
        }
    }

    /// `(name, tensor)` pairs under `prefix`, e.g. `cell.frames.i.dw_x`.
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (g, gate) in GATES.iter().zip(&self.gates) {
            match &gate.kernels {
                GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => {
                    for (n, t) in [("dw_x", dw_x), ("pw_x", pw_x), ("dw_h", dw_h), ("pw_h", pw_h)] {
                        out.push((format!("{prefix}.{g}.{n}"), t));
                    }
                }
                GateKernels::Dense { w_x, w_h } => {
                    for (n, t) in [("w_x", w_x), ("w_h", w_h)] {
                        out.push((format!("{prefix}.{g}.{n}"), t));
                    }
                }
            }
            out.push((format!("{prefix}.{g}.bias"), &gate.bias));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named("").iter().map(|(_, t)| t.len()).sum()
    }

    pub fn write_to(&self, store: &mut WeightStore<T>, prefix: &str) -> Result<()> {
        for (name, t) in self.named(prefix) {
            store.insert(name, t.clone(), true)?;
        }
        Ok(())
    }

    pub fn read_from(
        store: &WeightStore<T>,
        prefix: &str,
        kind: CellKind,
        k: usize,
        c_x: usize,
        c_h: usize,
    ) -> Result<Self> {
        let mut p = Self::zeros(kind, k, c_x, c_h);
        let mut missing = Vec::new();
        let mut bad = Vec::new();
        let fetch =
            |name: String, want: &[usize], missing: &mut Vec<String>, bad: &mut Vec<String>| match store.get(&name) {
                Ok(t) if t.shape() == want => Some(t.clone()),
                Ok(t) => {
                    bad.push(format!("{name}: expected {want:?}, got {:?}", t.shape()));
                    None
                }
                Err(_) => {
                    missing.push(name);
                    None
                }
            };
        for (g, gate) in GATES.iter().zip(&mut p.gates) {
            let mut load = |n: &str, t: &mut Tensor<T>| {
                if let Some(v) = fetch(format!("{prefix}.{g}.{n}"), t.shape(), &mut missing, &mut bad) {
                    *t = v;
                }
            };
            match &mut gate.kernels {
                GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => {
                    load("dw_x", dw_x);
                    load("pw_x", pw_x);
                    load("dw_h", dw_h);
                    load("pw_h", pw_h);
                }
                GateKernels::Dense { w_x, w_h } => {
                    load("w_x", w_x);
                    load("w_h", w_h);
                }
            }
            load("bias", &mut gate.bias);
        }
        if !missing.is_empty() {
            return Err(Error::MissingWeights(missing));
        }
        if !bad.is_empty() {
            return Err(Error::WeightMismatch(bad));
        }
        Ok(p)
    }

    /// Registers every tensor with `ex` as a named parameter.
    pub fn register<E: Exec<T>>(&self, ex: &mut E, prefix: &str) -> CellVars<E::Value> {
        let gates = GATES
            .iter()
            .zip(&self.gates)
            .map(|(g, gate)| {
                let mut p = |n: &str, t: &Tensor<T>| ex.param(&format!("{prefix}.{g}.{n}"), t);
                let kernels = match &gate.kernels {
                    GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => GateKernels::Separable {
                        dw_x: p("dw_x", dw_x),
                        pw_x: p("pw_x", pw_x),
                        dw_h: p("dw_h", dw_h),
                        pw_h: p("pw_h", pw_h),
                    },
                    GateKernels::Dense { w_x, w_h } => GateKernels::Dense {
                        w_x: p("w_x", w_x),
                        w_h: p("w_h", w_h),
                    },
                };
                Gate {
                    kernels,
                    bias: p("bias", &gate.bias),
                }
            })
            .collect();
        CellVars {
            c_x: self.c_x,
            c_h: self.c_h,
            gates,
        }
    }
}

/// Cell parameters as executor values.
#[derive(Debug, Clone)]
pub struct CellVars<V> {
    pub c_x: usize,
    pub c_h: usize,
    pub gates: Vec<Gate<V>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T = f32> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> CellState<T> {
    /// Zero state for `H×W×C_h` maps (or `N×H×W×C_h` when `batch` is set).
    pub fn zeros(batch: Option<usize>, h: usize, w: usize, c_h: usize) -> Self {
        let shape: Vec<usize> = match batch {
            Some(n) => vec![n, h, w, c_h],
            None => vec![h, w, c_h],
        };
        CellState {
            h: Tensor::zeros(&shape),
            c: Tensor::zeros(&shape),
        }
    }
}

fn gate_preact<T: Scalar, E: Exec<T>>(
    ex: &mut E,
    gate: &Gate<E::Value>,
    x: &E::Value,
    h: &E::Value,
) -> Result<E::Value> {
    let (from_x, from_h) = match &gate.kernels {
        GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => {
            let a = ex.depthwise(x, dw_x, 1, Padding::Same)?;
            let a = ex.pointwise(&a, pw_x)?;
            let b = ex.depthwise(h, dw_h, 1, Padding::Same)?;
            (a, ex.pointwise(&b, pw_h)?)
        }
        GateKernels::Dense { w_x, w_h } => (
            ex.conv2d(x, w_x, 1, Padding::Same)?,
            ex.conv2d(h, w_h, 1, Padding::Same)?,
        ),
    };
    let s = ex.add(&from_x, &from_h)?;
    ex.bias_add(&s, &gate.bias)
}

fn check_step<T: Scalar>(x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>, c_x: usize, c_h: usize) -> Result<()> {
    let xs = x.shape();
    let hs = h.shape();
    if x.channels() != c_x {
        let mut want = xs.to_vec();
        *want.last_mut().expect("rank") = c_x;
        return Err(Error::shape("cell_step", &want, xs));
    }
    let mut want_h = xs.to_vec();
    *want_h.last_mut().expect("rank") = c_h;
    if hs != want_h.as_slice() {
        return Err(Error::shape("cell_step", &want_h, hs));
    }
    if c.shape() != hs {
        return Err(Error::shape("cell_step", hs, c.shape()));
    }
    Ok(())
}

/// One recurrence step on executor values. Returns `(h_t, c_t)`.
pub fn step_with<T: Scalar, E: Exec<T>>(
    ex: &mut E,
    vars: &CellVars<E::Value>,
    x: &E::Value,
    h: &E::Value,
    c: &E::Value,
) -> Result<(E::Value, E::Value)> {
    check_step(ex.value(x), ex.value(h), ex.value(c), vars.c_x, vars.c_h)?;
    let mut pre = Vec::with_capacity(4);
    for gate in &vars.gates {
        pre.push(gate_preact(ex, gate, x, h)?);
    }
    let i = ex.sigmoid(&pre[0])?;
    let f = ex.sigmoid(&pre[1])?;
    let cand = ex.tanh(&pre[2])?;
    let o = ex.sigmoid(&pre[3])?;
    let keep = ex.mul(&f, c)?;
    let write = ex.mul(&i, &cand)?;
    let c_next = ex.add(&keep, &write)?;
    let tc = ex.tanh(&c_next)?;
    let h_next = ex.mul(&o, &tc)?;
    Ok((h_next, c_next))
}

/// Folds the step over `xs` from `(h0, c0)` and returns the last hidden state.
pub fn unroll_last_with<T: Scalar, E: Exec<T>>(
    ex: &mut E,
    vars: &CellVars<E::Value>,
    xs: &[E::Value],
    h0: E::Value,
    c0: E::Value,
) -> Result<E::Value> {
    if xs.is_empty() {
        return Err(Error::invalid("unroll_last", "empty input sequence"));
    }
    let first = ex.shape(&xs[0]);
    let (mut h, mut c) = (h0, c0);
    for x in xs {
        let s = ex.shape(x);
        if s != first {
            return Err(Error::shape("unroll_last", &first, &s));
        }
        (h, c) = step_with(ex, vars, x, &h, &c)?;
    }
    Ok(h)
}

fn step_eager<T: Scalar>(x: &Tensor<T>, state: &CellState<T>, params: &CellParams<T>) -> Result<CellState<T>> {
    let mut ex = Eager;
    let vars = params.register(&mut ex, "cell");
    let (h, c) = step_with(&mut ex, &vars, x, &state.h, &state.c)?;
    Ok(CellState { h, c })
}

fn expect_kind<T>(params: &CellParams<T>, kind: CellKind, op: &'static str) -> Result<()> {
    if params.kind != kind {
        return Err(Error::invalid(
            op,
            format!("expected {kind:?} cell parameters, got {:?}", params.kind),
        ));
    }
    Ok(())
}

/// One separable-cell step.
pub fn sepconvlstm_step<T: Scalar>(
    x: &Tensor<T>,
    state: &CellState<T>,
    params: &CellParams<T>,
) -> Result<CellState<T>> {
    expect_kind(params, CellKind::Separable, "sepconvlstm_step")?;
    step_eager(x, state, params)
}

/// One dense ConvLSTM step.
pub fn convlstm_step<T: Scalar>(x: &Tensor<T>, state: &CellState<T>, params: &CellParams<T>) -> Result<CellState<T>> {
    expect_kind(params, CellKind::Dense, "convlstm_step")?;
    step_eager(x, state, params)
}

/// Runs the cell over `xs` (zero initial state unless `init` is given) and
/// returns `h_T`.
pub fn unroll_last<T: Scalar>(
    xs: &[Tensor<T>],
    params: &CellParams<T>,
    init: Option<CellState<T>>,
) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("unroll_last", "empty input sequence"))?;
    let init = match init {
        Some(s) => s,
        None => {
            let mut shape = first.shape().to_vec();
            *shape.last_mut().expect("rank") = params.c_h;
            CellState {
                h: Tensor::zeros(&shape),
                c: Tensor::zeros(&shape),
            }
        }
    };
    let mut ex = Eager;
    let vars = params.register(&mut ex, "cell");
    unroll_last_with(&mut ex, &vars, xs, init.h, init.c)
}
