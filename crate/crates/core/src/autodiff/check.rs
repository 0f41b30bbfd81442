//! Central finite differences and analytic-vs-numeric gradient checks.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec::Exec;
use super::tape::{GradMap, Tape, Var};
use crate::error::Result;
use crate::store::WeightStore;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `(f(p + eps) − f(p − eps)) / (2·eps)` for every coordinate of every
/// trainable entry. Costs two evaluations of `f` per coordinate.
pub fn finite_diff_grad<F>(f: F, params: &WeightStore<f64>, eps: f64) -> Result<GradMap<f64>>
where
    F: Fn(&WeightStore<f64>) -> Result<f64>,
{
    let mut out = GradMap::new();
    let mut probe = params.clone();
    for name in params.trainable_names() {
        let base = params.get(&name)?.clone();
        let mut g = vec![0.0; base.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let (plus, minus) = perturbed(&mut probe, &name, &base, i, eps, &f)?;
            *gi = (plus - minus) / (2.0 * eps);
        }
        probe.set(&name, base.clone())?;
        out.insert(name, Tensor::new(base.shape(), g)?);
    }
    Ok(out)
}

fn perturbed<F>(
    probe: &mut WeightStore<f64>,
    name: &str,
    base: &Tensor<f64>,
    i: usize,
    eps: f64,
    f: &F,
) -> Result<(f64, f64)>
where
    F: Fn(&WeightStore<f64>) -> Result<f64>,
{
    let mut data = base.data().to_vec();
    data[i] = base.data()[i] + eps;
    probe.set(name, Tensor::new(base.shape(), data.clone())?)?;
    let plus = f(probe)?;
    data[i] = base.data()[i] - eps;
    probe.set(name, Tensor::new(base.shape(), data)?)?;
    let minus = f(probe)?;
    Ok((plus, minus))
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared absolutely at `tolerance · floor`.
    pub floor: f64,
    /// A coordinate whose one-sided slopes disagree by more than this
    /// (relative) sits on a kink and is skipped.
    pub kink_tol: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: DEFAULT_EPS,
            tolerance: 1e-4,
            floor: 1e-5,
            kink_tol: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
    pub skipped: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub label: String,
    pub tolerance: f64,
    pub rows: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{}\t{}\tmax_rel_err={:.3e}\tcoords={}\tskipped={}\t{}",
                self.label,
                r.name,
                r.max_rel_err,
                r.coords,
                r.skipped,
                if r.pass { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks the tape's gradients of `build` against finite differences.
///
/// `build` may return a tensor of any shape; it is contracted with a fixed
/// random projection so that every output element contributes to the
/// scalar under test.
pub fn gradcheck<F>(label: &str, build: F, params: &WeightStore<f64>, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &WeightStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = build(&mut tape, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let shape = tape.value(&out).shape().to_vec();
    let proj = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let analytic = tape.backward(out, &proj)?;
    let base_value = contract(&tape, out, &proj);

    let scalar = |p: &WeightStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let o = build(&mut t, p)?;
        Ok(contract(&t, o, &proj))
    };

    let mut rows = Vec::new();
    let mut probe = params.clone();
    for name in params.trainable_names() {
        let base = params.get(&name)?.clone();
        let Some(ga) = analytic.get(&name) else { continue };
        let (mut worst, mut skipped) = (0.0f64, 0);
        for i in 0..base.len() {
            let (plus, minus) = perturbed(&mut probe, &name, &base, i, cfg.eps, &scalar)?;
            let fwd = (plus - base_value) / cfg.eps;
            let bwd = (base_value - minus) / cfg.eps;
            if rel_err(fwd, bwd, cfg.floor.max(1e-3)) > cfg.kink_tol {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            worst = worst.max(rel_err(ga.data()[i], numeric, cfg.floor));
        }
        probe.set(&name, base.clone())?;
        rows.push(ParamCheck {
            pass: worst < cfg.tolerance,
            name,
            max_rel_err: worst,
            coords: base.len(),
            skipped,
        });
    }
    Ok(GradcheckReport {
        label: label.to_string(),
        tolerance: cfg.tolerance,
        rows,
    })
}

fn contract(tape: &Tape<f64>, out: Var, proj: &Tensor<f64>) -> f64 {
    tape.value(&out)
        .data()
        .iter()
        .zip(proj.data())
        .map(|(a, b)| a * b)
        .sum()
}
