//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sclstm_core::autodiff::{op_suite, GradcheckConfig};
use sclstm_core::cells::{cell_param_count, convlstm_step, sepconvlstm_step, CellParams, CellState, GateKernels};
use sclstm_core::efficiency::{count_flops_cfg, count_params, separable_block_cost, standard_block_cost, Convention};
use sclstm_core::io::{read_clp1, read_sclw, sclw_bytes, write_clp1, write_sclw};
use sclstm_core::model::{closed_form_params, gradcheck_model};
use sclstm_core::ops::{conv2d_reference, expand_separable, separable_conv2d, set_deterministic, ConvKernel, Padding};
use sclstm_core::preproc::{frame_difference_of, prepare_streams, PrepMode};
use sclstm_core::train::{evaluate, fit, lr_at_epoch, make_synth, LrSchedule};
use sclstm_core::{build_model, CellKind, Clip, Fusion, ModelConfig, PrepConfig, StreamSet, Tensor, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let gc = GradcheckConfig::default();
    let mut reports = op_suite(&gc).map_err(|e| e.to_string())?;
    for fusion in [Fusion::M, Fusion::C, Fusion::A] {
        reports.push(gradcheck_model(ModelConfig::gradcheck(fusion), 7, &gc).map_err(|e| e.to_string())?);
    }
    let mut dense = ModelConfig::gradcheck(Fusion::M);
    dense.lstm_kind = CellKind::Dense;
    reports.push(gradcheck_model(dense, 7, &gc).map_err(|e| e.to_string())?);

    let failed: Vec<_> = reports.iter().filter(|r| !r.pass()).map(|r| r.label.clone()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    let coords: usize = reports.iter().flat_map(|r| &r.rows).map(|r| r.coords).sum();
    let skipped: usize = reports.iter().flat_map(|r| &r.rows).map(|r| r.skipped).sum();
    // A kink skip-list that swallows more than 1% of coordinates would hide bugs.
    check(
        failed.is_empty() && skipped * 100 <= coords,
        format!(
            "{} checks, max rel err {worst:.2e} < 1e-4, kink-skipped {skipped}/{coords}{}",
            reports.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {failed:?}")
            }
        ),
    )
}

fn separable_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cases = 150;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let padding = if rng.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let (n, h, w) = (
            rng.random_range(1..=2),
            rng.random_range(k..k + 8),
            rng.random_range(k..k + 8),
        );
        let (c_in, c_out) = (rng.random_range(1..=6), rng.random_range(1..=7));
        let mut r = |shape: &[usize]| Tensor::<f32>::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let x = r(&[n, h, w, c_in]);
        let dw = r(&[k, k, c_in]);
        let pw = r(&[c_in, c_out]);
        let fast = separable_conv2d(
            &x,
            &ConvKernel::depthwise(dw.clone(), stride, padding),
            &ConvKernel::pointwise(pw.clone()),
        )
        .map_err(|e| e.to_string())?;
        // Oracle: direct dense convolution, in f64, with the expanded kernel.
        let full = expand_separable(&dw.cast::<f64>(), &pw.cast::<f64>()).map_err(|e| e.to_string())?;
        let oracle = conv2d_reference(&x.cast::<f64>(), &full, stride, padding).map_err(|e| e.to_string())?;
        if fast.shape() != oracle.shape() {
            return Err(format!("shape {:?} vs {:?}", fast.shape(), oracle.shape()));
        }
        worst = worst.max(fast.cast::<f64>().max_abs_diff(&oracle));
    }
    check(
        worst < 1e-5,
        format!("{cases} random cases, max abs err {worst:.2e} < 1e-5"),
    )
}

/// One SepConvLSTM step written as plain loops over a single `H×W` map.
fn scalar_cell_step(p: &CellParams<f64>, x: &Tensor<f64>, h: &Tensor<f64>, c: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (hh, ww) = (s[0], s[1]);
    let (k, cx, ch) = (p.k, p.c_x, p.c_h);
    let r = (k / 2) as isize;
    let sep = |inp: &Tensor<f64>, dw: &Tensor<f64>, pw: &Tensor<f64>, cin: usize, y: usize, xx: usize, n: usize| {
        let mut acc = 0.0;
        for ci in 0..cin {
            let mut d = 0.0;
            for i in 0..k {
                for j in 0..k {
                    let (yy, xj) = (y as isize + i as isize - r, xx as isize + j as isize - r);
                    if yy >= 0 && xj >= 0 && (yy as usize) < hh && (xj as usize) < ww {
                        d += dw.at(&[i, j, ci]) * inp.at(&[yy as usize, xj as usize, ci]);
                    }
                }
            }
            acc += pw.at(&[ci, n]) * d;
        }
        acc
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut h_out, mut c_out) = (Vec::new(), Vec::new());
    for y in 0..hh {
        for xx in 0..ww {
            for n in 0..ch {
                let pre: Vec<f64> = p
                    .gates
                    .iter()
                    .map(|g| match &g.kernels {
                        GateKernels::Separable { dw_x, pw_x, dw_h, pw_h } => {
                            sep(x, dw_x, pw_x, cx, y, xx, n) + sep(h, dw_h, pw_h, ch, y, xx, n) + g.bias.at(&[n])
                        }
                        GateKernels::Dense { .. } => unreachable!(),
                    })
                    .collect();
                let (i, f, g, o) = (sig(pre[0]), sig(pre[1]), pre[2].tanh(), sig(pre[3]));
                let cn = f * c.at(&[y, xx, n]) + i * g;
                c_out.push(cn);
                h_out.push(o * cn.tanh());
            }
        }
    }
    (h_out, c_out)
}

fn cell_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let cases = 40;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (hh, ww) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (cx, ch) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mut p = CellParams::<f64>::init(CellKind::Separable, k, cx, ch, &mut rng);
        for g in &mut p.gates {
            g.bias = Tensor::from_fn(&[ch], |_| rng.random_range(-0.5..0.5));
        }
        let x = Tensor::from_fn(&[hh, ww, cx], |_| rng.random_range(-1.0..1.0));
        let state = CellState {
            h: Tensor::from_fn(&[hh, ww, ch], |_| rng.random_range(-1.0..1.0)),
            c: Tensor::from_fn(&[hh, ww, ch], |_| rng.random_range(-2.0..2.0)),
        };
        let got = sepconvlstm_step(&x, &state, &p).map_err(|e| e.to_string())?;
        let (h, c) = scalar_cell_step(&p, &x, &state.h, &state.c);
        for (a, b) in got.h.data().iter().zip(&h).chain(got.c.data().iter().zip(&c)) {
            worst = worst.max((a - b).abs());
        }
    }

    // Delta depthwise kernels turn the separable cell into a 1×1 dense cell.
    let mut exact = true;
    for case in 0..20 {
        let (cx, ch) = (1 + case % 4, 1 + case % 3);
        let sep = CellParams::<f64>::init(CellKind::Separable, 3, cx, ch, &mut rng);
        let mut delta = sep.clone();
        let mut dense = CellParams::<f64>::zeros(CellKind::Dense, 1, cx, ch);
        let centre = |c: usize| Tensor::from_fn(&[3, 3, c], |i| if i / c == 4 { 1.0 } else { 0.0 });
        for (gd, gs) in delta.gates.iter_mut().zip(dense.gates.iter_mut()) {
            gd.bias = Tensor::from_fn(&[ch], |_| rng.random_range(-0.5..0.5));
            gs.bias = gd.bias.clone();
            if let (GateKernels::Separable { dw_x, pw_x, dw_h, pw_h }, GateKernels::Dense { w_x, w_h }) =
                (&mut gd.kernels, &mut gs.kernels)
            {
                *dw_x = centre(cx);
                *dw_h = centre(ch);
                *w_x = pw_x.reshape(&[1, 1, cx, ch]).expect("same size");
                *w_h = pw_h.reshape(&[1, 1, ch, ch]).expect("same size");
            }
        }
        let x = Tensor::from_fn(&[2, 4, 5, cx], |_| rng.random_range(-1.0..1.0));
        let state = CellState {
            h: Tensor::from_fn(&[2, 4, 5, ch], |_| rng.random_range(-1.0..1.0)),
            c: Tensor::from_fn(&[2, 4, 5, ch], |_| rng.random_range(-1.0..1.0)),
        };
        let a = sepconvlstm_step(&x, &state, &delta).map_err(|e| e.to_string())?;
        let b = convlstm_step(&x, &state, &dense).map_err(|e| e.to_string())?;
        exact &= a.h == b.h && a.c == b.c;
    }
    check(
        worst < 1e-10 && exact,
        format!("{cases} cases vs scalar loops, max abs err {worst:.2e} < 1e-10; delta-kernel cell equals 1×1 ConvLSTM exactly: {exact}"),
    )
}

fn parameter_counts() -> Outcome {
    use CellKind::{Dense, Separable};
    use StreamSet::{Both, DiffOnly};
    let rows = [
        (
            "one-stream",
            ModelConfig::reference(Fusion::M, DiffOnly, Separable),
            185_521,
        ),
        (
            "two-stream C",
            ModelConfig::reference(Fusion::C, Both, Separable),
            371_009,
        ),
        (
            "two-stream M",
            ModelConfig::reference(Fusion::M, Both, Separable),
            333_057,
        ),
        (
            "two-stream A",
            ModelConfig::reference(Fusion::A, Both, Separable),
            333_057,
        ),
        ("ConvLSTM M", ModelConfig::reference(Fusion::M, Both, Dense), 815_937),
        ("ConvLSTM C", ModelConfig::reference(Fusion::C, Both, Dense), 853_889),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    let mut totals = Vec::new();
    for (name, cfg, paper) in rows {
        let m = build_model(cfg.clone(), 0).map_err(|e| e.to_string())?;
        let built = m.param_count();
        let dev = built as f64 / paper as f64 - 1.0;
        ok &= dev.abs() <= 0.10;
        // Closed form per module, and per-layer tally from the store, must be exact.
        let closed = closed_form_params(&cfg).map_err(|e| e.to_string())?;
        ok &= closed == m.module_counts();
        ok &= count_params(&m).total_params as usize == built;
        parts.push(format!("{name} {built} ({:+.2}%)", 100.0 * dev));
        totals.push(built as i64);
    }
    let (sep_delta, dense_delta) = (totals[1] - totals[2], totals[5] - totals[4]);
    ok &= sep_delta == dense_delta;
    ok &= cell_param_count(Separable, 3, 56, 64) == 35_296;
    check(
        ok,
        format!(
            "{}; C−M delta {sep_delta} (separable) = {dense_delta} (dense); closed forms exact",
            parts.join(", ")
        ),
    )
}

fn efficiency_ratios() -> Outcome {
    let flops = |cfg: ModelConfig| count_flops_cfg(&cfg, Convention::default()).map(|r| r.total_flops as f64);
    let two =
        flops(ModelConfig::reference(Fusion::C, StreamSet::Both, CellKind::Separable)).map_err(|e| e.to_string())?;
    let one = flops(ModelConfig::reference(
        Fusion::C,
        StreamSet::DiffOnly,
        CellKind::Separable,
    ))
    .map_err(|e| e.to_string())?;
    let ratio = two / one;
    let target = 1.0 / 64.0 + 1.0 / 9.0;
    let sep = separable_block_cost(224, 224, 3, 64, 64).flops(Convention::default()) as f64
        / standard_block_cost(224, 224, 3, 64, 64).flops(Convention::default()) as f64;
    check(
        (ratio / 2.0 - 1.0).abs() <= 0.05 && (sep / target - 1.0).abs() <= 0.01,
        format!(
            "two-stream C / one-stream = {ratio:.4} (2.0 ± 5%); separable/standard = {sep:.5} vs {target:.5} (± 1%) [{}]",
            Convention::default().id()
        ),
    )
}

fn preprocessing_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let frame: Vec<f32> = (0..24 * 30 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let static_clip = Clip::new(Tensor::from_fn(&[10, 24, 30, 3], |i| frame[i % frame.len()]), "static")
        .map_err(|e| e.to_string())?;
    let cfg = PrepConfig {
        frames: 8,
        resize: 24,
        size: 20,
        allow_duplicates: false,
    };
    let s = prepare_streams(&static_clip, &cfg, PrepMode::Eval).map_err(|e| e.to_string())?;
    let zero = s.bsf.data().iter().chain(s.fd.data()).all(|&v| v == 0.0);

    let x = Tensor::from_fn(&[9, 6, 7, 3], |_| rng.random_range(0.0..1.0f32));
    let fd = frame_difference_of(&x);
    let frame_len = 6 * 7 * 3;
    let mut telescope = 0.0f32;
    for i in 0..frame_len {
        let sum: f32 = (0..8).map(|t| fd.data()[t * frame_len + i]).sum();
        let direct = x.data()[8 * frame_len + i] - x.data()[i];
        telescope = telescope.max((sum - direct).abs());
    }

    let moving = Clip::new(
        Tensor::from_fn(&[40, 240, 320, 3], |i| ((i % 251) as f32) / 250.0),
        "ref",
    )
    .map_err(|e| e.to_string())?;
    let r = prepare_streams(&moving, &PrepConfig::reference(), PrepMode::Eval).map_err(|e| e.to_string())?;
    let shapes_ok = r.bsf.shape() == [32, 224, 224, 3] && r.fd.shape() == [31, 224, 224, 3];
    check(
        zero && fd.shape()[0] == 8 && telescope < 1e-5 && shapes_ok,
        format!(
            "static clip gives zero streams: {zero}; fd has T−1 steps, telescoping err {telescope:.1e}; reference shapes {:?} / {:?}",
            r.bsf.shape(),
            r.fd.shape()
        ),
    )
}

fn lr_schedule() -> Outcome {
    let s = LrSchedule::default();
    let got: Vec<f64> = [0, 5, 10, 15, 20, 100].iter().map(|&e| lr_at_epoch(e, &s)).collect();
    check(
        got == [4e-4, 2e-4, 1e-4, 5e-5, 5e-5, 5e-5],
        format!("epochs 0/5/10/15/20/100 → {got:?}"),
    )
}

fn desk_scale_learning() -> Outcome {
    let shape = (16, 64, 64);
    let train = make_synth(64, 1, shape).map_err(|e| e.to_string())?;
    let held_out = make_synth(64, 2, shape).map_err(|e| e.to_string())?;
    let start = Instant::now();

    let mut m = build_model(ModelConfig::tiny(Fusion::M, StreamSet::Both), 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 200,
        seed: 1,
        target_accuracy: Some(0.95),
        ..Default::default()
    };
    let logs = fit(&mut m, &train, None, &cfg, |_| {}).map_err(|e| e.to_string())?;
    let train_acc = evaluate(&m, &train).map_err(|e| e.to_string())?;

    let one_stream = |streams| -> Result<f64, String> {
        let mut m = build_model(ModelConfig::tiny(Fusion::M, streams), 1).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            epochs: 20,
            seed: 1,
            augment: None,
            ..Default::default()
        };
        fit(&mut m, &train, None, &cfg, |_| {}).map_err(|e| e.to_string())?;
        evaluate(&m, &held_out).map_err(|e| e.to_string())
    };
    let diff = one_stream(StreamSet::DiffOnly)?;
    let frames = one_stream(StreamSet::FramesOnly)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        train_acc >= 0.95 && diff > frames && secs < 600.0,
        format!(
            "two-stream M train acc {train_acc:.4} after {} epochs; held-out diff-only {diff:.4} vs frames-only {frames:.4}; {secs:.0}s",
            logs.len()
        ),
    )
}

fn determinism_and_round_trips() -> Outcome {
    let data = make_synth(4, 9, (3, 16, 16)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        ..Default::default()
    };
    let run = |deterministic: bool| -> Result<Vec<u8>, String> {
        set_deterministic(deterministic);
        let mut m = build_model(ModelConfig::gradcheck(Fusion::M), 5).map_err(|e| e.to_string())?;
        fit(&mut m, &data, None, &cfg, |_| {}).map_err(|e| e.to_string())?;
        Ok(sclw_bytes(&m.weights))
    };
    let (a, b) = (run(true)?, run(true)?);
    let parallel = run(false)?;
    set_deterministic(false);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = build_model(ModelConfig::tiny(Fusion::C, StreamSet::Both), 3).map_err(|e| e.to_string())?;
    let wp = dir.path().join("w.sclw");
    write_sclw(&wp, &m.weights).map_err(|e| e.to_string())?;
    let back = read_sclw(&wp).map_err(|e| e.to_string())?;
    let sclw_ok = back.iter().zip(m.weights.iter()).all(|((n1, e1), (n2, e2))| {
        n1 == n2
            && e1.trainable == e2.trainable
            && e1
                .tensor
                .data()
                .iter()
                .map(|v| v.to_bits())
                .eq(e2.tensor.data().iter().map(|v| v.to_bits()))
    }) && back.len() == m.weights.len();

    let cp = dir.path().join("c.clp1");
    let clip = &data.examples[0].clip;
    write_clp1(&cp, clip.frames()).map_err(|e| e.to_string())?;
    let clp_ok = read_clp1(&cp).map_err(|e| e.to_string())? == *clip.frames();
    check(
        a == b && sclw_ok && clp_ok,
        format!(
            "two deterministic runs give identical SCLW bytes: {}; multi-threaded run identical too: {}; SCLW and CLP1 round trips bitwise: {}",
            a == b,
            a == parallel,
            sclw_ok && clp_ok
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("separable convolution equivalence", separable_equivalence),
        ("cell oracle equivalence", cell_oracle),
        ("parameter-count reproduction", parameter_counts),
        ("efficiency ratios", efficiency_ratios),
        ("pre-processing invariants", preprocessing_invariants),
        ("LR schedule", lr_schedule),
        ("desk-scale learning", desk_scale_learning),
        ("determinism and lossless formats", determinism_and_round_trips),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
