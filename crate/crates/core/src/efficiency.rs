//! Analytic parameter and FLOP accounting.
//!
//! Counting convention, per clip:
//!
//! * multiply-accumulates count as 2 FLOPs under [`Convention::Mac2`] (the
//!   default) or 1 under [`Convention::Mac1`];
//! * a bias add, an activation (relu6, leaky relu, sigmoid or tanh), an
//!   elementwise add or multiply, and a max-pool comparison each count as
//!   one FLOP per output element, whatever the convention;
//! * inference batch norm counts 2 FLOPs per element (folded scale and
//!   shift);
//! * reshapes, gathers and concatenation are free.
//!
//! Rows are keyed by layer name, the weight name minus its last component,
//! so parameter and FLOP tallies line up with the weight store.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneSpec, Block};
use crate::cells::{CellKind, GATES};
use crate::error::Result;
use crate::model::{Fusion, Model, ModelConfig, Stream, StreamSet};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// One multiply-accumulate is one FLOP.
    Mac1,
    /// One multiply-accumulate is two FLOPs.
    #[default]
    Mac2,
}

impl Convention {
    pub fn id(self) -> &'static str {
        match self {
            Convention::Mac1 => "mac=1flop",
            Convention::Mac2 => "mac=2flops",
        }
    }

    fn per_mac(self) -> u64 {
        match self {
            Convention::Mac1 => 1,
            Convention::Mac2 => 2,
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mac1" | "mac=1flop" => Ok(Convention::Mac1),
            "mac2" | "mac=2flops" => Ok(Convention::Mac2),
            _ => Err(format!("unknown convention {s:?}, expected mac1 or mac2")),
        }
    }
}

/// Raw operation counts for one layer, before applying a convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cost {
    pub macs: u64,
    pub bias: u64,
    pub activation: u64,
    /// Elementwise arithmetic, normalization and pooling comparisons.
    pub other: u64,
}

impl Cost {
    pub fn flops(&self, conv: Convention) -> u64 {
        self.macs * conv.per_mac() + self.bias + self.activation + self.other
    }

    fn scaled(self, k: u64) -> Cost {
        Cost {
            macs: self.macs * k,
            bias: self.bias * k,
            activation: self.activation * k,
            other: self.other * k,
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            macs: self.macs + o.macs,
            bias: self.bias + o.bias,
            activation: self.activation + o.activation,
            other: self.other + o.other,
        }
    }
}

/// Dense `k×k` convolution producing an `h×w×c_out` map.
pub fn conv_cost(h: usize, w: usize, k: usize, c_in: usize, c_out: usize, bias: bool) -> Cost {
    let out = (h * w * c_out) as u64;
    Cost {
        macs: out * (k * k * c_in) as u64,
        bias: if bias { out } else { 0 },
        ..Cost::default()
    }
}

/// Depthwise `k×k` convolution producing an `h×w×c` map.
pub fn depthwise_cost(h: usize, w: usize, k: usize, c: usize) -> Cost {
    conv_cost(h, w, k, 1, c, false)
}

pub fn pointwise_cost(h: usize, w: usize, c_in: usize, c_out: usize, bias: bool) -> Cost {
    conv_cost(h, w, 1, c_in, c_out, bias)
}

/// Depthwise then pointwise (with bias), `h×w` output.
pub fn separable_block_cost(h: usize, w: usize, k: usize, c_in: usize, c_out: usize) -> Cost {
    depthwise_cost(h, w, k, c_in) + pointwise_cost(h, w, c_in, c_out, true)
}

/// Dense convolution with bias, `h×w` output.
pub fn standard_block_cost(h: usize, w: usize, k: usize, c_in: usize, c_out: usize) -> Cost {
    conv_cost(h, w, k, c_in, c_out, true)
}

/// One report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub params: u64,
    pub cost: Cost,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub convention: Convention,
    pub rows: Vec<Row>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl EfficiencyReport {
    fn from_rows(convention: Convention, rows: IndexMap<String, (u64, Cost)>) -> Self {
        let rows: Vec<Row> = rows
            .into_iter()
            .map(|(name, (params, cost))| Row {
                name,
                params,
                flops: cost.flops(convention),
                cost,
            })
            .collect();
        EfficiencyReport {
            convention,
            total_params: rows.iter().map(|r| r.params).sum(),
            total_flops: rows.iter().map(|r| r.flops).sum(),
            rows,
        }
    }

    /// Rows whose name starts with `prefix`, summed.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .fold((0, 0), |(p, f), r| (p + r.params, f + r.flops))
    }
}

impl fmt::Display for EfficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "convention: {}", self.convention.id())?;
        writeln!(
            f,
            "{:<width$} {:>10} {:>15} {:>12} {:>12} {:>12} {:>15}",
            "layer", "params", "macs", "bias", "activation", "other", "flops"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$} {:>10} {:>15} {:>12} {:>12} {:>12} {:>15}",
                r.name, r.params, r.cost.macs, r.cost.bias, r.cost.activation, r.cost.other, r.flops
            )?;
        }
        write!(f, "{:<width$} {:>10} {:>15}", "total", self.total_params, "")?;
        write!(f, " {:>12} {:>12} {:>12} {:>15}", "", "", "", self.total_flops)
    }
}

fn layer_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(layer, _)| layer)
}

/// Exact parameter tally from the weight store, one row per layer.
pub fn count_params<T: Scalar>(model: &Model<T>) -> EfficiencyReport {
    let mut rows: IndexMap<String, (u64, Cost)> = IndexMap::new();
    for (name, e) in model.weights.iter() {
        rows.entry(layer_of(name).to_string()).or_default().0 += e.tensor.len() as u64;
    }
    EfficiencyReport::from_rows(Convention::default(), rows)
}

/// Per-clip FLOPs at the model's configured input size, with parameter
/// counts from its weights.
pub fn count_flops<T: Scalar>(model: &Model<T>, convention: Convention) -> Result<EfficiencyReport> {
    let mut rows = flop_rows(&model.cfg, &model.backbone);
    for (name, e) in model.weights.iter() {
        rows.entry(layer_of(name).to_string()).or_default().0 += e.tensor.len() as u64;
    }
    Ok(EfficiencyReport::from_rows(convention, rows))
}

/// FLOP rows from a configuration alone; parameter columns are left at 0.
pub fn count_flops_cfg(cfg: &ModelConfig, convention: Convention) -> Result<EfficiencyReport> {
    cfg.validate()?;
    let backbone = Backbone::new(cfg.backbone.clone())?;
    Ok(EfficiencyReport::from_rows(convention, flop_rows(cfg, &backbone)))
}

fn flop_rows(cfg: &ModelConfig, backbone: &Backbone) -> IndexMap<String, (u64, Cost)> {
    let mut rows: IndexMap<String, (u64, Cost)> = IndexMap::new();
    let mut add = |name: String, cost: Cost| {
        let e = rows.entry(name).or_default();
        e.1 = e.1 + cost;
    };
    let [fh, fw, c_x] = backbone.output_shape();
    let c_h = cfg.lstm_filters;
    let k = cfg.lstm_kernel;
    for &stream in cfg.streams.active() {
        let frames = match stream {
            Stream::Frames => cfg.input.frames,
            Stream::Diff => cfg.input.frames - 1,
        } as u64;
        let bb = format!("backbone.{}", stream.name());
        let size = backbone.spec.input_size();
        if matches!(backbone.spec, BackboneSpec::MobilenetTruncated { .. }) {
            let n = (size * size * backbone.in_channels) as u64;
            add(
                format!("{bb}.input_scale"),
                Cost {
                    other: 2 * n,
                    ..Cost::default()
                }
                .scaled(frames),
            );
        }
        let mut s = size;
        for b in &backbone.blocks {
            for (layer, cost) in block_costs(b, s) {
                add(format!("{bb}.{layer}"), cost.scaled(frames));
            }
            s = s.div_ceil(b.stride());
        }

        let cell = format!("cell.{}", stream.name());
        let steps = frames;
        let px = fh * fw;
        for g in GATES {
            let conv = match cfg.lstm_kind {
                CellKind::Separable => {
                    depthwise_cost(fh, fw, k, c_x)
                        + pointwise_cost(fh, fw, c_x, c_h, false)
                        + depthwise_cost(fh, fw, k, c_h)
                        + pointwise_cost(fh, fw, c_h, c_h, false)
                }
                CellKind::Dense => conv_cost(fh, fw, k, c_x, c_h, false) + conv_cost(fh, fw, k, c_h, c_h, false),
            };
            let n = (px * c_h) as u64;
            let sum_and_bias = Cost {
                bias: n,
                other: n,
                ..Cost::default()
            };
            add(format!("{cell}.{g}"), (conv + sum_and_bias).scaled(steps));
        }
        let n = (px * c_h) as u64;
        // Gate nonlinearities (4), tanh(c); f·c, i·g, their sum, o·tanh(c).
        add(
            format!("{cell}.state"),
            Cost {
                activation: 5 * n,
                other: 4 * n,
                ..Cost::default()
            }
            .scaled(steps),
        );
        add(
            format!("pool.{}", stream.name()),
            Cost {
                other: 3 * ((fh / 2) * (fw / 2) * c_h) as u64,
                ..Cost::default()
            },
        );
    }
    let pooled = ((fh / 2) * (fw / 2) * c_h) as u64;
    if cfg.streams == StreamSet::Both {
        let cost = match cfg.fusion {
            Fusion::M => Cost {
                activation: 2 * pooled,
                other: pooled,
                ..Cost::default()
            },
            Fusion::A => Cost {
                other: pooled,
                ..Cost::default()
            },
            Fusion::C => Cost::default(),
        };
        add("fusion".into(), cost);
    }
    let mut fan_in = (fh / 2) * (fw / 2) * cfg.fused_channels();
    let layers = cfg.head.len();
    for (i, &w) in cfg.head.iter().enumerate() {
        let mut cost = pointwise_cost(1, 1, fan_in, w, true);
        if i + 1 < layers {
            cost.activation = w as u64;
        }
        add(format!("head.dense_{i}"), cost);
        fan_in = w;
    }
    rows
}

/// Per-frame costs of one backbone block at input side `s`.
fn block_costs(b: &Block, s: usize) -> Vec<(String, Cost)> {
    let name = b.name();
    let o = s.div_ceil(b.stride());
    let elems = |c: usize| (o * o * c) as u64;
    let bn = |c: usize| Cost {
        other: 2 * elems(c),
        ..Cost::default()
    };
    let relu6 = |c: usize| Cost {
        activation: elems(c),
        ..Cost::default()
    };
    match *b {
        Block::Stem { c_in, c_out } => vec![
            (name.clone(), conv_cost(o, o, 3, c_in, c_out, false)),
            (format!("{name}_bn"), bn(c_out) + relu6(c_out)),
        ],
        Block::InvertedResidual {
            c_in, expansion, c_out, ..
        } => {
            let e = c_in * expansion;
            let mut out = Vec::new();
            if expansion != 1 {
                // Expansion runs at the input resolution.
                let n = (s * s * e) as u64;
                out.push((format!("{name}_expand"), pointwise_cost(s, s, c_in, e, false)));
                out.push((
                    format!("{name}_expand_bn"),
                    Cost {
                        activation: n,
                        other: 2 * n,
                        ..Cost::default()
                    },
                ));
            }
            out.push((format!("{name}_depthwise"), depthwise_cost(o, o, 3, e)));
            out.push((format!("{name}_depthwise_bn"), bn(e) + relu6(e)));
            out.push((format!("{name}_project"), pointwise_cost(o, o, e, c_out, false)));
            let mut proj_bn = bn(c_out);
            if b.has_residual() {
                proj_bn.other += elems(c_out);
            }
            out.push((format!("{name}_project_bn"), proj_bn));
            out
        }
        Block::SepConv {
            c_in, c_out, batchnorm, ..
        } => {
            let mut out = vec![
                (format!("{name}_depthwise"), depthwise_cost(o, o, 3, c_in)),
                (
                    format!("{name}_pointwise"),
                    pointwise_cost(o, o, c_in, c_out, true) + relu6(c_out),
                ),
            ];
            if batchnorm {
                out.push((format!("{name}_bn"), bn(c_out)));
            }
            out
        }
    }
}
