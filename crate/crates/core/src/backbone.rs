//! Per-frame spatial feature extractors.
//!
//! Two kinds are supported. `MobilenetTruncated` is the inverted-residual
//! network with width multiplier `α`, cut after the first block of the
//! 160-base-channel group so that a 224×224 frame maps to 7×7×56. `Tiny` is a
//! stack of stride-2 separable blocks for desk-scale training.
//!
//! Parameters live in a [`WeightStore`] under `backbone.<stream>.<layer>.<param>`.
//! Kernels use the crate layouts: standard `K×K×C_in×C_out`, depthwise
//! `K×K×C`, pointwise `C_in×C_out`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eager, Exec, Op};
use crate::error::{Error, Result};
use crate::init::xavier_for;
use crate::ops::{Activation, Padding};
use crate::store::WeightStore;
use crate::tensor::{Scalar, Tensor};

/// Batch-norm epsilon of the MobileNetV2 family.
pub const BN_EPS: f64 = 1e-3;
/// Weight on the old running statistic in the training-mode update.
pub const BN_MOMENTUM: f64 = 0.9;

/// `(t, c, n, s)`: expansion, base output channels, repeats, first stride.
const MOBILENET_V2: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Inverted-residual blocks kept by the truncated network (blocks 0..=13).
pub const MOBILENET_KEPT_BLOCKS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    MobilenetTruncated {
        alpha: f64,
        input_size: usize,
    },
    Tiny {
        input_size: usize,
        in_channels: usize,
        /// Output channels of each stride-2 block.
        widths: Vec<usize>,
        #[serde(default)]
        batchnorm: bool,
    },
}

impl BackboneSpec {
    pub fn mobilenet(alpha: f64) -> Self {
        BackboneSpec::MobilenetTruncated { alpha, input_size: 224 }
    }

    /// Four blocks, 64×64×3 down to 4×4×32.
    pub fn tiny_default() -> Self {
        BackboneSpec::Tiny {
            input_size: 64,
            in_channels: 3,
            widths: vec![8, 16, 32, 32],
            batchnorm: false,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            BackboneSpec::MobilenetTruncated { input_size, .. } | BackboneSpec::Tiny { input_size, .. } => *input_size,
        }
    }
}

/// Channel rounding rule of the MobileNet family: nearest multiple of
/// `divisor`, at least `divisor`, and never more than 10% below `v`.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = ((v + d / 2.0) / d).floor() as usize * divisor;
    n = n.max(divisor);
    if (n as f64) < 0.9 * v {
        n += divisor;
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// 3×3 stride-2 conv, no bias, BN, relu6.
    Stem { c_in: usize, c_out: usize },
    /// Optional 1×1 expand → BN → relu6, 3×3 depthwise → BN → relu6,
    /// 1×1 project → BN, plus a residual add when shapes allow.
    InvertedResidual {
        index: usize,
        c_in: usize,
        expansion: usize,
        c_out: usize,
        stride: usize,
    },
    /// 3×3 depthwise (stride 2, no bias) → pointwise + bias → [BN] → relu6.
    SepConv {
        index: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        batchnorm: bool,
    },
}

impl Block {
    pub fn name(&self) -> String {
        match self {
            Block::Stem { .. } => "conv1".into(),
            Block::InvertedResidual { index, .. } => format!("block_{index}"),
            Block::SepConv { index, .. } => format!("sep_{index}"),
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Block::Stem { .. } => 2,
            Block::InvertedResidual { stride, .. } | Block::SepConv { stride, .. } => *stride,
        }
    }

    pub fn c_out(&self) -> usize {
        match self {
            Block::Stem { c_out, .. } | Block::InvertedResidual { c_out, .. } | Block::SepConv { c_out, .. } => *c_out,
        }
    }

    pub fn has_residual(&self) -> bool {
        matches!(self, Block::InvertedResidual { c_in, c_out, stride: 1, .. } if c_in == c_out)
    }

    /// Parameter count from the block hyperparameters alone, BN counted as
    /// four per channel (scale, shift, running mean, running variance).
    pub fn closed_form_params(&self) -> usize {
        match *self {
            Block::Stem { c_in, c_out } => 9 * c_in * c_out + 4 * c_out,
            Block::InvertedResidual {
                c_in, expansion, c_out, ..
            } => {
                let e = c_in * expansion;
                let expand = if expansion == 1 { 0 } else { c_in * e + 4 * e };
                expand + 9 * e + 4 * e + e * c_out + 4 * c_out
            }
            Block::SepConv {
                c_in, c_out, batchnorm, ..
            } => 9 * c_in + c_in * c_out + c_out + if batchnorm { 4 * c_out } else { 0 },
        }
    }

    /// `(layer, param, shape, trainable)` in forward order.
    fn param_shapes(&self) -> Vec<(String, &'static str, Vec<usize>, bool)> {
        let mut out = Vec::new();
        let bn = |out: &mut Vec<_>, layer: String, c: usize| {
            for p in ["gamma", "beta"] {
                out.push((layer.clone(), p, vec![c], true));
            }
            for p in ["moving_mean", "moving_variance"] {
                out.push((layer.clone(), p, vec![c], false));
            }
        };
        let name = self.name();
        match *self {
            Block::Stem { c_in, c_out } => {
                out.push((name.clone(), "kernel", vec![3, 3, c_in, c_out], true));
                bn(&mut out, format!("{name}_bn"), c_out);
            }
            Block::InvertedResidual {
                c_in, expansion, c_out, ..
            } => {
                let e = c_in * expansion;
                if expansion != 1 {
                    out.push((format!("{name}_expand"), "kernel", vec![c_in, e], true));
                    bn(&mut out, format!("{name}_expand_bn"), e);
                }
                out.push((format!("{name}_depthwise"), "kernel", vec![3, 3, e], true));
                bn(&mut out, format!("{name}_depthwise_bn"), e);
                out.push((format!("{name}_project"), "kernel", vec![e, c_out], true));
                bn(&mut out, format!("{name}_project_bn"), c_out);
            }
            Block::SepConv {
                c_in, c_out, batchnorm, ..
            } => {
                out.push((format!("{name}_depthwise"), "kernel", vec![3, 3, c_in], true));
                out.push((format!("{name}_pointwise"), "kernel", vec![c_in, c_out], true));
                out.push((format!("{name}_pointwise"), "bias", vec![c_out], true));
                if batchnorm {
                    bn(&mut out, format!("{name}_bn"), c_out);
                }
            }
        }
        out
    }
}

/// Layer layout of a backbone; weights are held separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub blocks: Vec<Block>,
    pub in_channels: usize,
}

fn layout(spec: &BackboneSpec) -> Result<(Vec<Block>, usize)> {
    match spec {
        BackboneSpec::MobilenetTruncated { alpha, .. } => {
            if !(*alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::invalid(
                    "build_backbone",
                    format!("alpha must be positive, got {alpha}"),
                ));
            }
            let stem = make_divisible(32.0 * alpha, 8);
            let mut blocks = vec![Block::Stem { c_in: 3, c_out: stem }];
            let mut c_in = stem;
            let mut index = 0;
            'groups: for &(t, c, n, s) in &MOBILENET_V2 {
                let c_out = make_divisible(c as f64 * alpha, 8);
                for i in 0..n {
                    if index == MOBILENET_KEPT_BLOCKS {
                        break 'groups;
                    }
                    blocks.push(Block::InvertedResidual {
                        index,
                        c_in,
                        expansion: t,
                        c_out,
                        stride: if i == 0 { s } else { 1 },
                    });
                    c_in = c_out;
                    index += 1;
                }
            }
            Ok((blocks, 3))
        }
        BackboneSpec::Tiny {
            in_channels,
            widths,
            batchnorm,
            ..
        } => {
            if widths.is_empty() || widths.contains(&0) || *in_channels == 0 {
                return Err(Error::invalid(
                    "build_backbone",
                    "tiny backbone needs nonzero channel widths",
                ));
            }
            let mut c_in = *in_channels;
            let blocks = widths
                .iter()
                .enumerate()
                .map(|(index, &c_out)| {
                    let b = Block::SepConv {
                        index,
                        c_in,
                        c_out,
                        stride: 2,
                        batchnorm: *batchnorm,
                    };
                    c_in = c_out;
                    b
                })
                .collect();
            Ok((blocks, *in_channels))
        }
    }
}

/// Batch-norm behaviour during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Stored running statistics.
    Infer,
    /// Per-batch statistics; the caller folds them into the running ones.
    Train,
}

/// Batch statistics observed by one BN layer in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<T> {
    /// Full layer prefix, e.g. `backbone.frames.sep_0_bn`.
    pub layer: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// `running ← m·running + (1−m)·batch` for every update.
pub fn apply_bn_updates<T: Scalar>(store: &mut WeightStore<T>, updates: &[BnUpdate<T>], momentum: f64) -> Result<()> {
    let m = T::of(momentum);
    let fold = |old: &Tensor<T>, new: &Tensor<T>| old.zip_map(new, "bn_update", |a, b| m * a + (T::one() - m) * b);
    for u in updates {
        let mean_name = format!("{}.moving_mean", u.layer);
        let var_name = format!("{}.moving_variance", u.layer);
        let mean = fold(store.get(&mean_name)?, &u.mean)?;
        let var = fold(store.get(&var_name)?, &u.var)?;
        store.set(&mean_name, mean)?;
        store.set(&var_name, var)?;
    }
    Ok(())
}

/// How backbone weights are produced.
#[derive(Debug, Clone, Copy)]
pub enum BackboneInit<'a, T> {
    Xavier {
        seed: u64,
    },
    Import {
        source: &'a WeightStore<T>,
        mapping: Option<&'a NameMap>,
    },
}

impl Backbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        let (blocks, in_channels) = layout(&spec)?;
        Ok(Backbone {
            spec,
            blocks,
            in_channels,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let mut s = self.spec.input_size();
        for b in &self.blocks {
            s = s.div_ceil(b.stride());
        }
        [s, s, self.blocks.last().map_or(self.in_channels, Block::c_out)]
    }

    /// `(name, shape, trainable)` of every parameter under `prefix`.
    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>, bool)> {
        self.blocks
            .iter()
            .flat_map(Block::param_shapes)
            .map(|(layer, p, shape, tr)| (format!("{prefix}.{layer}.{p}"), shape, tr))
            .collect()
    }

    pub fn closed_form_params(&self) -> usize {
        self.blocks.iter().map(Block::closed_form_params).sum()
    }

    /// Fresh weights: Xavier kernels, zero biases, identity batch norm.
    pub fn init_store<T: Scalar>(&self, prefix: &str, seed: u64, store: &mut WeightStore<T>) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, trainable) in self.param_shapes(prefix) {
            let t = if name.ends_with(".kernel") {
                xavier_for(&mut rng, &shape)
            } else if name.ends_with(".gamma") || name.ends_with(".moving_variance") {
                Tensor::ones(&shape)
            } else {
                Tensor::zeros(&shape)
            };
            store.insert(name, t, trainable)?;
        }
        Ok(())
    }

    /// Runs the backbone on `x` (`H×W×C` or `N×H×W×C`).
    pub fn forward_with<T: Scalar, E: Exec<T>>(
        &self,
        ex: &mut E,
        store: &WeightStore<T>,
        prefix: &str,
        x: &E::Value,
        mode: BnMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<E::Value> {
        let shape = ex.shape(x);
        let s = self.spec.input_size();
        let want = [s, s, self.in_channels];
        if shape.len() < 3 || shape[shape.len() - 3..] != want {
            let mut expected = shape.get(..shape.len().saturating_sub(3)).unwrap_or(&[]).to_vec();
            expected.extend(want);
            return Err(Error::shape("backbone_forward", &expected, &shape));
        }
        let mut f = Fwd {
            ex,
            store,
            prefix,
            mode,
            updates,
        };
        let mut h = match self.spec {
            // Imported ImageNet weights expect inputs in [−1, 1].
            BackboneSpec::MobilenetTruncated { .. } => {
                let two = f.ex.apply(Op::Scale(2.0), &[x])?;
                let ones = f.ex.constant(Tensor::ones(&shape));
                f.ex.sub(&two, &ones)?
            }
            BackboneSpec::Tiny { .. } => x.clone(),
        };
        for b in &self.blocks {
            h = f.block(b, &h)?;
        }
        Ok(h)
    }

    /// Untraced forward with stored statistics.
    pub fn forward<T: Scalar>(&self, store: &WeightStore<T>, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(&mut Eager, store, prefix, x, BnMode::Infer, &mut Vec::new())
    }
}

struct Fwd<'a, T: Scalar, E: Exec<T>> {
    ex: &'a mut E,
    store: &'a WeightStore<T>,
    prefix: &'a str,
    mode: BnMode,
    updates: &'a mut Vec<BnUpdate<T>>,
}

impl<T: Scalar, E: Exec<T>> Fwd<'_, T, E> {
    fn param(&mut self, layer: &str, p: &str) -> Result<E::Value> {
        let name = format!("{}.{layer}.{p}", self.prefix);
        let t = self.store.get(&name)?;
        Ok(self.ex.param(&name, t))
    }

    fn bn(&mut self, layer: &str, x: &E::Value) -> Result<E::Value> {
        let gamma = self.param(layer, "gamma")?;
        let beta = self.param(layer, "beta")?;
        match self.mode {
            BnMode::Infer => {
                let mean = self.store.get(&format!("{}.{layer}.moving_mean", self.prefix))?.clone();
                let var = self
                    .store
                    .get(&format!("{}.{layer}.moving_variance", self.prefix))?
                    .clone();
                self.ex.batchnorm_infer(x, &gamma, &beta, mean, var, BN_EPS)
            }
            BnMode::Train => {
                let (y, mean, var) = self.ex.batchnorm_train(x, &gamma, &beta, BN_EPS)?;
                self.updates.push(BnUpdate {
                    layer: format!("{}.{layer}", self.prefix),
                    mean,
                    var,
                });
                Ok(y)
            }
        }
    }

    fn relu6(&mut self, x: &E::Value) -> Result<E::Value> {
        self.ex.act(Activation::Relu6, x)
    }

    fn block(&mut self, b: &Block, x: &E::Value) -> Result<E::Value> {
        let name = b.name();
        match *b {
            Block::Stem { .. } => {
                let w = self.param(&name, "kernel")?;
                let y = self.ex.conv2d(x, &w, 2, Padding::Same)?;
                let y = self.bn(&format!("{name}_bn"), &y)?;
                self.relu6(&y)
            }
            Block::InvertedResidual { expansion, stride, .. } => {
                let mut y = x.clone();
                if expansion != 1 {
                    let w = self.param(&format!("{name}_expand"), "kernel")?;
                    y = self.ex.pointwise(&y, &w)?;
                    y = self.bn(&format!("{name}_expand_bn"), &y)?;
                    y = self.relu6(&y)?;
                }
                let w = self.param(&format!("{name}_depthwise"), "kernel")?;
                y = self.ex.depthwise(&y, &w, stride, Padding::Same)?;
                y = self.bn(&format!("{name}_depthwise_bn"), &y)?;
                y = self.relu6(&y)?;
                let w = self.param(&format!("{name}_project"), "kernel")?;
                y = self.ex.pointwise(&y, &w)?;
                y = self.bn(&format!("{name}_project_bn"), &y)?;
                if b.has_residual() {
                    y = self.ex.add(x, &y)?;
                }
                Ok(y)
            }
            Block::SepConv { stride, batchnorm, .. } => {
                let dw = self.param(&format!("{name}_depthwise"), "kernel")?;
                let pw = self.param(&format!("{name}_pointwise"), "kernel")?;
                let bias = self.param(&format!("{name}_pointwise"), "bias")?;
                let y = self.ex.depthwise(x, &dw, stride, Padding::Same)?;
                let y = self.ex.pointwise(&y, &pw)?;
                let mut y = self.ex.bias_add(&y, &bias)?;
                if batchnorm {
                    y = self.bn(&format!("{name}_bn"), &y)?;
                }
                self.relu6(&y)
            }
        }
    }
}

/// Two-column `ours  theirs` name map used when importing third-party
/// weights. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NameMap {
    map: BTreeMap<String, String>,
}

impl NameMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let [ours, theirs] = cols[..] else {
                return Err(Error::invalid(
                    "name_map",
                    format!("line {}: expected two columns, got {}", i + 1, cols.len()),
                ));
            };
            if map.insert(ours.to_string(), theirs.to_string()).is_some() {
                return Err(Error::invalid(
                    "name_map",
                    format!("line {}: duplicate name `{ours}`", i + 1),
                ));
            }
        }
        Ok(NameMap { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn source_name<'a>(&'a self, ours: &'a str) -> &'a str {
        self.map.get(ours).map_or(ours, String::as_str)
    }
}

/// Replaces every backbone entry under `prefix` in `target` with its
/// counterpart in `source` (renamed through `mapping` when given).
/// Fails without touching `target` if anything is missing or mis-shaped;
/// returns the names that were replaced.
pub fn import_weights<T: Scalar>(
    backbone: &Backbone,
    prefix: &str,
    target: &mut WeightStore<T>,
    source: &WeightStore<T>,
    mapping: Option<&NameMap>,
) -> Result<Vec<String>> {
    let mut ours = WeightStore::default();
    let mut renamed = WeightStore::default();
    for (name, shape, trainable) in backbone.param_shapes(prefix) {
        let current = match target.get(&name) {
            Ok(t) => t.clone(),
            Err(_) => Tensor::zeros(&shape),
        };
        let from = mapping.map_or(name.as_str(), |m| m.source_name(&name));
        if let Ok(t) = source.get(from) {
            renamed.insert(name.clone(), t.clone(), trainable)?;
        }
        ours.insert(name, current, trainable)?;
    }
    let matched = ours.import_from(&renamed).map_err(|e| match (e, mapping) {
        (Error::MissingWeights(names), Some(m)) => Error::MissingWeights(
            names
                .into_iter()
                .map(|n| {
                    let src = m.source_name(&n);
                    if src == n {
                        n
                    } else {
                        format!("{n} (source `{src}`)")
                    }
                })
                .collect(),
        ),
        (e, _) => e,
    })?;
    for (name, entry) in ours.iter() {
        if target.contains(name) {
            target.set(name, entry.tensor.clone())?;
        } else {
            target.insert(name, entry.tensor.clone(), entry.trainable)?;
        }
    }
    target.provenance = crate::store::Provenance::Imported;
    Ok(matched)
}

/// Builds the layout and its weights under `prefix`.
pub fn build_backbone<T: Scalar>(
    spec: BackboneSpec,
    prefix: &str,
    init: BackboneInit<'_, T>,
) -> Result<(Backbone, WeightStore<T>)> {
    let bb = Backbone::new(spec)?;
    let mut store = WeightStore::default();
    match init {
        BackboneInit::Xavier { seed } => bb.init_store(prefix, seed, &mut store)?,
        BackboneInit::Import { source, mapping } => {
            import_weights(&bb, prefix, &mut store, source, mapping)?;
        }
    }
    Ok((bb, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisor_rule() {
        assert_eq!(make_divisible(32.0 * 0.35, 8), 16);
        assert_eq!(make_divisible(16.0 * 0.35, 8), 8);
        assert_eq!(make_divisible(24.0 * 0.35, 8), 8);
        assert_eq!(make_divisible(64.0 * 0.35, 8), 24);
        assert_eq!(make_divisible(96.0 * 0.35, 8), 32);
        assert_eq!(make_divisible(160.0 * 0.35, 8), 56);
    }

    #[test]
    fn mobilenet_layout() {
        let bb = Backbone::new(BackboneSpec::mobilenet(0.35)).unwrap();
        assert_eq!(bb.output_shape(), [7, 7, 56]);
        assert_eq!(bb.blocks.len(), 1 + MOBILENET_KEPT_BLOCKS);
        let residual = bb.blocks.iter().filter(|b| b.has_residual()).count();
        // 24:1, 32:2, 64:3, 96:2
        assert_eq!(residual, 8);
        assert_eq!(bb.closed_form_params(), 111_984);
        let tally: usize = bb
            .param_shapes("b")
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum();
        assert_eq!(tally, 111_984);
    }

    #[test]
    fn tiny_single_block_halves() {
        let spec = BackboneSpec::Tiny {
            input_size: 16,
            in_channels: 3,
            widths: vec![4],
            batchnorm: false,
        };
        let (bb, store) = build_backbone::<f64>(spec, "backbone.frames", BackboneInit::Xavier { seed: 1 }).unwrap();
        let x = Tensor::from_fn(&[16, 16, 3], |i| (i as f64 * 0.37).sin().abs());
        let y = bb.forward(&store, "backbone.frames", &x).unwrap();
        assert_eq!(y.shape(), [8, 8, 4]);
        assert_eq!(bb.forward(&store, "backbone.frames", &x).unwrap(), y);
    }

    #[test]
    fn wrong_frame_size_rejected() {
        let (bb, store) =
            build_backbone::<f32>(BackboneSpec::tiny_default(), "b", BackboneInit::Xavier { seed: 0 }).unwrap();
        let err = bb.forward(&store, "b", &Tensor::zeros(&[32, 32, 3])).unwrap_err();
        assert_eq!(err.category(), "shape");
    }

    #[test]
    fn import_lists_everything_missing() {
        let bb = Backbone::new(BackboneSpec::tiny_default()).unwrap();
        let empty = WeightStore::<f32>::default();
        let err = build_backbone(
            bb.spec.clone(),
            "b",
            BackboneInit::Import {
                source: &empty,
                mapping: None,
            },
        )
        .unwrap_err();
        match err {
            Error::MissingWeights(v) => assert_eq!(v.len(), bb.param_shapes("b").len()),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn name_map_parsing() {
        let m = NameMap::parse("# comment\nb.conv1.kernel  Conv1/kernel:0\n\n").unwrap();
        assert_eq!(m.source_name("b.conv1.kernel"), "Conv1/kernel:0");
        assert_eq!(m.source_name("other"), "other");
        assert!(NameMap::parse("a b c").is_err());
    }
}
