//! The two-stream network: per-stream backbone, convolutional LSTM and
//! 2×2 max-pool, fusion, and a dense classifier head.
//!
//! Stream `frames` consumes background-suppressed frames (`T` steps) and
//! stream `diff` consumes frame differences (`T − 1` steps).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradcheck, Eager, Exec, GradcheckConfig, GradcheckReport};
use crate::backbone::{Backbone, BackboneSpec, BnMode, BnUpdate};
use crate::cells::{cell_param_count, unroll_last_with, CellKind, CellParams};
use crate::error::{Error, Result};
use crate::init::xavier_for;
use crate::ops::{self, Activation};
use crate::preproc::{prepare_streams, Clip, PrepConfig, PrepMode};
use crate::store::WeightStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fusion {
    /// `leaky_relu(F_frames) ⊗ sigmoid(F_diff)`
    M,
    /// Channel concatenation.
    C,
    /// Elementwise sum.
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSet {
    Both,
    FramesOnly,
    DiffOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Frames,
    Diff,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Frames => "frames",
            Stream::Diff => "diff",
        }
    }
}

impl StreamSet {
    pub fn active(self) -> &'static [Stream] {
        match self {
            StreamSet::Both => &[Stream::Frames, Stream::Diff],
            StreamSet::FramesOnly => &[Stream::Frames],
            StreamSet::DiffOnly => &[Stream::Diff],
        }
    }
}

fn default_kernel() -> usize {
    3
}

fn default_slope() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub lstm_filters: usize,
    pub lstm_kind: CellKind,
    #[serde(default = "default_kernel")]
    pub lstm_kernel: usize,
    pub fusion: Fusion,
    pub streams: StreamSet,
    /// Dense widths after flattening; the last must be 1.
    pub head: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    pub input: PrepConfig,
}

impl ModelConfig {
    /// Full-size network: truncated MobileNetV2(0.35), 64 LSTM filters,
    /// head 64 → 16 → 1, 32 frames at 224².
    pub fn reference(fusion: Fusion, streams: StreamSet, lstm_kind: CellKind) -> Self {
        ModelConfig {
            backbone: BackboneSpec::mobilenet(0.35),
            lstm_filters: 64,
            lstm_kind,
            lstm_kernel: 3,
            fusion,
            streams,
            head: vec![64, 16, 1],
            leaky_slope: 0.1,
            input: PrepConfig::reference(),
        }
    }

    /// Desk-scale network for 16 frames of 64×64.
    pub fn tiny(fusion: Fusion, streams: StreamSet) -> Self {
        ModelConfig {
            backbone: BackboneSpec::tiny_default(),
            lstm_filters: 16,
            lstm_kind: CellKind::Separable,
            lstm_kernel: 3,
            fusion,
            streams,
            head: vec![16, 1],
            leaky_slope: 0.1,
            input: PrepConfig::synthetic(),
        }
    }

    /// Smallest full two-stream network: 3 frames of 16×16, `C_h = 8`.
    pub fn gradcheck(fusion: Fusion) -> Self {
        ModelConfig {
            backbone: BackboneSpec::Tiny {
                input_size: 16,
                in_channels: 3,
                widths: vec![4, 4],
                batchnorm: false,
            },
            lstm_filters: 8,
            lstm_kind: CellKind::Separable,
            lstm_kernel: 3,
            fusion,
            streams: StreamSet::Both,
            head: vec![4, 1],
            leaky_slope: 0.1,
            input: PrepConfig {
                frames: 3,
                resize: 16,
                size: 16,
                allow_duplicates: false,
            },
        }
    }

    /// Names accepted by [`ModelConfig::preset`].
    pub const PRESETS: [&'static str; 13] = [
        "reference-m",
        "reference-c",
        "reference-a",
        "reference-frames",
        "reference-diff",
        "reference-m-convlstm",
        "reference-c-convlstm",
        "tiny-m",
        "tiny-c",
        "tiny-a",
        "tiny-frames",
        "tiny-diff",
        "gradcheck",
    ];

    /// A named built-in configuration.
    pub fn preset(name: &str) -> Option<Self> {
        use CellKind::{Dense, Separable};
        use StreamSet::{Both, DiffOnly, FramesOnly};
        Some(match name {
            "reference-m" => Self::reference(Fusion::M, Both, Separable),
            "reference-c" => Self::reference(Fusion::C, Both, Separable),
            "reference-a" => Self::reference(Fusion::A, Both, Separable),
            "reference-frames" => Self::reference(Fusion::M, FramesOnly, Separable),
            "reference-diff" => Self::reference(Fusion::M, DiffOnly, Separable),
            "reference-m-convlstm" => Self::reference(Fusion::M, Both, Dense),
            "reference-c-convlstm" => Self::reference(Fusion::C, Both, Dense),
            "tiny-m" => Self::tiny(Fusion::M, Both),
            "tiny-c" => Self::tiny(Fusion::C, Both),
            "tiny-a" => Self::tiny(Fusion::A, Both),
            "tiny-frames" => Self::tiny(Fusion::M, FramesOnly),
            "tiny-diff" => Self::tiny(Fusion::M, DiffOnly),
            "gradcheck" => Self::gradcheck(Fusion::M),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model_config", msg));
        if self.head.last() != Some(&1) || self.head.contains(&0) {
            return bad(format!("head widths must be nonzero and end in 1, got {:?}", self.head));
        }
        if self.lstm_filters == 0 || self.lstm_kernel.is_multiple_of(2) {
            return bad("lstm_filters must be nonzero and lstm_kernel odd".into());
        }
        if self.input.frames < 2 {
            return bad("at least two frames are needed for a frame difference".into());
        }
        if self.input.size != self.backbone.input_size() {
            return bad(format!(
                "input size {} does not match backbone input size {}",
                self.input.size,
                self.backbone.input_size()
            ));
        }
        if self.input.resize < self.input.size {
            return bad("resize side must be at least the input size".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn steps(&self, stream: Stream) -> usize {
        match stream {
            Stream::Frames => self.input.frames,
            Stream::Diff => self.input.frames - 1,
        }
    }

    /// Channels of the fused map that is flattened into the head.
    pub fn fused_channels(&self) -> usize {
        match (self.streams, self.fusion) {
            (StreamSet::Both, Fusion::C) => 2 * self.lstm_filters,
            _ => self.lstm_filters,
        }
    }
}

/// Applies one fusion rule on executor values.
pub fn fuse_with<T: Scalar, E: Exec<T>>(
    ex: &mut E,
    frames: &E::Value,
    diff: &E::Value,
    kind: Fusion,
    slope: f64,
) -> Result<E::Value> {
    let (a, b) = (ex.shape(frames), ex.shape(diff));
    let compatible = match kind {
        Fusion::M | Fusion::A => a == b,
        Fusion::C => a.len() == b.len() && a[..a.len() - 1] == b[..b.len() - 1],
    };
    if !compatible {
        return Err(Error::shape("fuse", &a, &b));
    }
    match kind {
        Fusion::M => {
            let l = ex.act(Activation::LeakyRelu { slope }, frames)?;
            let s = ex.sigmoid(diff)?;
            ex.mul(&l, &s)
        }
        Fusion::C => ex.concat(frames, diff),
        Fusion::A => ex.add(frames, diff),
    }
}

/// Fusion of two feature maps with the default leaky slope.
pub fn fuse<T: Scalar>(frames: &Tensor<T>, diff: &Tensor<T>, kind: Fusion) -> Result<Tensor<T>> {
    fuse_with(&mut Eager, frames, diff, kind, default_slope())
}

/// A configured network and its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub weights: WeightStore<T>,
}

/// Per-module parameter tally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleCount {
    pub module: String,
    pub params: usize,
}

fn backbone_prefix(s: Stream) -> String {
    format!("backbone.{}", s.name())
}

fn cell_prefix(s: Stream) -> String {
    format!("cell.{}", s.name())
}

/// Deterministic initialization: Xavier kernels, zero biases.
pub fn build_model(cfg: ModelConfig, seed: u64) -> Result<Model<f32>> {
    cfg.validate()?;
    let backbone = Backbone::new(cfg.backbone.clone())?;
    let [_, _, c_x] = backbone.output_shape();
    let mut weights = WeightStore::default();
    for (i, &s) in cfg.streams.active().iter().enumerate() {
        let stream_seed = seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64 + 1);
        backbone.init_store(&backbone_prefix(s), stream_seed, &mut weights)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed ^ 0xce11);
        CellParams::<f32>::init(cfg.lstm_kind, cfg.lstm_kernel, c_x, cfg.lstm_filters, &mut rng)
            .write_to(&mut weights, &cell_prefix(s))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4ead);
    let mut fan_in = head_input_dim(&cfg, &backbone);
    for (i, &w) in cfg.head.iter().enumerate() {
        weights.insert(
            format!("head.dense_{i}.kernel"),
            xavier_for(&mut rng, &[fan_in, w]),
            true,
        )?;
        weights.insert(format!("head.dense_{i}.bias"), Tensor::zeros(&[w]), true)?;
        fan_in = w;
    }
    Ok(Model { cfg, backbone, weights })
}

fn head_input_dim(cfg: &ModelConfig, backbone: &Backbone) -> usize {
    let [h, w, _] = backbone.output_shape();
    (h / 2) * (w / 2) * cfg.fused_channels()
}

/// Closed-form total from the config alone (BN buffers included).
pub fn closed_form_params(cfg: &ModelConfig) -> Result<Vec<ModuleCount>> {
    let backbone = Backbone::new(cfg.backbone.clone())?;
    let [_, _, c_x] = backbone.output_shape();
    let mut rows = Vec::new();
    for s in cfg.streams.active() {
        rows.push(ModuleCount {
            module: backbone_prefix(*s),
            params: backbone.closed_form_params(),
        });
        rows.push(ModuleCount {
            module: cell_prefix(*s),
            params: cell_param_count(cfg.lstm_kind, cfg.lstm_kernel, c_x, cfg.lstm_filters),
        });
    }
    let mut fan_in = head_input_dim(cfg, &backbone);
    let mut head = 0;
    for &w in &cfg.head {
        head += fan_in * w + w;
        fan_in = w;
    }
    rows.push(ModuleCount {
        module: "head".into(),
        params: head,
    });
    Ok(rows)
}

/// Decision at the 0.5 threshold; ties go to `Violent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Violent,
    Nonviolent,
}

impl Label {
    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Label::Violent
        } else {
            Label::Nonviolent
        }
    }

    pub fn target(self) -> f64 {
        match self {
            Label::Violent => 1.0,
            Label::Nonviolent => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Violent => "violent",
            Label::Nonviolent => "nonviolent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub p: f64,
}

/// One clip's stream inputs in the model's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f32> {
    pub bsf: Tensor<T>,
    pub fd: Tensor<T>,
}

impl From<crate::preproc::Streams> for Sample<f32> {
    fn from(s: crate::preproc::Streams) -> Self {
        Sample { bsf: s.bsf, fd: s.fd }
    }
}

impl<T: Scalar> Sample<T> {
    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            bsf: self.bsf.cast(),
            fd: self.fd.cast(),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            backbone: self.backbone.clone(),
            weights: self.weights.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.total_params()
    }

    /// Built tally per module, from the stored tensors.
    pub fn module_counts(&self) -> Vec<ModuleCount> {
        let mut rows: Vec<ModuleCount> = Vec::new();
        for (name, e) in self.weights.iter() {
            let module = match name.split('.').collect::<Vec<_>>()[..] {
                ["head", ..] => "head".to_string(),
                [a, b, ..] => format!("{a}.{b}"),
                _ => name.to_string(),
            };
            match rows.iter_mut().find(|r| r.module == module) {
                Some(r) => r.params += e.tensor.len(),
                None => rows.push(ModuleCount {
                    module,
                    params: e.tensor.len(),
                }),
            }
        }
        rows
    }

    fn check_inputs(&self, batch: &[Sample<T>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("model_forward", "empty batch"));
        }
        let s = self.cfg.input.size;
        for sample in batch {
            for &stream in self.cfg.streams.active() {
                let (x, steps) = match stream {
                    Stream::Frames => (&sample.bsf, self.cfg.steps(stream)),
                    Stream::Diff => (&sample.fd, self.cfg.steps(stream)),
                };
                let want = [steps, s, s, self.backbone.in_channels];
                if x.shape() != want {
                    return Err(Error::shape("model_forward", &want, x.shape()));
                }
            }
        }
        Ok(())
    }

    /// Logits `N×1` for a batch. BN statistics observed in training mode
    /// are appended to `updates`.
    pub fn forward_with<E: Exec<T>>(
        &self,
        ex: &mut E,
        batch: &[Sample<T>],
        mode: BnMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<E::Value> {
        self.check_inputs(batch)?;
        let n = batch.len();
        let [fh, fw, c_x] = self.backbone.output_shape();
        let c_h = self.cfg.lstm_filters;
        let mut pooled = Vec::new();
        for &stream in self.cfg.streams.active() {
            let steps = self.cfg.steps(stream);
            let clips: Vec<Tensor<T>> = batch
                .iter()
                .map(|s| match stream {
                    Stream::Frames => s.bsf.clone(),
                    Stream::Diff => s.fd.clone(),
                })
                .collect();
            // Clip-major stack: row n·steps + t is clip n at time t.
            let x = ex.constant(Tensor::stack(&clips)?);
            let feats = self
                .backbone
                .forward_with(ex, &self.weights, &backbone_prefix(stream), &x, mode, updates)?;
            let xs = (0..steps)
                .map(|t| ex.gather(&feats, (0..n).map(|i| i * steps + t).collect()))
                .collect::<Result<Vec<_>>>()?;
            let cell = CellParams::read_from(
                &self.weights,
                &cell_prefix(stream),
                self.cfg.lstm_kind,
                self.cfg.lstm_kernel,
                c_x,
                c_h,
            )?;
            let vars = cell.register(ex, &cell_prefix(stream));
            let h0 = ex.constant(Tensor::zeros(&[n, fh, fw, c_h]));
            let c0 = ex.constant(Tensor::zeros(&[n, fh, fw, c_h]));
            let h = unroll_last_with(ex, &vars, &xs, h0, c0)?;
            pooled.push(ex.maxpool2(&h)?);
        }
        let fused = match pooled.as_slice() {
            [one] => one.clone(),
            [frames, diff] => fuse_with(ex, frames, diff, self.cfg.fusion, self.cfg.leaky_slope)?,
            _ => unreachable!("one or two streams"),
        };
        let flat_len: usize = ex.shape(&fused)[1..].iter().product();
        let mut y = ex.reshape(&fused, &[n, flat_len])?;
        let layers = self.cfg.head.len();
        for i in 0..layers {
            let w = ex.param(
                &format!("head.dense_{i}.kernel"),
                self.weights.get(&format!("head.dense_{i}.kernel"))?,
            );
            let b = ex.param(
                &format!("head.dense_{i}.bias"),
                self.weights.get(&format!("head.dense_{i}.bias"))?,
            );
            y = ex.pointwise(&y, &w)?;
            y = ex.bias_add(&y, &b)?;
            if i + 1 < layers {
                y = ex.act(
                    Activation::LeakyRelu {
                        slope: self.cfg.leaky_slope,
                    },
                    &y,
                )?;
            }
        }
        Ok(y)
    }

    /// Untraced logits for a batch, stored BN statistics.
    pub fn logits(&self, batch: &[Sample<T>]) -> Result<Vec<f64>> {
        let y = self.forward_with(&mut Eager, batch, BnMode::Infer, &mut Vec::new())?;
        Ok(y.data().iter().map(|v| v.f64()).collect())
    }

    /// `σ(logit)` per sample.
    pub fn probabilities(&self, batch: &[Sample<T>]) -> Result<Vec<f64>> {
        Ok(self.logits(batch)?.into_iter().map(ops::elementwise::sigmoid).collect())
    }
}

impl Model<f32> {
    /// Eval-mode preprocessing, forward pass and threshold.
    pub fn predict(&self, clip: &Clip) -> Result<Prediction> {
        let sample = Sample::from(prepare_streams(clip, &self.cfg.input, PrepMode::Eval)?);
        let p = self.probabilities(&[sample])?[0];
        Ok(Prediction {
            label: Label::from_probability(p),
            p,
        })
    }
}

/// Checks analytic gradients of the mean BCE loss of the whole network
/// against finite differences, in f64, on two random clips (one per label).
/// Batch norm runs in inference mode.
pub fn gradcheck_model(cfg: ModelConfig, seed: u64, gc: &GradcheckConfig) -> Result<GradcheckReport> {
    let label = format!("model_{:?}_{:?}", cfg.fusion, cfg.lstm_kind).to_lowercase();
    let model = build_model(cfg, seed)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let PrepConfig { frames, size, .. } = model.cfg.input;
    let batch = (0..2)
        .map(|_| {
            let t = Tensor::from_fn(&[frames, size, size, model.backbone.in_channels], |_| {
                rng.random_range(0.0..1.0f32)
            });
            let clip = Clip::new(t, "gradcheck")?;
            Ok(Sample::from(prepare_streams(&clip, &model.cfg.input, PrepMode::Eval)?).cast::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = Tensor::from_f64(&[2, 1], &[1.0, 0.0])?;
    let build = |tape: &mut crate::autodiff::Tape<f64>, weights: &WeightStore<f64>| {
        let m = Model {
            cfg: model.cfg.clone(),
            backbone: model.backbone.clone(),
            weights: weights.clone(),
        };
        let logits = m.forward_with(tape, &batch, BnMode::Infer, &mut Vec::new())?;
        tape.bce_with_logits(&logits, labels.clone())
    };
    gradcheck(&label, build, &model.weights, gc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_shapes_and_identities() {
        let f = Tensor::<f64>::from_fn(&[3, 3, 64], |i| (i as f64 * 0.1).sin());
        let z = Tensor::zeros(&[3, 3, 64]);
        assert_eq!(fuse(&f, &f, Fusion::C).unwrap().shape(), [3, 3, 128]);
        assert_eq!(fuse(&f, &f, Fusion::M).unwrap().shape(), [3, 3, 64]);
        assert_eq!(fuse(&f, &z, Fusion::A).unwrap(), f);
        assert!(fuse(&z, &f, Fusion::M).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(fuse(&f, &Tensor::zeros(&[3, 3, 8]), Fusion::M).is_err());
        assert!(fuse(&f, &Tensor::zeros(&[2, 3, 8]), Fusion::C).is_err());
    }

    #[test]
    fn tie_goes_to_violent() {
        assert_eq!(Label::from_probability(0.5), Label::Violent);
        assert_eq!(Label::from_probability(0.4999), Label::Nonviolent);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ModelConfig::reference(Fusion::M, StreamSet::Both, CellKind::Separable);
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.head = vec![64, 2];
        assert!(ModelConfig::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn presets_are_valid() {
        for name in ModelConfig::PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("nope").is_none());
    }

    #[test]
    fn built_counts_match_closed_form() {
        for streams in [StreamSet::Both, StreamSet::FramesOnly] {
            for fusion in [Fusion::M, Fusion::C] {
                let cfg = ModelConfig::tiny(fusion, streams);
                let m = build_model(cfg.clone(), 1).unwrap();
                let closed = closed_form_params(&cfg).unwrap();
                assert_eq!(m.module_counts(), closed);
            }
        }
    }

    #[test]
    fn forward_shapes_and_range() {
        let m = build_model(ModelConfig::gradcheck(Fusion::M), 3).unwrap();
        let sample = Sample {
            bsf: Tensor::from_fn(&[3, 16, 16, 3], |i| ((i * 7) % 11) as f32 / 11.0),
            fd: Tensor::from_fn(&[2, 16, 16, 3], |i| ((i * 5) % 13) as f32 / 13.0 - 0.5),
        };
        let p = m.probabilities(&[sample.clone(), sample.clone()]).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p[0], p[1]);
        let short = Sample {
            fd: Tensor::zeros(&[3, 16, 16, 3]),
            ..sample
        };
        assert_eq!(m.probabilities(&[short]).unwrap_err().category(), "shape");
    }

    #[test]
    fn full_model_gradients() {
        let r = gradcheck_model(ModelConfig::gradcheck(Fusion::M), 1, &GradcheckConfig::default()).unwrap();
        let skipped: usize = r.rows.iter().map(|x| x.skipped).sum();
        let coords: usize = r.rows.iter().map(|x| x.coords).sum();
        assert!(r.pass(), "{r}");
        assert!(skipped * 100 < coords, "skipped {skipped} of {coords}");
    }
}
