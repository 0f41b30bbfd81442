//! Loss, optimizer, training loop, evaluation and synthetic data.

mod optim;
mod synth;

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{amsgrad_step, lr_at_epoch, AmsgradConfig, LrSchedule, Moments, OptState};
pub use synth::{make_synth, BlobMeta, SynthMeta};

use crate::autodiff::{Exec, Tape};
use crate::backbone::{apply_bn_updates, BnMode, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::model::{Label, Model, Sample};
use crate::ops::is_deterministic;
use crate::preproc::{prepare_streams, AugmentSpec, Clip, PrepMode};
use crate::tensor::Tensor;

/// Binary cross-entropy of probability `σ(z)` against `y`, in the stable
/// logit form `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_loss(logit: f64, y: f64) -> f64 {
    crate::autodiff::bce_logit(logit, y)
}

/// Same loss from a probability; `p` is clamped to `[1e-15, 1 − 1e-15]`
/// before converting to a logit.
pub fn bce_loss_prob(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    bce_loss((p / (1.0 - p)).ln(), y)
}

#[derive(Debug, Clone)]
pub struct Example {
    pub clip: Clip,
    pub label: Label,
    pub meta: Option<SynthMeta>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Same clips with every label inverted.
    pub fn flipped(&self) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    label: match e.label {
                        Label::Violent => Label::Nonviolent,
                        Label::Nonviolent => Label::Violent,
                    },
                    ..e.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub optimizer: AmsgradConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains on eval-mode (centre-crop) inputs.
    pub augment: Option<AugmentSpec>,
    /// Stop after this many epochs without a better validation accuracy.
    pub patience: Option<usize>,
    /// Stop once eval-mode training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: LrSchedule::default(),
            optimizer: AmsgradConfig::default(),
            batch_size: 4,
            epochs: 50,
            seed: 0,
            augment: Some(AugmentSpec::default()),
            patience: None,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train_config", "batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.3e} loss={:.6} train_acc={:.4}",
            self.epoch, self.lr, self.loss, self.train_acc
        )?;
        match self.val_acc {
            Some(v) => write!(f, " val_acc={v:.4}")?,
            None => write!(f, " val_acc=-")?,
        }
        write!(f, " time={:.3}s", self.seconds)
    }
}

fn map_clips<F>(data: &Dataset, f: F) -> Result<Vec<Sample>>
where
    F: Fn(usize, &Example) -> Result<Sample> + Sync,
{
    if is_deterministic() {
        data.examples.iter().enumerate().map(|(i, e)| f(i, e)).collect()
    } else {
        data.examples.par_iter().enumerate().map(|(i, e)| f(i, e)).collect()
    }
}

/// Eval-mode stream inputs for every clip.
pub fn eval_samples(model: &Model, data: &Dataset) -> Result<Vec<Sample>> {
    map_clips(data, |_, e| {
        Ok(prepare_streams(&e.clip, &model.cfg.input, PrepMode::Eval)?.into())
    })
}

const EVAL_BATCH: usize = 8;

/// Probability of `violent` for every clip.
pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        out.extend(model.probabilities(chunk)?);
    }
    Ok(out)
}

fn accuracy(probs: &[f64], labels: impl Iterator<Item = Label>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, l) in probs.iter().zip(labels) {
        hit += usize::from(Label::from_probability(*p) == l);
        n += 1;
    }
    hit as f64 / n.max(1) as f64
}

/// Fraction of clips whose thresholded prediction matches the label, with
/// deterministic centre-crop preprocessing.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let probs = predict_all(model, &eval_samples(model, data)?)?;
    Ok(accuracy(&probs, data.examples.iter().map(|e| e.label)))
}

/// Mean loss and logits of one batch, plus its gradients applied.
fn train_step(
    model: &mut Model,
    batch: &[Sample],
    labels: &[Label],
    opt: &mut OptState,
    lr: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let mut updates = Vec::new();
    let logits = model.forward_with(&mut tape, batch, BnMode::Train, &mut updates)?;
    let y = Tensor::new(&[labels.len(), 1], labels.iter().map(|l| l.target() as f32).collect())?;
    let loss = tape.bce_with_logits(&logits, y)?;
    let loss_value = tape.value(&loss).item() as f64;
    let z: Vec<f64> = tape.value(&logits).data().iter().map(|&v| v as f64).collect();
    let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
    amsgrad_step(&mut model.weights, &grads, opt, lr)?;
    apply_bn_updates(&mut model.weights, &updates, BN_MOMENTUM)?;
    Ok((loss_value, z))
}

/// Trains `model` in place. `on_epoch` sees each log line as it is produced.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("fit", "empty training set"));
    }
    let mut opt = OptState::new(cfg.optimizer);
    let mut logs = Vec::new();
    let fixed = match cfg.augment {
        None => Some(eval_samples(model, train)?),
        Some(_) => None,
    };
    let val_samples = val.map(|v| eval_samples(model, v)).transpose()?;
    let (mut best, mut since_best) = (f64::NEG_INFINITY, 0usize);
    let n = train.len();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.schedule.at(epoch);
        let samples = match (&fixed, &cfg.augment) {
            (Some(s), _) => s.clone(),
            (None, Some(spec)) => {
                let spec = AugmentSpec {
                    seed: spec.seed ^ cfg.seed,
                    ..*spec
                };
                map_clips(train, |i, e| {
                    let mode = PrepMode::Train {
                        augment: &spec,
                        clip_index: (epoch * n + i) as u64,
                    };
                    Ok(prepare_streams(&e.clip, &model.cfg.input, mode)?.into())
                })?
            }
            (None, None) => unreachable!(),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
        ));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let labels: Vec<Label> = idx.iter().map(|&i| train.examples[i].label).collect();
            let (loss, z) = train_step(model, &batch, &labels, &mut opt, lr)?;
            loss_sum += loss * idx.len() as f64;
            hits += z
                .iter()
                .zip(&labels)
                .filter(|(z, l)| Label::from_probability(crate::ops::elementwise::sigmoid(**z)) == **l)
                .count();
        }
        let val_acc = match (&val_samples, val) {
            (Some(s), Some(v)) => Some(accuracy(&predict_all(model, s)?, v.examples.iter().map(|e| e.label))),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / n as f64,
            train_acc: hits as f64 / n as f64,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
        if let Some(target) = cfg.target_accuracy {
            let acc = match &fixed {
                Some(s) => accuracy(&predict_all(model, s)?, train.examples.iter().map(|e| e.label)),
                None => evaluate(model, train)?,
            };
            if acc >= target {
                break;
            }
        }
        if let (Some(patience), Some(v)) = (cfg.patience, val_acc) {
            if v > best {
                best = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok(logs)
}
