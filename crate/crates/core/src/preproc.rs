//! Clip pre-processing: sampling, resizing, augmentation, and the two
//! stream inputs (background-suppressed frames and frame differences).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A video clip, `T×H×W×C` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    frames: Tensor<f32>,
    pub source: String,
    pub fps: Option<f32>,
}

impl Clip {
    pub fn new(frames: Tensor<f32>, source: impl Into<String>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::invalid(
                "clip",
                format!("expected T×H×W×C, got {:?}", frames.shape()),
            ));
        }
        if frames.shape()[0] < 2 {
            return Err(Error::invalid("clip", "a clip needs at least 2 frames"));
        }
        if let Some(i) = frames.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "clip",
                format!("value {} at index {i} outside [0, 1]", frames.data()[i]),
            ));
        }
        Ok(Clip {
            frames,
            source: source.into(),
            fps: None,
        })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(T, H, W, C)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2], s[3])
    }

    fn with_frames(&self, frames: Tensor<f32>) -> Clip {
        Clip {
            frames,
            source: self.source.clone(),
            fps: self.fps,
        }
    }
}

/// Indices `⌊i·T/n⌋` for `i ∈ [0, n)`.
pub fn sample_indices(t: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * t / n).collect()
}

/// Picks `n` frames uniformly. Fewer than `n` frames is an error unless
/// `allow_duplicates` is set, in which case frames repeat.
pub fn uniform_sample(clip: &Clip, n: usize, allow_duplicates: bool) -> Result<Clip> {
    let t = clip.len();
    if n < 2 {
        return Err(Error::invalid("uniform_sample", "n must be at least 2"));
    }
    if t < n && !allow_duplicates {
        return Err(Error::invalid(
            "uniform_sample",
            format!("clip has {t} frames, fewer than the {n} requested; enable frame duplication to repeat frames"),
        ));
    }
    let (_, h, w, c) = clip.dims();
    let frame = h * w * c;
    let src = clip.frames.data();
    let mut data = Vec::with_capacity(n * frame);
    for i in sample_indices(t, n) {
        data.extend_from_slice(&src[i * frame..(i + 1) * frame]);
    }
    Ok(clip.with_frames(Tensor::new(&[n, h, w, c], data)?))
}

/// Source coordinate and interpolation weight for half-pixel-centred
/// bilinear resampling.
fn taps(out: usize, len: usize) -> Vec<(usize, usize, f32)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of every frame of a `T×H×W×C` tensor to `out_h×out_w`.
pub fn resize_frames(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (t, h, w, c) = x.nhwc("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", "output size must be positive"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let (ty, tx) = (taps(out_h, h), taps(out_w, w));
    let src = x.data();
    let mut out = Vec::with_capacity(t * out_h * out_w * c);
    for f in 0..t {
        let base = f * h * w * c;
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                for ch in 0..c {
                    let p = |yy: usize, xx: usize| src[base + (yy * w + xx) * c + ch];
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![out_h, out_w, c]
    } else {
        vec![t, out_h, out_w, c]
    };
    Tensor::new(&shape, out)
}

pub fn resize_bilinear(clip: &Clip, out_h: usize, out_w: usize) -> Result<Clip> {
    Ok(clip.with_frames(resize_frames(&clip.frames, out_h, out_w)?))
}

/// Spatial crop of every frame.
pub fn crop_frames(x: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (t, fh, fw, c) = x.nhwc("crop")?;
    if h == 0 || w == 0 || top + h > fh || left + w > fw {
        return Err(Error::invalid(
            "crop",
            format!("window {h}×{w} at ({top}, {left}) outside {fh}×{fw}"),
        ));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(t * h * w * c);
    for f in 0..t {
        for y in top..top + h {
            let row = ((f * fh + y) * fw + left) * c;
            out.extend_from_slice(&src[row..row + w * c]);
        }
    }
    Tensor::new(&[t, h, w, c], out)
}

/// Centred square crop of side `min(side, H, W)`.
pub fn center_crop(x: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    let (_, h, w, _) = x.nhwc("center_crop")?;
    let (ch, cw) = (side.min(h), side.min(w));
    crop_frames(x, (h - ch) / 2, (w - cw) / 2, ch, cw)
}

pub fn flip_horizontal(x: &Tensor<f32>) -> Tensor<f32> {
    let (t, h, w, c) = x.nhwc("flip").expect("frame tensor");
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for f in 0..t {
        for y in 0..h {
            for xx in (0..w).rev() {
                let p = ((f * h + y) * w + xx) * c;
                out.extend_from_slice(&src[p..p + c]);
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

/// Normalized 1-D Gaussian taps with radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders; `sigma <= 0` is a no-op.
pub fn gaussian_blur(x: &Tensor<f32>, sigma: f32) -> Tensor<f32> {
    if sigma <= 0.0 {
        return x.clone();
    }
    let (t, h, w, c) = x.nhwc("blur").expect("frame tensor");
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        for f in 0..t {
            for y in 0..h {
                for xx in 0..w {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for (j, &kv) in k.iter().enumerate() {
                            let d = j as isize - r;
                            let (sy, sx) = if horizontal {
                                (y as isize, (xx as isize + d).clamp(0, w as isize - 1))
                            } else {
                                ((y as isize + d).clamp(0, h as isize - 1), xx as isize)
                            };
                            acc += kv * src[((f * h + sy as usize) * w + sx as usize) * c + ch];
                        }
                        out[((f * h + y) * w + xx) * c + ch] = acc;
                    }
                }
            }
        }
        out
    };
    let horiz = pass(x.data(), true);
    Tensor::new(x.shape(), pass(&horiz, false)).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Brightness offset drawn from `[−brightness, brightness]`.
    pub brightness: f32,
    /// Crop side as a fraction of the shorter frame side.
    pub crop_scale: (f32, f32),
    pub flip_prob: f32,
    pub blur_sigma: (f32, f32),
    pub seed: u64,
}

impl AugmentSpec {
    /// No augmentation at all.
    pub fn none() -> Self {
        AugmentSpec {
            brightness: 0.0,
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            blur_sigma: (0.0, 0.0),
            seed: 0,
        }
    }
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            brightness: 0.1,
            crop_scale: (0.6, 1.0),
            flip_prob: 0.5,
            blur_sigma: (0.0, 1.0),
            seed: 0,
        }
    }
}

/// One random draw, shared by every frame of a clip and by both streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub crop_scale: f32,
    /// Offsets of the crop window as fractions of the free margin.
    pub crop_pos: (f32, f32),
    pub flip: bool,
    pub brightness: f32,
    pub blur_sigma: f32,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl AugmentSpec {
    /// The per-clip RNG depends only on `(seed, clip_index)`.
    pub fn draw(&self, clip_index: u64) -> AugmentDraw {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ clip_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let crop_scale = uniform(&mut rng, self.crop_scale).clamp(f32::MIN_POSITIVE, 1.0);
        let crop_pos = (rng.random::<f32>(), rng.random::<f32>());
        let flip = rng.random::<f32>() < self.flip_prob;
        let brightness = uniform(&mut rng, (-self.brightness, self.brightness));
        let blur_sigma = uniform(&mut rng, self.blur_sigma).max(0.0);
        AugmentDraw {
            crop_scale,
            crop_pos,
            flip,
            brightness,
            blur_sigma,
        }
    }
}

impl AugmentDraw {
    /// Crop, resize to `out_h×out_w`, flip, shift brightness, blur, clamp.
    pub fn apply(&self, x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
        let (_, h, w, _) = x.nhwc("augment")?;
        let side = ((self.crop_scale * h.min(w) as f32).round() as usize).clamp(1, h.min(w));
        let (top, left) = (
            ((h - side) as f32 * self.crop_pos.0).floor() as usize,
            ((w - side) as f32 * self.crop_pos.1).floor() as usize,
        );
        let mut y = if side == h && side == w {
            x.clone()
        } else {
            crop_frames(x, top.min(h - side), left.min(w - side), side, side)?
        };
        y = resize_frames(&y, out_h, out_w)?;
        if self.flip {
            y = flip_horizontal(&y);
        }
        if self.brightness != 0.0 {
            y = y.map(|v| v + self.brightness);
        }
        y = gaussian_blur(&y, self.blur_sigma);
        Ok(y.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Applies one augmentation draw to every frame; output keeps the clip's size.
pub fn augment(clip: &Clip, spec: &AugmentSpec, clip_index: u64) -> Result<Clip> {
    let (_, h, w, _) = clip.dims();
    Ok(clip.with_frames(spec.draw(clip_index).apply(&clip.frames, h, w)?))
}

/// `fd_i = frame_{i+1} − frame_i`, signed, `T−1` steps.
pub fn frame_difference(clip: &Clip) -> Tensor<f32> {
    frame_difference_of(&clip.frames)
}

pub fn frame_difference_of(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    let frame: usize = s[1..].iter().product();
    let d = x.data();
    let out: Vec<f32> = d[frame..]
        .iter()
        .zip(&d[..d.len() - frame])
        .map(|(&b, &a)| b - a)
        .collect();
    let mut shape = s.to_vec();
    shape[0] -= 1;
    Tensor::new(&shape, out).expect("T-1 frames")
}

/// Per-pixel temporal mean of all frames.
pub fn mean_frame(x: &Tensor<f32>) -> Vec<f32> {
    let t = x.shape()[0];
    let frame = x.len() / t;
    let mut avg = vec![0.0f64; frame];
    for f in x.data().chunks(frame) {
        for (a, &v) in avg.iter_mut().zip(f) {
            *a += v as f64;
        }
    }
    avg.into_iter().map(|v| (v / t as f64) as f32).collect()
}

/// `bsf_i = |frame_i − mean frame|`.
pub fn background_suppress(clip: &Clip) -> Clip {
    clip.with_frames(background_suppress_of(&clip.frames))
}

pub fn background_suppress_of(x: &Tensor<f32>) -> Tensor<f32> {
    let avg = mean_frame(x);
    let out = x
        .data()
        .chunks(avg.len())
        .flat_map(|f| f.iter().zip(&avg).map(|(&v, &a)| (v - a).abs()))
        .collect();
    Tensor::new(x.shape(), out).expect("same shape")
}

/// Geometry of the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepConfig {
    /// Frames sampled per clip.
    pub frames: usize,
    /// Side the sampled frames are first resized to.
    pub resize: usize,
    /// Side of the model input.
    pub size: usize,
    #[serde(default)]
    pub allow_duplicates: bool,
}

impl PrepConfig {
    pub fn reference() -> Self {
        PrepConfig {
            frames: 32,
            resize: 320,
            size: 224,
            allow_duplicates: false,
        }
    }

    pub fn synthetic() -> Self {
        PrepConfig {
            frames: 16,
            resize: 64,
            size: 64,
            allow_duplicates: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PrepMode<'a> {
    Train { augment: &'a AugmentSpec, clip_index: u64 },
    Eval,
}

/// The two stream inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    /// Background-suppressed frames, `T×S×S×3`, in `[0, 1]`.
    pub bsf: Tensor<f32>,
    /// Frame differences, `(T−1)×S×S×3`, in `[−1, 1]`.
    pub fd: Tensor<f32>,
}

/// Geometric part of the pipeline: sample, resize, then crop to the model
/// input (random crop + augmentation in training, centre crop in eval).
pub fn model_frames(clip: &Clip, cfg: &PrepConfig, mode: PrepMode<'_>) -> Result<Tensor<f32>> {
    let sampled = uniform_sample(clip, cfg.frames, cfg.allow_duplicates)?;
    let resized = resize_frames(&sampled.frames, cfg.resize, cfg.resize)?;
    match mode {
        PrepMode::Train { augment, clip_index } => augment.draw(clip_index).apply(&resized, cfg.size, cfg.size),
        PrepMode::Eval => {
            let cropped = center_crop(&resized, cfg.size)?;
            resize_frames(&cropped, cfg.size, cfg.size)
        }
    }
}

/// Full pre-processing: both streams see geometrically identical frames.
pub fn prepare_streams(clip: &Clip, cfg: &PrepConfig, mode: PrepMode<'_>) -> Result<Streams> {
    let frames = model_frames(clip, cfg, mode)?;
    Ok(Streams {
        bsf: background_suppress_of(&frames),
        fd: frame_difference_of(&frames),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_from(t: usize, h: usize, w: usize, f: impl Fn(usize) -> f32) -> Clip {
        Clip::new(Tensor::from_fn(&[t, h, w, 3], f), "test").unwrap()
    }

    #[test]
    fn clip_validation() {
        assert!(Clip::new(Tensor::zeros(&[1, 2, 2, 3]), "x").is_err());
        assert!(Clip::new(Tensor::full(&[2, 2, 2, 3], 1.5), "x").is_err());
        assert!(Clip::new(Tensor::full(&[2, 2, 2, 3], f32::NAN), "x").is_err());
    }

    #[test]
    fn sampling_indices() {
        assert_eq!(sample_indices(32, 32), (0..32).collect::<Vec<_>>());
        assert_eq!(sample_indices(64, 32), (0..32).map(|i| 2 * i).collect::<Vec<_>>());
        let c = clip_from(150, 2, 2, |i| (i % 7) as f32 / 7.0);
        assert_eq!(uniform_sample(&c, 32, false).unwrap().len(), 32);
        let short = clip_from(10, 2, 2, |_| 0.5);
        let err = uniform_sample(&short, 32, false).unwrap_err().to_string();
        assert!(err.contains("duplication"), "{err}");
        assert_eq!(uniform_sample(&short, 32, true).unwrap().len(), 32);
    }

    #[test]
    fn two_frame_difference() {
        let c = clip_from(2, 3, 3, |i| if i < 27 { 0.2 } else { (i % 5) as f32 / 5.0 });
        let fd = frame_difference(&c);
        assert_eq!(fd.shape(), &[1, 3, 3, 3]);
        for (i, &v) in fd.data().iter().enumerate() {
            assert_eq!(v, c.frames().data()[27 + i] - 0.2);
        }
    }

    #[test]
    fn symmetric_background() {
        let c = clip_from(2, 2, 2, |i| if i < 12 { 0.0 } else { 1.0 });
        let b = background_suppress(&c);
        assert!(b.frames().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bilinear_checkerboard() {
        let x = Tensor::<f32>::from_f64(&[1, 2, 2, 1], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = resize_frames(&x, 4, 4).unwrap();
        // taps along each axis: out 0 → src 0, 1 → 0.25, 2 → 0.75, 3 → 1
        let wts = [0.0f32, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                let (fy, fx) = (wts[oy], wts[ox]);
                let expect = (1.0 - fy) * fx + fy * (1.0 - fx);
                assert!((y.at(&[0, oy, ox, 0]) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_kernel_radius() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
        assert!((gaussian_kernel(0.7).iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn double_flip() {
        let x = Tensor::from_fn(&[2, 3, 4, 3], |i| i as f32 / 72.0);
        assert_eq!(flip_horizontal(&flip_horizontal(&x)), x);
        assert_ne!(flip_horizontal(&x), x);
    }

    #[test]
    fn identity_augmentation() {
        let c = clip_from(3, 8, 8, |i| ((i * 31) % 17) as f32 / 17.0);
        assert_eq!(augment(&c, &AugmentSpec::none(), 5).unwrap(), c);
    }
}
