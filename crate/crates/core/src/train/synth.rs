//! Synthetic motion clips standing in for real violence datasets.
//!
//! Each clip shows a few soft-edged blobs over a static textured
//! background. Every blob oscillates around a centre with the same spatial
//! amplitude in both classes, so single frames and their background
//! suppression look alike. The classes differ in how the blobs move over
//! time:
//!
//! * violent proxy: every frame puts each blob at a fresh random offset in
//!   the outer part of the amplitude disc (fast, erratic);
//! * nonviolent proxy: each blob drifts along a straight line through the
//!   disc over the whole clip (slow, smooth).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::Label;
use crate::preproc::Clip;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobMeta {
    pub center: (f32, f32),
    pub radius: f32,
    pub amplitude: f32,
    pub color: [f32; 3],
    /// Blob centre per frame, `(row, col)`.
    pub path: Vec<(f32, f32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub label: Label,
    pub seed: u64,
    pub index: usize,
    pub background: f32,
    pub blobs: Vec<BlobMeta>,
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
}

fn synth_clip(seed: u64, index: usize, (t, h, w): (usize, usize, usize)) -> (Clip, SynthMeta) {
    let label = if index.is_multiple_of(2) {
        Label::Violent
    } else {
        Label::Nonviolent
    };
    let mut rng = clip_rng(seed, index);
    let side = h.min(w) as f32;
    let background = rng.random_range(0.1..0.4f32);
    // Fixed low-contrast texture, identical in every frame.
    let phase: (f32, f32) = (
        rng.random_range(0.0..std::f32::consts::TAU),
        rng.random_range(0.0..std::f32::consts::TAU),
    );
    let texture: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f32, (i % w) as f32);
            background + 0.05 * ((0.4 * x + phase.0).sin() * (0.3 * y + phase.1).cos())
        })
        .collect();

    let n_blobs = rng.random_range(2..=3);
    let blobs: Vec<BlobMeta> = (0..n_blobs)
        .map(|_| {
            let radius = rng.random_range(0.06..0.09) * side;
            let amplitude = rng.random_range(0.10..0.14) * side;
            let margin = radius + amplitude + 1.0;
            let center = (
                rng.random_range(margin..h as f32 - margin),
                rng.random_range(margin..w as f32 - margin),
            );
            let color = [
                rng.random_range(0.6..1.0f32),
                rng.random_range(0.6..1.0f32),
                rng.random_range(0.6..1.0f32),
            ];
            let path = match label {
                Label::Violent => (0..t)
                    .map(|_| {
                        let r = amplitude * rng.random_range(0.6..1.0f32);
                        let a = rng.random_range(0.0..std::f32::consts::TAU);
                        (center.0 + r * a.sin(), center.1 + r * a.cos())
                    })
                    .collect(),
                Label::Nonviolent => {
                    let a = rng.random_range(0.0..std::f32::consts::TAU);
                    let (dy, dx) = (a.sin(), a.cos());
                    (0..t)
                        .map(|i| {
                            let s = 0.75 * amplitude * (2.0 * i as f32 / (t - 1).max(1) as f32 - 1.0);
                            (center.0 + s * dy, center.1 + s * dx)
                        })
                        .collect()
                }
            };
            BlobMeta {
                center,
                radius,
                amplitude,
                color,
                path,
            }
        })
        .collect();

    let mut data = Vec::with_capacity(t * h * w * 3);
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                let mut px = [texture[y * w + x]; 3];
                for b in &blobs {
                    let (cy, cx) = b.path[f];
                    let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
                    // One-pixel soft edge.
                    let cover = (b.radius + 0.5 - d).clamp(0.0, 1.0);
                    for (p, c) in px.iter_mut().zip(b.color) {
                        *p += cover * (c - *p);
                    }
                }
                data.extend(px.map(|v| v.clamp(0.0, 1.0)));
            }
        }
    }
    let frames = Tensor::new(&[t, h, w, 3], data).expect("sized");
    let clip = Clip::new(frames, format!("synth-{seed}-{index:05}")).expect("valid clip");
    let meta = SynthMeta {
        label,
        seed,
        index,
        background,
        blobs,
    };
    (clip, meta)
}

/// `n` clips (even), alternating violent / nonviolent. Clip `i` depends only
/// on `(seed, i)`.
pub fn make_synth(n: usize, seed: u64, shape: (usize, usize, usize)) -> Result<Dataset> {
    let (t, h, w) = shape;
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::invalid(
            "make_synth",
            format!("n must be a positive even count, got {n}"),
        ));
    }
    if t < 2 || h < 16 || w < 16 {
        return Err(Error::invalid(
            "make_synth",
            format!("clip shape {shape:?} too small (need T ≥ 2, 16×16)"),
        ));
    }
    let examples = (0..n)
        .map(|i| {
            let (clip, meta) = synth_clip(seed, i, shape);
            Example {
                clip,
                label: meta.label,
                meta: Some(meta),
            }
        })
        .collect();
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::frame_difference;

    #[test]
    fn balanced_and_seeded() {
        let a = make_synth(2, 5, (4, 32, 32)).unwrap();
        assert_eq!(a.examples[0].label, Label::Violent);
        assert_eq!(a.examples[1].label, Label::Nonviolent);
        let b = make_synth(2, 5, (4, 32, 32)).unwrap();
        assert_eq!(a.examples[1].clip.frames(), b.examples[1].clip.frames());
        assert!(make_synth(3, 5, (4, 32, 32)).is_err());
    }

    #[test]
    fn violent_moves_more() {
        let d = make_synth(16, 11, (16, 64, 64)).unwrap();
        let mean_fd = |label| {
            let v: Vec<f64> = d
                .examples
                .iter()
                .filter(|e| e.label == label)
                .map(|e| {
                    let fd = frame_difference(&e.clip);
                    fd.data().iter().map(|v| v.abs() as f64).sum::<f64>() / fd.len() as f64
                })
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let ratio = mean_fd(Label::Violent) / mean_fd(Label::Nonviolent);
        assert!(ratio >= 5.0, "ratio {ratio}");
    }
}
