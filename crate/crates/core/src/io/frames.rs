//! Frame directories and the on-disk dataset layout.
//!
//! A dataset root holds `violent/` and `nonviolent/`; each contains one entry
//! per clip, either a directory of `.ppm`/`.png` frames or a `.clp1` file.

use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::clp1::read_clip;
use super::write_file;
use crate::error::{Error, Result};
use crate::model::Label;
use crate::preproc::Clip;
use crate::tensor::Tensor;
use crate::train::{Dataset, Example, SynthMeta};

const CLASS_DIRS: [(&str, Label); 2] = [("violent", Label::Violent), ("nonviolent", Label::Nonviolent)];

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_frame(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("png"))
}

/// Reads every `.ppm`/`.png` in `dir` in lexicographic filename order into
/// a `T×H×W×3` clip with values in `[0, 1]`.
pub fn ingest_image_dir(dir: &Path) -> Result<Clip> {
    let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_frame(p)).collect();
    if files.is_empty() {
        return Err(image_err(dir, "no .ppm or .png frames"));
    }
    let mut dims = None;
    let mut data = Vec::new();
    for f in &files {
        let img = image::open(f).map_err(|e| image_err(f, e.to_string()))?.into_rgb8();
        let d = img.dimensions();
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(image_err(
                    f,
                    format!("frame is {}×{}, earlier frames are {}×{}", d.0, d.1, first.0, first.1),
                ));
            }
            _ => {}
        }
        data.extend(img.as_raw().iter().map(|&b| f32::from(b) / 255.0));
    }
    let (w, h) = dims.expect("at least one frame");
    let frames = Tensor::new(&[files.len(), h as usize, w as usize, 3], data)?;
    Clip::new(frames, dir.display().to_string())
}

/// A clip from a frame directory or a `.clp1` file.
pub fn load_clip(path: &Path) -> Result<Clip> {
    if path.is_dir() {
        ingest_image_dir(path)
    } else {
        read_clip(path)
    }
}

/// Writes `clip` as `frame_00000.ppm`, `frame_00001.ppm`, … (8-bit binary
/// PPM, values rounded).
pub fn write_frames_ppm(dir: &Path, clip: &Clip) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t, h, w, c) = clip.dims();
    let frame_len = h * w * c;
    for (i, frame) in clip.frames().data().chunks_exact(frame_len).enumerate().take(t) {
        let bytes: Vec<u8> = if c == 3 {
            frame.iter().map(|&v| (v * 255.0).round() as u8).collect()
        } else {
            // Replicate the first channel for non-RGB clips.
            frame
                .chunks_exact(c)
                .flat_map(|p| [(p[0] * 255.0).round() as u8; 3])
                .collect()
        };
        let path = dir.join(format!("frame_{i:05}.ppm"));
        let mut buf = Vec::new();
        PnmEncoder::new(&mut buf)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8)
            .map_err(|e| image_err(&path, e.to_string()))?;
        write_file(&path, &buf)?;
    }
    Ok(())
}

/// Writes `data` under `root` in the dataset layout. Synthetic clips get a
/// `meta.json` next to their frames.
pub fn write_dataset(root: &Path, data: &Dataset) -> Result<()> {
    let mut counters = [0usize; 2];
    for ex in &data.examples {
        let k = usize::from(ex.label == Label::Nonviolent);
        let idx = ex.meta.as_ref().map_or(counters[k], |m| m.index);
        counters[k] += 1;
        let dir = root.join(CLASS_DIRS[k].0).join(format!("clip_{idx:05}"));
        write_frames_ppm(&dir, &ex.clip)?;
        if let Some(meta) = &ex.meta {
            let json = serde_json::to_vec_pretty(meta).expect("meta serializes");
            write_file(&dir.join("meta.json"), &json)?;
        }
    }
    Ok(())
}

/// Loads a dataset written in the layout above. Clips are ordered violent
/// first, then by name.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (sub, label) in CLASS_DIRS {
        let dir = root.join(sub);
        if !dir.is_dir() {
            return Err(Error::invalid("load_dataset", format!("{} is missing", dir.display())));
        }
        for entry in sorted_entries(&dir)? {
            let is_clp = entry.extension().is_some_and(|e| e == "clp1");
            if !entry.is_dir() && !is_clp {
                continue;
            }
            let clip = load_clip(&entry)?;
            let meta = std::fs::read(entry.join("meta.json"))
                .ok()
                .and_then(|b| serde_json::from_slice::<SynthMeta>(&b).ok());
            examples.push(Example { clip, label, meta });
        }
    }
    if examples.is_empty() {
        return Err(Error::invalid(
            "load_dataset",
            format!("no clips under {}", root.display()),
        ));
    }
    Ok(Dataset { examples })
}
