//! File formats: SCLW weights, CLP1 raw clips, and frame directories.

mod clp1;
mod frames;
mod sclw;

pub use clp1::{read_clip, read_clp1, write_clp1, CLP1_MAGIC, CLP1_VERSION};
pub use frames::{ingest_image_dir, load_clip, load_dataset, write_dataset, write_frames_ppm};
pub use sclw::{read_sclw, sclw_bytes, write_sclw, ManifestEntry, SCLW_MAGIC, SCLW_VERSION};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn format_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        msg: msg.into(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temp file and rename so readers never see a
/// half-written file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
