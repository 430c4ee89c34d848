//! File formats: binary PGM input, raw float64 feature files, atomic writes.

mod features;
mod pgm;

pub use features::{
    read_features, write_features, FeatureFile, FeatureHeader, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use pgm::{decode_pgm, encode_pgm8, quantize, read_pgm, write_pgm8};

use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
