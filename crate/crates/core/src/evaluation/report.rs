//! Report files. Tables are CSV with a header row; metadata streams are
//! JSON lines. File names carry the config hash.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Result;

/// `<dir>/<stem>-<short hash>.<ext>`.
pub fn report_path(dir: &Path, stem: &str, config_hash: &str, ext: &str) -> PathBuf {
    let short = &config_hash[..config_hash.len().min(12)];
    dir.join(format!("{stem}-{short}.{ext}"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
