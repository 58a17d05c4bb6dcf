//! Files: TKD1 dumps, manifests, JSON/CSV artifacts. Every write goes to a
//! temporary sibling first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tunnelkit_core::embedding::EmbeddingSet;
use tunnelkit_core::manifest::Manifest;

use crate::error::{Result, TkError};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| TkError::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        TkError::io(path, e)
    })
}

pub fn write_dump(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let bytes = set.encode().map_err(|e| TkError::data(path.display().to_string(), e))?;
    write_atomic(path, &bytes)
}

pub fn read_dump(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| not_found_or(path, e))?;
    EmbeddingSet::decode(&bytes).map_err(|e| TkError::data(path.display().to_string(), e))
}

fn not_found_or(path: &Path, e: std::io::Error) -> TkError {
    if e.kind() == std::io::ErrorKind::NotFound {
        TkError::Invalid(format!("file not found: {}", path.display()))
    } else {
        TkError::io(path, e)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| not_found_or(path, e))?;
    serde_json::from_str(&text).map_err(|e| TkError::Invalid(format!("{}: {e}", path.display())))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    read_json(path)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    write_json(path, m)
}

/// Directory that relative dump paths in a manifest are resolved against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Serializes rows as CSV with a header line.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| TkError::Invalid(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| TkError::Invalid(format!("csv: {e}")))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| not_found_or(path, e))?;
    parse_csv(file, &path.display().to_string())
}

pub fn parse_csv<T: DeserializeOwned, R: std::io::Read>(reader: R, label: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| TkError::Invalid(format!("{label}: row {}: {e}", i + 1))))
        .collect()
}
