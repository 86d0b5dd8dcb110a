//! Atomic file commits and content digests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{DriverError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| DriverError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a sibling temp file and renames over `path`, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DriverError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| DriverError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DriverError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DriverError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| DriverError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DriverError::io(path, e))
}

/// `<dir>/*.vol` stems in sorted order.
pub fn list_cases(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| DriverError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| DriverError::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "vol") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// `path` relative to `base` with `/` separators; manifests never store
/// absolute paths so that identical runs in different directories match.
pub fn rel_string(base: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
