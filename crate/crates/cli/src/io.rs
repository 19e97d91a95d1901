//! File helpers: canonical JSON, atomic writes and glob expansion.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

/// Pretty-printed JSON with a trailing newline. Field order follows the
/// struct declarations, so equal values always produce equal bytes.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("in-memory serialization cannot fail");
    text.push('\n');
    text
}

/// Writes through a temporary file in the destination directory and
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, canonical_json(value).as_bytes())
}

/// Sorted matches of a glob pattern.
pub fn expand_glob(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| CliError::InvalidArgument(format!("bad glob {pattern:?}: {e}")))?;
    let mut out = Vec::new();
    for entry in paths {
        out.push(entry.map_err(|e| {
            let path = e.path().to_path_buf();
            CliError::io(path, e.into())
        })?);
    }
    out.sort();
    Ok(out)
}

/// Scene identifier of a file: its name up to the first dot, so that
/// `scene_0003.scene.json`, `scene_0003.gt.json` and
/// `scene_0003.result.json` share the id `scene_0003`.
pub fn scene_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}
