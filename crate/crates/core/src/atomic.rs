//! Atomic file output (temp file in the target directory, then rename).

use std::io::Write;
use std::path::Path;

use crate::error::{MltaError, Result};

/// Write `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| MltaError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| MltaError::io(path, e))?;
    tmp.flush().map_err(|e| MltaError::io(path, e))?;
    tmp.persist(path).map_err(|e| MltaError::io(path, e.error))?;
    Ok(())
}
