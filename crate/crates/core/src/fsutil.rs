use std::io::Write;
use std::path::Path;

use crate::error::{Result, SpinError};

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| SpinError::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| SpinError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| SpinError::io(&tmp, e))?;
    f.sync_all().map_err(|e| SpinError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| SpinError::io(path, e))
}
