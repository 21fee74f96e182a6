use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::kv::KvMap;

/// Resolved settings of a run, written before anything else.
pub const RUN_MANIFEST: &str = "run_manifest.txt";
/// Where the partial outputs of a failed run end up.
pub const QUARANTINE_DIR: &str = "quarantine";
const STAGING_DIR: &str = ".staging";

/// Writes the manifest into `out`, runs `body` against a fresh staging
/// directory and publishes its contents into `out`. On failure the staging
/// directory becomes `out/quarantine` and the error is passed on.
pub(crate) fn with_run_dir<T>(out: &Path, manifest: &KvMap, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    fs::create_dir_all(out)?;
    fs::write(out.join(RUN_MANIFEST), manifest.to_text())?;
    let staging = out.join(STAGING_DIR);
    remove_any(&staging)?;
    fs::create_dir_all(&staging)?;
    match body(&staging) {
        Ok(value) => {
            for entry in fs::read_dir(&staging)? {
                let entry = entry?;
                let target = out.join(entry.file_name());
                remove_any(&target)?;
                fs::rename(entry.path(), target)?;
            }
            fs::remove_dir(&staging)?;
            Ok(value)
        }
        Err(e) => {
            let quarantine: PathBuf = out.join(QUARANTINE_DIR);
            remove_any(&quarantine)?;
            fs::rename(&staging, &quarantine)?;
            Err(e)
        }
    }
}

fn remove_any(path: &Path) -> Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    } else if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(())
}
