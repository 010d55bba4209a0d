use std::fs;
use std::path::{Path, PathBuf};

use drf_core::{Error, RunConfig};

use crate::CliResult;

/// Creates `<out>/<command>-<YYYYmmdd-HHMMSS>` (with a numeric suffix if it
/// already exists) and writes the resolved config into it.
pub fn create(out: &Path, command: &str, cfg: &RunConfig) -> CliResult<PathBuf> {
    fs::create_dir_all(out).map_err(Error::from)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut dir = out.join(format!("{command}-{stamp}"));
    let mut k = 1;
    while dir.exists() {
        dir = out.join(format!("{command}-{stamp}-{k}"));
        k += 1;
    }
    fs::create_dir(&dir).map_err(Error::from)?;
    cfg.save(dir.join("config.toml")).map_err(Error::from)?;
    Ok(dir)
}
