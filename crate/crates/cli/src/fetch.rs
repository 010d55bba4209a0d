use std::fs;
use std::io::Read;

use drf_core::tasks::{resolve_data_dir, MNIST_FILES};
use drf_core::{Error, RunConfig};
use flate2::read::GzDecoder;

use crate::{CliError, CliResult};

const DEFAULT_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

/// Downloads `<url>/<name>.gz` for each IDX file and stores it decompressed.
/// Files already present are left alone.
pub fn run(cfg: &RunConfig, url: Option<String>) -> CliResult<()> {
    let base = url
        .or_else(|| Some(cfg.task.mirror_url.clone()).filter(|u| !u.is_empty()))
        .or_else(|| std::env::var("DRF_MNIST_MIRROR").ok().filter(|u| !u.is_empty()))
        .unwrap_or_else(|| DEFAULT_MIRROR.to_string());
    let dir = resolve_data_dir(&cfg.task.data_dir);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    for name in MNIST_FILES {
        let dest = dir.join(name);
        if dest.exists() {
            println!("{} already present", dest.display());
            continue;
        }
        let src = format!("{}/{name}.gz", base.trim_end_matches('/'));
        let resp = ureq::get(&src).call().map_err(|e| CliError::Fetch(format!("{src}: {e}")))?;
        let mut gz = Vec::new();
        resp.into_reader()
            .read_to_end(&mut gz)
            .map_err(|e| CliError::Fetch(format!("{src}: {e}")))?;
        let mut raw = Vec::new();
        GzDecoder::new(&gz[..])
            .read_to_end(&mut raw)
            .map_err(|e| CliError::Fetch(format!("{src}: not a gzip stream ({e})")))?;
        fs::write(&dest, raw).map_err(Error::from)?;
        println!("wrote {}", dest.display());
    }
    Ok(())
}
