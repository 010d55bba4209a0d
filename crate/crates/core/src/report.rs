//! CSV artifacts.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: u64,
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub spike_rate: f64,
    pub wallclock_s: f64,
}

/// Row-at-a-time metrics writer, flushed after every row so partial runs
/// leave readable files.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            inner: csv::Writer::from_path(path)?,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes `rows` with a header taken from the row type's field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
