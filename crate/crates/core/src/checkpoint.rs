//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8 | magic `DRFCKPT\0` |
//! | 4 | format version (u32) |
//! | 8 + n | config TOML, u64 length prefix then UTF-8 |
//! | 8 | input channels (u64) |
//! | 8 | optimizer step counter (u64) |
//! | 8 + 8 + 16 | RNG seed (u64), stream (u64), word position (u128) |
//! | 8 | Adam time step (u64) |
//! | 8 | array count (u64) |
//! | ... | arrays: u64 length then f64 values |
//!
//! Arrays are the parameter tensors in [`Model::tensors`] order, then the
//! Adam first moments, then the second moments, in the same order.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CheckpointError, Result};
use crate::model::Model;
use crate::rng::{Rng, RngState};
use crate::trainer::{Adam, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub input_channels: u64,
    pub step: u64,
    pub rng: RngState,
    pub adam_t: u64,
    pub params: Vec<Vec<f64>>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_trainer(tr: &Trainer) -> Self {
        Self {
            config: tr.config.clone(),
            input_channels: tr.model.input_channels() as u64,
            step: tr.step,
            rng: tr.rng().state(),
            adam_t: tr.opt.t,
            params: tr.model.tensors().iter().map(|t| t.to_vec()).collect(),
            adam_m: tr.opt.m.clone(),
            adam_v: tr.opt.v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_toml_string();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for v in [self.input_channels, self.step, self.rng.seed, self.rng.stream] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.adam_t.to_le_bytes());
        let arrays: Vec<&Vec<f64>> = self.params.iter().chain(&self.adam_m).chain(&self.adam_v).collect();
        out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
        for a in arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        let at = r.pos;
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.corrupt_at(at))?;
        let config = RunConfig::from_toml_str(text).map_err(|_| r.corrupt_at(at))?;
        let input_channels = r.u64()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let adam_t = r.u64()?;
        let at = r.pos;
        let count = r.u64()? as usize;
        if count % 3 != 0 {
            return Err(r.corrupt_at(at));
        }
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| r.corrupt())?)?;
            arrays.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<f64>>());
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt());
        }
        let adam_v = arrays.split_off(2 * count / 3);
        let adam_m = arrays.split_off(count / 3);
        Ok(Self {
            config,
            input_channels,
            step,
            rng: RngState { seed, stream, word_pos },
            adam_t,
            params: arrays,
            adam_m,
            adam_v,
        })
    }

    /// Rebuilds the trainer. Tensor shapes must match the model the config
    /// describes.
    pub fn into_trainer(self) -> Result<Trainer> {
        let mut tr = Trainer::new(&self.config, self.input_channels as usize)?;
        let shapes: Vec<usize> = tr.model.tensors().iter().map(|t| t.len()).collect();
        let fits = |arrays: &[Vec<f64>]| arrays.len() == shapes.len() && arrays.iter().zip(&shapes).all(|(a, &n)| a.len() == n);
        if !(fits(&self.params) && fits(&self.adam_m) && fits(&self.adam_v)) {
            return Err(CheckpointError::CorruptPayload { offset: 0 }.into());
        }
        for (dst, src) in tr.model.tensors_mut().into_iter().zip(self.params) {
            *dst = src;
        }
        tr.model.bump_version();
        let opt = Adam {
            m: self.adam_m,
            v: self.adam_v,
            t: self.adam_t,
            ..tr.opt.clone()
        };
        Ok(Trainer::from_parts(self.config, tr.model, opt, self.step, Rng::from_state(self.rng)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize) -> crate::error::Error {
        CheckpointError::CorruptPayload { offset: offset as u64 }.into()
    }

    fn corrupt(&self) -> crate::error::Error {
        self.corrupt_at(self.pos)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.corrupt())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(tr: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, Checkpoint::from_trainer(tr).to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CheckpointError::MissingFile(path.to_path_buf()).into(),
        _ => crate::error::Error::from(e),
    })?;
    Checkpoint::from_bytes(&bytes)?.into_trainer()
}

/// Model only, for evaluation and analysis.
pub fn load_model(path: impl AsRef<Path>) -> Result<(RunConfig, Model)> {
    let tr = load_checkpoint(path)?;
    Ok((tr.config, tr.model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tasks::load_task;

    fn trainer() -> (Trainer, crate::tasks::Splits) {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.task.length = 64;
        cfg.task.classes = 2;
        cfg.task.tones_per_class = 2;
        cfg.task.train_size = 24;
        cfg.task.test_size = 8;
        cfg.model.n = 2;
        cfg.model.widths = vec![4];
        cfg.optim.batch_size = 8;
        let tr = Trainer::new(&cfg, 1).unwrap();
        let data = load_task(&cfg, tr.rng()).unwrap();
        (tr, data)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (mut tr, data) = trainer();
        tr.train_steps(&data.train, 2).unwrap();
        let bytes = Checkpoint::from_trainer(&tr).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_trainer().unwrap();
        assert_eq!(Checkpoint::from_trainer(&back).to_bytes(), bytes);
        assert_eq!(back.model, tr.model);
    }

    #[test]
    fn truncation_is_corrupt_payload() {
        let (tr, _) = trainer();
        let bytes = Checkpoint::from_trainer(&tr).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::CorruptPayload { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&longer),
            Err(Error::Checkpoint(CheckpointError::CorruptPayload { .. }))
        ));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let (tr, _) = trainer();
        let mut bytes = Checkpoint::from_trainer(&tr).to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 2, expected: 1 }))
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(CheckpointError::BadMagic))));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_checkpoint("/nonexistent/model.ckpt"),
            Err(Error::Checkpoint(CheckpointError::MissingFile(_)))
        ));
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (mut a, data) = trainer();
        a.train_steps(&data.train, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        save_checkpoint(&a, &path).unwrap();
        let rest_a = a.train_steps(&data.train, 4).unwrap();
        let mut b = load_checkpoint(&path).unwrap();
        let rest_b = b.train_steps(&data.train, 4).unwrap();
        assert_eq!(rest_a.last().unwrap().loss.to_bits(), rest_b.last().unwrap().loss.to_bits());
        assert_eq!(a.model, b.model);
    }
}
