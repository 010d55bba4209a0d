//! Workloads: synthetic multi-tone classification and sequential MNIST.

mod mnist;
mod multitone;

pub use mnist::{load_mnist_sequential, mnist_permutation, read_idx_images, read_idx_labels, resolve_data_dir, IdxImages, MNIST_FILES};
pub use multitone::{class_bins, gen_multitone};

use crate::config::{RunConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sequence::RealSequence;

/// Inputs `(B, C, L)` with one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequenceBatch {
    pub inputs: RealSequence,
    pub labels: Vec<usize>,
}

impl LabeledSequenceBatch {
    pub fn new(inputs: RealSequence, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch of the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (_, c, l) = self.inputs.shape();
        let mut values = Vec::with_capacity(indices.len() * c * l);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.inputs.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(RealSequence::new(indices.len(), c, l, values)?, labels)
    }

    /// The first `n` samples (or all of them).
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        self.select(&(0..n).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub length: usize,
    pub classes: usize,
    pub tones_per_class: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub perm_seed: u64,
}

impl TaskSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let t = &cfg.task;
        let spec = Self {
            kind: t.kind,
            length: t.length,
            classes: t.classes,
            tones_per_class: t.tones_per_class,
            amplitude: t.amplitude,
            noise: t.noise,
            train_size: t.train_size,
            test_size: t.test_size,
            perm_seed: t.perm_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 16 {
            return Err(Error::TaskSpec(format!("L must be >= 16, got {}", self.length)));
        }
        if self.classes < 2 {
            return Err(Error::TaskSpec(format!("K must be >= 2, got {}", self.classes)));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::TaskSpec(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::TaskSpec(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledSequenceBatch,
    pub test: LabeledSequenceBatch,
}

/// Builds both splits of the configured task. Multitone splits come from
/// independent forks of `rng`.
pub fn load_task(cfg: &RunConfig, rng: &Rng) -> Result<Splits> {
    let spec = TaskSpec::from_config(cfg)?;
    match spec.kind {
        TaskKind::Multitone => Ok(Splits {
            train: gen_multitone(&spec, spec.train_size, &mut rng.fork(101))?,
            test: gen_multitone(&spec, spec.test_size, &mut rng.fork(102))?,
        }),
        TaskKind::Smnist | TaskKind::Psmnist => {
            let dir = resolve_data_dir(&cfg.task.data_dir);
            let (train, test) = load_mnist_sequential(&dir, &spec)?;
            Ok(Splits {
                train: train.truncate(spec.train_size)?,
                test: test.truncate(spec.test_size)?,
            })
        }
    }
}

/// Index batches of one epoch, shuffled by `rng`. The last batch may be short.
pub fn epoch_batches(samples: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    #[test]
    fn epoch_batches_cover_every_sample_once() {
        let mut rng = make_rng(1);
        let batches = epoch_batches(103, 10, &mut rng);
        assert_eq!(batches.len(), 11);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn select_keeps_labels_aligned() {
        let inputs = RealSequence::new(3, 1, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let batch = LabeledSequenceBatch::new(inputs, vec![7, 8, 9]).unwrap();
        let sub = batch.select(&[2, 0]).unwrap();
        assert_eq!(sub.labels, vec![9, 7]);
        assert_eq!(sub.inputs.values(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn spec_validation() {
        let mut cfg = RunConfig::default();
        cfg.task.amplitude = 0.0;
        assert!(TaskSpec::from_config(&cfg).is_err());
    }
}
