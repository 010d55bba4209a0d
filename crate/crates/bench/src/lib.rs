//! Fixtures shared by the criterion benchmarks.

use drf_core::trainer::Trainer;
use drf_core::{make_rng, Model, RealSequence, RunConfig};

/// Single-layer model of 16 neurons with four branches each, sized for `len` steps.
pub fn bench_model(len: usize) -> Model {
    let mut cfg = RunConfig::default();
    cfg.task.length = len;
    cfg.model.widths = vec![16];
    Trainer::new(&cfg, 1).expect("bench config is valid").model
}

/// Standard-normal inputs with one channel and alternating binary labels.
pub fn random_batch(len: usize, batch: usize) -> (RealSequence, Vec<usize>) {
    let mut rng = make_rng(len as u64);
    let x = RealSequence::new(batch, 1, len, (0..batch * len).map(|_| rng.normal()).collect()).expect("shape matches");
    (x, (0..batch).map(|b| b % 2).collect())
}
