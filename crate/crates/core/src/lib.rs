//! Dendritic resonate-and-fire spiking networks with a sequential reference
//! path, an FFT-parallel path, surrogate-gradient training and spectral
//! analysis.

pub mod analysis;
pub mod checkpoint;
pub mod autograd;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fft;
pub mod model;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod sequence;
pub mod tasks;
pub mod trainer;

pub use config::{load_config, Mode, Precision, RunConfig};
pub use dynamics::{DendriticParams, RFParams, SomaParams, SpikeFn};
pub use error::{CheckpointError, ConfigError, DataError, Error, Result};
pub use model::Model;
pub use rng::{make_rng, Rng};
pub use sequence::{ComplexStateSequence, RealSequence, SpikeTrain, TimeGrid};
