//! Training, file IO, and command-line tooling around `hyperfield-core`:
//! dataset formats, the synthetic-scene oracle, checkpoints, the training
//! loop, and evaluation harnesses.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod synth;
pub mod trainer;
