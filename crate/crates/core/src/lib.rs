//! Confident kernel sparse coding.
//!
//! Learns a non-negative, sparse dictionary `Phi(Y) A` over a precomputed Gram
//! matrix, with discriminative terms that push each sample to be reconstructed
//! from a single class, and classifies new samples by the class that
//! contributes most to their reconstruction.

pub mod cli;
pub mod error;
pub mod io;
pub mod kernelcore;
pub mod labels;
pub mod metrics;
pub mod nqp;
pub mod recall;
pub mod synthetic;
pub mod train;

pub use error::{CkscError, Result};
pub use kernelcore::{CrossKernel, KernelMatrix, TimeSeries};
pub use labels::LabelMatrix;
pub use nqp::{NqpConfig, NqpSolution, QuadProgram};
pub use recall::{Prediction, Recall};
pub use train::{train, Hyperparams, TrainedModel};
