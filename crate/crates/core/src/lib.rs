//! Elman recurrent language models with two interchangeable forward passes:
//! the classic left-to-right recurrence, and a row-parallel fixed-point
//! iteration over the whole state trajectory that reproduces it exactly in
//! `T` sweeps (and approximates it with bounded context in fewer).
//!
//! Gradients come in three flavors: full backpropagation through time,
//! backpropagation through the unrolled fixed-point sweeps, and a cheaper
//! detached variant that stops gradient flow between sweeps. All of them are
//! deterministic: results are bit-identical across runs, worker counts, and
//! the sequential fallback build (`--no-default-features`).

pub mod corpus;
pub mod elman;
pub mod error;
pub mod eval_bench;
pub mod fpi;
pub mod grad;
pub mod numerics;
pub mod parallel;
pub mod synth;
pub mod trainer;

pub use corpus::{Batch, EncodedCorpus, TokenId, Vocabulary};
pub use elman::{HistoryBlock, ModelParams, StepInput};
pub use error::{Error, Result};
pub use eval_bench::{BenchRow, BenchSpec, SweepOutcome, SweepRow};
pub use fpi::{ForwardEngine, FpiInit, FpiState};
pub use grad::{FdReport, GradMode, GradientSet};
pub use numerics::{Activation, Matrix, Vector};
pub use parallel::WorkerPool;
pub use trainer::{EpochMetrics, LossNorm, OptimizerState, TrainConfig, TrainOutcome};
