//! Class-incremental span classification with embedding-space separation,
//! memory compaction, herding replay and forward prompt transfer.
//!
//! Module map:
//! - [`numerics`]: vector/matrix math, differentiable primitives, gradient checks
//! - [`model`]: span head, growing classifier, prompt bank
//! - [`losses`]: new/memory cross-entropy, separation, calibration, composite
//! - [`memory`]: herding selection, replay buffer, prototypes
//! - [`stream`]: task streams, splits, permutations
//! - [`trainer`]: per-task training and lifelong runs
//! - [`metrics`]: micro-F1, accuracy matrix, BWT/FWT, reports
//! - [`datagen`]: synthetic corpora and dump I/O
//! - [`experiment`]: configs and the `run`/`ablate`/`sweep-memory`/`report` commands

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod stream;
pub mod trainer;

pub use error::{EscoError, Result};
pub use losses::HyperParams;
pub use model::{Model, ModelConfig, SpanSample};
pub use stream::{Corpus, TaskStream};
pub use trainer::Method;
