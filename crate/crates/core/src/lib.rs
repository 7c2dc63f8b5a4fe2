//! Multimodal classification with sparse mixture-of-experts fusion,
//! cross-modal attention, decoupled reconstruction of missing modalities and
//! contrastive alignment.

#![allow(clippy::needless_range_loop)]

pub mod alignment;
pub mod config;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod graph;
pub mod mixture;
pub mod model;
pub mod nn;
pub mod reconstruction;
pub mod training;

pub use config::{EncodeMode, FinalRouting, MaskStrategy, RunConfig, Scenario, TauMode};
pub use dataio::{generate_synthetic, ingest, write_dataset, Dataset, Modality, SampleRecord, SyntheticSpec};
pub use error::{Error, Result};
pub use evaluation::{MetricReport, Summary};
pub use fusion::ModalityBundle;
pub use model::{Model, ModelMeta};
pub use training::{train, train_dataset, Checkpoint, EpochRecord, LossBreakdown, TrainOutcome};
