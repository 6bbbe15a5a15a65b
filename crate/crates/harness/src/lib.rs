//! Everything around the math: OTB-style datasets, synthetic sequences,
//! evaluation metrics, configuration, checkpoints and oracle self-tests.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod metrics;
pub mod otb;
pub mod pipeline;
pub mod selftest;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use metrics::{eval_metrics, MetricsReport};
pub use otb::{load_otb_sequence, SequenceDataset};
pub use synth::{synth_sequence_gen, SynthSequence, SynthSpec};
