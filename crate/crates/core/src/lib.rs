//! Segment-level discriminative neural clustering (SDNC) for
//! speaker-attributed transcription of long meetings.
//!
//! The crate bundles everything needed to run the parallel SOT + SDNC
//! system and the cascaded spectral-clustering baseline on synthetic
//! meetings, and to score both with DER, WER and the cpWER family.

pub mod assignment;
pub mod augment;
pub mod cluster;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod sdnc;
pub mod segmentation;
pub mod selftest;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use segmentation::{FirstSpeakerSegment, WindowingConfig};
pub use synth::{SotOutput, SynthConfig};
pub use types::*;
pub use cluster::ScConfig;
pub use metrics::DerConfig;
pub use pipeline::{Mode, PipelineConfig};
pub use sdnc::{DecodePlan, SdncConfig, SdncModel, TrainConfig};
