//! Saliency-guided acoustic cue analysis for speech emotion recognition.
//!
//! The crate turns a saliency map over a log-Mel spectrogram into something
//! a listener can check: it finds the top-k most relevant time windows,
//! measures expert-referenced voice cues (loudness, shrillness, jitter,
//! shimmer, pitch level, HNR) inside them, and compares those cues against
//! the full clip and against random windows of the same length.
//!
//! ```text
//! wav -> audio -> spectrogram -> saliency -> segmentation -> cues -> validation -> report
//!                                   ^
//!                                 oracle (builtin classifier or ORC1 model server)
//! ```

pub mod audio;
pub mod config;
pub mod cues;
pub mod formats;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod saliency;
pub mod segmentation;
pub mod spectrogram;
pub mod synth;
pub mod validation;

mod error;

pub use audio::Waveform;
pub use config::{AudioConfig, PipelineConfig, RunManifest, TargetPolicy};
pub use cues::{CueAggregate, CueConfig, CueSet, CueVector, PitchTrack};
pub use error::{Error, Result};
pub use oracle::{Arousal, EmotionLabelSet, Oracle, OracleSpec, ProbabilityVector};
pub use pipeline::{run_pipeline, CorpusEntry, RunOptions, RunSummary};
pub use saliency::{OcclusionConfig, SaliencyMap, SaliencyMethod};
pub use segmentation::{SalientSegment, SegmentationConfig, Selection};
pub use spectrogram::{FrameGeometry, LogMelSpectrogram, SpectroConfig};
pub use validation::{Baseline, UtteranceRecord, ValidationRecord};
