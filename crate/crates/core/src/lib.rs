//! Contactless respiratory-pattern analysis.
//!
//! The pipeline turns multi-channel chest-motion observations into a single
//! respiratory signal, extracts rate and amplitude features along a peak
//! path and a wavelet-ridge path, fuses them, and classifies nine breathing
//! patterns with a one-vs-one linear SVM.

pub mod augment;
pub mod classify;
pub mod dsp;
pub mod error;
pub mod extract;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod prep;
pub mod record;
pub mod refine;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    FeatureSeries, FeatureVector, LabeledSegment, ObservationMatrix, PatternLabel, RawRecord,
    RespiratorySignal,
};
