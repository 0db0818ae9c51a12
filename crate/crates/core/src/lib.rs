//! Tonal tension and expressive performance modeling.
//!
//! The pipeline runs from symbolic input to evaluation:
//!
//! * [`symbolic_io`] parses scores, aligned performances and MIDI files and
//!   groups notes into onset frames (the model's time steps).
//! * [`spiral_array`] and [`tension`] compute cloud diameter, cloud momentum
//!   and tensile strain on the spiral array, normalized by the distance
//!   between enharmonic spellings.
//! * [`score_features`] computes the pitch and metrical descriptors.
//! * [`performance_params`] extracts BPR, dBPR, VEL and dVEL.
//! * [`mi_select`] ranks features by k-nearest-neighbor mutual information.
//! * [`brnn`] is a bidirectional LSTM with multiplicative integration,
//!   trained with RMSProp on mean squared error.
//! * [`eval_stats`] runs cross-validation, significance tests and the
//!   differential sensitivity analysis.
//! * [`synth`] generates reproducible synthetic corpora.

pub mod brnn;
pub mod csv_io;
pub mod dataset;
pub mod error;
pub mod eval_stats;
pub mod mi_select;
pub mod performance_params;
pub mod score_features;
pub mod spiral_array;
pub mod symbolic_io;
pub mod synth;
pub mod tension;

pub use error::{Error, Result};
