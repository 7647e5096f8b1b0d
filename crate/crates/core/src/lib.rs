//! Anomaly detection for heterogeneous radar plot streams.
//!
//! Two detectors watch the link between a radar and its consumers:
//!
//! * [`field`] reconstructs each plot with an embedding autoencoder and
//!   scores field manipulation per plot and per track;
//! * [`timing`] predicts the next inter-arrival period of a track with an
//!   LSTM and flags missing plots.
//!
//! [`attack`] forges labeled test sets, [`synth`] generates benign
//! sessions, [`eval`] runs the evaluation protocols and [`monitor`] is the
//! streaming deployment.

pub mod attack;
pub mod error;
pub mod eval;
pub mod field;
pub mod model_file;
pub mod monitor;
pub mod nn;
pub mod schema;
pub mod stream;
pub mod synth;
pub mod timing;
pub mod train;

pub use error::{Error, Result};
pub use schema::{CategoricalFeature, FeatureSchema};
pub use stream::{assemble_tracks, parse_plot_line, updating_periods, PlotRecord, SessionStore, Track};
