//! Object-context part detection pipeline: dataset ingestion, prior building,
//! context combiner, offset-regressor training, relative-location scoring,
//! cue mixing and the evaluation stack.

pub mod combine;
pub mod config;
pub mod context;
pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod schema;
pub mod synth;
pub mod train;
