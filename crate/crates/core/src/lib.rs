//! Core math for object-context part detection: box algebra, the offset/presence
//! regressor, relative-location scoring and ranked-detection metrics.
//!
//! This crate is `no_std` (with `alloc`) and IO-free; dataset handling, training
//! orchestration and the CLI live in the `partctx` companion crate.

#![no_std]

extern crate alloc;

pub mod geometry;
pub mod metrics;
pub mod mix;
pub mod regressor;
pub mod scoring;

pub use geometry::{apply_offset, containment_fraction, encode_offset, iou, nms, BBox, OffsetVector};
