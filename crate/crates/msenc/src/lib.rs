//! File formats, checkpoints, and the `msenc` command line around
//! [`msenc_core`].
//!
//! Datasets and checkpoints share one container layout: a JSON manifest
//! next to headerless little-endian `f32` (or `u8` mask) blobs. Every file
//! is written to a temporary name and renamed into place.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
mod error;
pub mod report;

pub use error::{Error, Result};
