//! File formats, overlay rendering and the command-line driver around
//! [`aff_core`].
//!
//! - [`pnm`]: binary PGM (`P5`) and PPM (`P6`) images with maxval 255.
//! - [`tables`]: token dumps, cluster assignments, metric logs and input
//!   positions as CSV.
//! - [`checkpoint`]: parameter stores in a small little-endian binary format.
//! - [`config`]: model configs as JSON.
//! - [`overlay`]: retained tokens drawn as red pixels on the input image.

pub mod checkpoint;
pub mod config;
pub mod overlay;
pub mod pnm;
pub mod tables;

mod error;

pub use error::{Error, Result};
