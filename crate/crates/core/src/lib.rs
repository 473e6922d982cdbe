//! Core algorithms for an irregular-token vision backbone.
//!
//! Tokens are 2D positions carrying feature vectors. A stage orders them along a
//! space-filling curve over coarse anchors, cuts the order into equal-size
//! clusters, lets every token attend to the members of its nearest clusters and
//! finally merges learned, importance-weighted neighborhoods around a subset of
//! tokens to produce the (smaller, irregular) token set of the next stage.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, rendering and the
//! command-line driver live in the companion `aff` crate.
//!
//! Modules:
//! - [`sfc`]: anchor grids and curve orderings (scanline, Peano, Hilbert).
//! - [`clustering`]: balanced clustering and the silhouette metric.
//! - [`neighborhood`]: neighbor tables, relative-position expansion, Shepard interpolation.
//! - [`autodiff`]: tape-based reverse-mode differentiation, optimizers and gradient checking.
//! - [`attention`]: local and global attention transformer blocks.
//! - [`downsample`]: importance scores, grid prior, center selection and neighborhood merging.
//! - [`model`]: patch embedding, stages, classifier, toy dataset and training loop.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod autodiff;
pub mod checks;
pub mod clustering;
pub mod downsample;
pub mod model;
pub mod neighborhood;
pub mod sfc;

mod error;
mod geometry;

pub use error::{Error, Result};
pub use geometry::{BBox, Point};
