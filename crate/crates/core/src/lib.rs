//! Geometric regularization workbench.
//!
//! A micro decoder-only transformer trained with an isotropy loss on hidden
//! states and a spectral-entropy loss on attention, plus the tube and grain
//! geometry used to analyse the resulting representations and a harness that
//! checks the associated bounds by brute force.

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod geoloss;
pub mod model;
pub mod geometry;
pub mod metrics;
pub mod verify;
pub mod trainer;
pub mod formats;
