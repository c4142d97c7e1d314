//! Certified frequency-domain analysis and structured controller synthesis for
//! infinite-dimensional linear plants: delay systems and boundary-controlled PDEs.

pub mod error;
pub mod normest;
pub mod nyquist;
pub mod plants;
pub mod quasipoly;
pub mod sampling;
pub mod sim;
pub mod synth;
pub mod xfer;

pub use error::{Error, Result};
