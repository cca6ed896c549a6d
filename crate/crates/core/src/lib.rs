//! Closed-loop activation-threshold control for simulated event cameras.
//!
//! The pipeline runs from still images to illuminance video ([`scene`]),
//! through a per-column-thresholded pixel simulator ([`sensor`]) and tent
//! binning ([`binning`]), into a recurrent reconstructor ([`recon`]). A
//! per-column controller ([`control`]) picks thresholds every fourth bin; it
//! is trained jointly with the reconstructor ([`trainer`]) and can be driven
//! at a fixed event-rate target ([`governor`]). [`harness`] ties these into
//! experiments, and [`io`] holds the on-disk formats.

pub mod binning;
pub mod config;
pub mod control;
mod error;
pub mod governor;
pub mod harness;
mod init;
pub mod io;
pub mod metrics;
pub mod recon;
pub mod scene;
pub mod sensor;
pub mod trainer;

pub use error::{Error, Result};
pub use evslab_autograd::Tensor;

/// Bins per control window; thresholds may only change on window boundaries.
pub const CADENCE: usize = 4;

/// Reconstruction bin rate assumed when mapping bins to seconds.
pub const BIN_RATE_HZ: f64 = 30.0;
