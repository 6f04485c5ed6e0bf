//! One-dimensional quantum dynamics of wave packets scattering off a
//! double barrier that shrinks, and is driven by a uniform field, in time.
//!
//! Units: `hbar = m = a = 1` throughout.

pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod quad;
pub mod report;
pub mod scenario;
pub mod scatter;
pub mod spectral;
pub mod tdse;
pub mod transforms;
pub mod wkb;

pub use error::{Error, Result};
