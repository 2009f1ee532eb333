//! Property testing of product sources whose copies need not be identical.
//!
//! Given `T` independent copies `rho_1 (x) .. (x) rho_T`, the testers decide
//! whether the average state is close to a reference or far from it, using a
//! single measurement of a symmetric two-local observable. The same machinery
//! covers classical distributions.

pub mod calibration;
pub mod distances;
pub mod efronstein;
pub mod error;
pub mod fixtures;
pub mod matcore;
pub mod observables;
pub mod rng;
pub mod simulate;
pub mod states;
pub mod sweep;
pub mod testers;
pub mod verify;

pub use error::{Error, Result};

/// Version of this library, embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
