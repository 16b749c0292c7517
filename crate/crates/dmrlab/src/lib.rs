//! dmrlab: a numerical laboratory for backward SDEs whose constraints act on
//! the distribution of the solution rather than on its paths.
//!
//! The crate builds deterministic two-sided Skorokhod maps with nonlinear
//! boundaries, solves BSDEs with double mean reflections by a Picard loop on
//! top of a backward Skorokhod construction, approximates the linear-obstacle
//! case by penalized mean-field BSDEs, and cross-validates everything through
//! a diagnostics suite (flat-off residuals, constraint audits, a sup-inf game
//! value, sandwich bounds, and compensator stability estimates).

pub mod boundary;
pub mod cli;
pub mod condexp;
pub mod diagnostics;
pub mod dmr;
pub mod driver;
pub mod error;
pub mod output;
pub mod loss;
pub mod paths;
pub mod penalized;
pub mod scenario;
pub mod skorokhod;
pub mod stats;
pub mod terminal;
pub mod timefn;

pub use error::{Error, Result};
