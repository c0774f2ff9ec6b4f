//! Safe imitation learning on the inverted pendulum.
//!
//! The novice is an ensemble of small MLPs whose prediction variance
//! ("doubt") gates when it may act in a DAgger loop; the expert is a
//! saturated feedback-linearization controller. The crate also ships the
//! Gaussian-process baseline the ensembles approximate, permitted-set and
//! basin-of-attraction analyses, and the `explab` experiment runner.

pub mod analysis;
pub mod dagger;
pub mod error;
pub mod experiments;
pub mod gp;
pub mod grid;
pub mod nn;
pub mod pendulum;
pub mod report;
pub mod riccati;
pub mod seeds;
pub mod uncertainty;

pub use error::{Error, Result};
