//! Continuous-time Kalman filtering built from the conditional
//! characteristic function.
//!
//! The crate covers three filter families over a common linear-algebra
//! kernel:
//!
//! - [`kf_cd`]: continuous state, discrete measurements (moment ODEs between
//!   observations, Bayes update at observation instants),
//! - [`kf_cc`]: continuous state, continuous measurements (Kalman–Bucy),
//! - [`kf_bilinear`]: bilinear Stratonovich state equation with continuous
//!   measurements, which contains the Kalman–Bucy filter as the `B = 0` case.
//!
//! Each filter is also available in its Kronecker/vec form. [`sdesim`]
//! produces ground truth under Itô and Stratonovich calculus, and
//! [`cfverify`] checks the characteristic-function identities the filters
//! are derived from.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfverify;
mod csvout;
pub mod error;
pub mod kf_bilinear;
pub mod kf_cc;
pub mod kf_cd;
pub mod models;
pub mod numkit;
pub mod sdesim;
pub mod trajectory;

pub use error::{Error, Result};
pub use models::{
    BilinearStateModel, ContinuousMeasurementModel, DiscreteMeasurementModel, GaussianBelief,
    LinearStateModel, TimeFn,
};
pub use numkit::{Matrix, Vector};
pub use trajectory::{BeliefTag, FilterTrajectory, Innovation};
