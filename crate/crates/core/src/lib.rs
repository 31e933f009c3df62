//! Mixtures of experts with normal or skew-t experts and multinomial-logistic
//! gating, fitted by expectation conditional maximization.
//!
//! The layers build on each other: [`specfun`] and [`dist`] provide densities,
//! [`model`] the parameter types and likelihood, [`estep`] and [`mstep`] the
//! two halves of an iteration, [`ecm`] the driver, and [`predict`],
//! [`select`] and [`sim`] work with fitted models. [`io`] and [`cli`] handle
//! files and the command line.

pub mod cli;
pub mod dist;
pub mod ecm;
pub mod error;
pub mod estep;
pub mod io;
pub mod model;
pub mod mstep;
pub mod predict;
pub mod select;
pub mod sim;
pub mod specfun;

pub use error::{Error, Result};
