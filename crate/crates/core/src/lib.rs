//! Start-up transient control workbench for a gas-generator-cycle rocket engine surrogate.
//!
//! Pipeline: [`engine`] model and calibration, [`refgen`] trim, [`linearize`] and
//! [`terminal`] ingredients, [`scenarios`] disturbance set, [`mpc`] robust controller on the
//! [`qcqp`] interior-point solver, [`baselines`], and the [`simloop`] harness.

pub mod baselines;
pub mod config;
pub mod constraints;
pub mod engine;
pub mod error;
pub mod linearize;
pub mod mpc;
pub mod qcqp;
pub mod refgen;
pub mod report;
pub mod scenarios;
pub mod simloop;
pub mod terminal;

pub use error::{Error, Result};
