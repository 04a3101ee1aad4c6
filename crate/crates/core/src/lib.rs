//! Simulation and analysis of superradiant lasers in which only a fraction
//! of the atoms is incoherently driven.
//!
//! The crate provides the reduced and with-cavity mean-field equations, the
//! second-order cumulant equations for finite atom numbers, emission spectra
//! from the quantum regression theorem, lasing thresholds, and the sweep
//! harness behind the `superradiant` command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cumulant;
pub mod harness;
pub mod integrate;
pub mod meanfield;
pub mod model;
pub mod spectrum;

pub use model::{CumulantState, LorentzianFit, MeanFieldState, SpectrumGrid, SystemParams, TravelingWaveSolution};
